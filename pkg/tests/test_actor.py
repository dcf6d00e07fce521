from dataclasses import replace
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sc3loop import verify
from sc3loop.actor import (CriticContext, TrainConfig, infer, init_state, loac_run, run_epoch,
                           select_best)
from sc3loop.actor.checkpoint import (CheckpointVersionError, load_policy, load_state,
                                      save_policy)
from sc3loop.actor.network import Adam, PairingPolicy, column_softmax, train_step
from sc3loop.actor.replay import ReplayBuffer
from sc3loop.actor.sampler import greedy_pairing, sample_pairings, selection_probabilities
from sc3loop.actor.traits import (ColumnScale, NormalizationRecord, normalize_traits,
                                  raw_traits)
from sc3loop.baselines import exhaustive_search
from sc3loop.channel import realize_channels
from sc3loop.oracles import enumerate_pairings
from sc3loop.rng import stream
from sc3loop.scenario import bundled, load_scenario

SMALL = dict(enc_dim=8, hidden=(16, 8, 4))


@pytest.fixture(scope="module")
def desk():
    return load_scenario(bundled(), scale="desk")


@pytest.fixture(scope="module")
def ctx(desk):
    return CriticContext(desk.topology, desk.env, desk.budgets, desk.loops, desk.solve_options())


# -- traits

def test_log_column_endpoints_and_midpoint():
    c = ColumnScale(2.0, 32.0, "log")
    np.testing.assert_allclose(c.apply([2.0, 32.0, 8.0]), [0.0, 1.0, 0.5])
    gamma = ColumnScale(50.0, 500.0, "log")
    assert gamma.apply(158.1) == pytest.approx(0.5, abs=1e-4)
    assert ColumnScale(10.0, 100.0, "linear").apply(55.0) == pytest.approx(0.5)


def test_log_column_rejects_nonpositive_and_constant_maps_to_half():
    with pytest.raises(ValueError):
        ColumnScale(1.0, 2.0, "log").apply([0.0])
    assert ColumnScale(3.0, 3.0, "log").apply(3.0) == 0.5
    tm = normalize_traits(np.array([[1.0, 5.0], [4.0, 5.0]]), np.array([[2.0, 7.0]]))
    assert np.all(tm.sensor[:, 1] == 0.5)
    np.testing.assert_allclose(tm.sensor[:, 0], [0.0, 1.0])
    with pytest.raises(ValueError):
        normalize_traits(np.array([[-1.0, 5.0], [4.0, 5.0]]), np.array([[2.0, 7.0]]))


def test_frozen_record_keeps_traits_in_unit_interval(desk):
    norm = NormalizationRecord.from_scenario(desk.topology, desk.env)
    for e in range(50):
        ch = realize_channels(desk.topology, desk.env, 3, epoch=e)
        tm = normalize_traits(*raw_traits(desk.topology, ch), norm)
        assert tm.sensor.min() >= 0 and tm.sensor.max() <= 1
        assert tm.actuator.min() >= 0 and tm.actuator.max() <= 1
    assert NormalizationRecord.from_dict(norm.to_dict()) == norm


# -- forward pass and masking

def test_column_softmax_examples():
    np.testing.assert_allclose(column_softmax(np.zeros((4, 1))), np.full((4, 1), 0.25))
    y = column_softmax(np.zeros((3, 1)), np.array([[True], [True], [False]]))
    np.testing.assert_allclose(y[:, 0], [0.5, 0.5, 0.0])
    assert y[2, 0] == 0.0
    with pytest.raises(ValueError):
        column_softmax(np.zeros((2, 2)), np.array([[True, False], [True, False]]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_masked_columns_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    raw = rng.normal(scale=5, size=(6, 3))
    mask = rng.random((6, 3)) < 0.5
    mask[rng.integers(6, size=3), np.arange(3)] = True
    y = column_softmax(raw, mask)
    np.testing.assert_allclose(y.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(y[~mask] == 0.0)


def test_forward_shapes_and_determinism(ctx):
    pol = PairingPolicy.initialize(4)
    assert pol.widths == (128, 512, 256, 128)
    xs = np.random.default_rng(0).random((ctx.topology.S, 2))
    xa = np.random.default_rng(1).random((ctx.topology.K, 2))
    y1, raw1 = pol.forward(xs, xa, ctx.mask)
    y2, raw2 = PairingPolicy.initialize(4).forward(xs, xa, ctx.mask)
    assert raw1.shape == (ctx.topology.S, ctx.topology.K)
    assert y1.tobytes() == y2.tobytes() and raw1.tobytes() == raw2.tobytes()


# -- sampler

def test_selection_probabilities_example():
    p = selection_probabilities([0.2, 0.3, 0.5], [0, 1, 2], {2})
    np.testing.assert_allclose(p, [0.4, 0.6, 0.0])


def test_forced_matching_single_result():
    sets = ((0,), (0, 1), (1, 2))     # only (0, 1, 2) is one-to-one
    found, short = sample_pairings(np.ones((3, 3)), sets, 5, 20, np.random.default_rng(0))
    assert found == [(0, 1, 2)]
    assert short


def test_sampled_pairings_valid_and_enumerated(ctx):
    sets = ctx.topology.effective_sets
    allp = set(enumerate_pairings(sets))
    rng = np.random.default_rng(2)
    scores = column_softmax(rng.normal(size=(ctx.topology.S, ctx.topology.K)))
    found, _ = sample_pairings(scores, sets, 32, 100, rng)
    assert len(found) == len(set(found))
    for p in found:
        assert len(set(p)) == len(p)
        assert all(s in sets[k] for k, s in enumerate(p))
        assert p in allp
    g = greedy_pairing(scores, sets, rng)
    assert g in allp


def test_sampler_argument_checks():
    with pytest.raises(ValueError):
        sample_pairings(np.ones((2, 1)), ((0, 1),), 0, 5, np.random.default_rng(0))


def test_sampler_frequencies():
    chk = verify.check_sampler(vectors=3, draws=30_000, tol=0.015)
    assert chk.passed, chk.line()


# -- loss, gradient, optimizer

def _batch(S=5, K=3, G=4, seed=0):
    rng = np.random.default_rng(seed)
    mask = np.ones((S, K), dtype=bool)
    xs, xa = rng.random((G, S, 2)), rng.random((G, K, 2))
    targets = np.array([rng.choice(S, K, replace=False) for _ in range(G)])
    return xs, xa, mask, targets


def test_loss_zero_when_targets_forced():
    S, K = 3, 3
    pol = PairingPolicy.initialize(0, **SMALL)
    mask = np.eye(S, dtype=bool)
    xs, xa = np.random.default_rng(0).random((2, S, 2)), np.random.default_rng(1).random((2, K, 2))
    assert pol.loss(xs, xa, mask, np.array([[0, 1, 2]] * 2)) == 0.0


def test_loss_of_uniform_policy():
    pol = PairingPolicy.initialize(0, **SMALL)
    for k in pol.params:
        pol.params[k][...] = 0.0
    mask = np.array([[1, 1, 0], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=bool)
    xs, xa = np.random.default_rng(0).random((3, 4, 2)), np.random.default_rng(1).random((3, 3, 2))
    targets = np.array([[0, 2, 1], [1, 3, 2], [2, 0, 3]])
    expected = np.mean(np.log(mask.sum(axis=0)))
    assert pol.loss(xs, xa, mask, targets) == pytest.approx(expected, rel=1e-12)


def test_masked_target_rejected():
    pol = PairingPolicy.initialize(0, **SMALL)
    xs, xa, mask, targets = _batch()
    mask[targets[0, 0], 0] = False
    with pytest.raises(ValueError):
        pol.loss_and_grad(xs, xa, mask, targets)
    with pytest.raises(ValueError):
        pol.loss(xs, xa, mask, targets)


def test_gradient_matches_finite_differences():
    chk = verify.check_gradient(weights=20)
    assert chk.passed, chk.line()


def test_overfit_single_batch():
    pol = PairingPolicy.initialize(1)
    opt = Adam(pol.params)
    xs, xa, mask, targets = _batch(G=2)
    losses = [train_step(pol, opt, xs, xa, mask, targets, 1e-3) for _ in range(100)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


# -- replay and schedules

def test_replay_fifo_and_capacity():
    buf = ReplayBuffer(3, 2, 1)
    for i in range(5):
        buf.push(np.full((2, 2), i), np.full((1, 2), i), [i % 2])
    assert len(buf) == 3
    assert [int(buf.xs[j][0, 0]) for j in buf.ordered()] == [2, 3, 4]
    xs, _, _ = buf.sample(10, np.random.default_rng(0))
    assert sorted(int(x[0, 0]) for x in xs) == [2, 3, 4]
    again = ReplayBuffer.from_state(3, buf.state())
    assert np.array_equal(again.xs, buf.xs) and again.head == buf.head


def test_schedules():
    cfg = TrainConfig()
    for e in (0, 255, 256, 511, 512, 1023, 1024, 1499, 3000):
        assert cfg.lr_at(e) == pytest.approx(1e-3 * (1 / math.sqrt(2)) ** (e // 256))
        assert cfg.candidates_at(e) == max(2, 32 // 2 ** (e // 512))
    assert cfg.candidates_at(10_000) == 2
    with pytest.raises(ValueError):
        TrainConfig(I_min=1)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_select_best_ties_and_infeasible():
    assert select_best([3.0, 1.0, 1.0, 2.0]) == 1
    assert select_best([math.inf, math.inf]) is None
    assert select_best([math.inf, 5.0]) == 1
    assert select_best([]) is None


# -- training loop

def _cfg(**kw):
    base = dict(epochs=12, batch=4, buffer_capacity=8, I_init=4, I_halve_period=4,
                lr_decay_period=4, infer_samples=4, **SMALL)
    base.update(kw)
    return TrainConfig(**base)


def test_stored_target_is_cheapest_candidate(ctx):
    st_ = init_state(ctx, _cfg(), 5)
    rec = run_epoch(ctx, st_)
    ch = realize_channels(ctx.topology, ctx.env, 5, epoch=0, name="train_channel",
                          betas=ctx.betas)
    tm = normalize_traits(*raw_traits(ctx.topology, ch), st_.norm)
    cands, _ = sample_pairings(column_softmax(PairingPolicy.initialize(5, **SMALL).scores(
        tm.sensor, tm.actuator)), ctx.topology.effective_sets, 4, 100, stream(5, "sampler", 0))
    costs = [ctx.score(p, ch)[0] for p in cands]
    assert rec.pairing == cands[select_best(costs)]
    assert tuple(st_.buffer.targets[0]) == rec.pairing
    assert rec.best_cost == min(costs)


def test_seeded_runs_identical(ctx):
    a = loac_run(ctx, _cfg(), 9)
    b = loac_run(ctx, _cfg(), 9)
    assert [r.__dict__ for r in a.records][:4] == [r.__dict__ for r in b.records][:4]
    la = [r.loss for r in a.records]
    lb = [r.loss for r in b.records]
    assert np.array_equal(np.array(la), np.array(lb), equal_nan=True)
    assert sum(np.isfinite(la)) > 0
    for k in a.policy.params:
        assert a.policy.params[k].tobytes() == b.policy.params[k].tobytes()


def test_resume_matches_uninterrupted(ctx, tmp_path):
    full = loac_run(ctx, _cfg(), 3)
    half = loac_run(ctx, _cfg(), 3, until=6)
    path = tmp_path / "ck.npz"
    save_policy(path, half.policy, half.norm, half.cfg, 3, state=half)
    resumed = loac_run(ctx, _cfg(), 3, state=load_state(path))
    assert resumed.epoch == full.epoch == 12
    for r1, r2 in zip(full.records, resumed.records):
        assert r1.pairing == r2.pairing and r1.best_cost == r2.best_cost
        assert (r1.loss == r2.loss) or (math.isnan(r1.loss) and math.isnan(r2.loss))
    for k in full.policy.params:
        assert full.policy.params[k].tobytes() == resumed.policy.params[k].tobytes()


def test_saturated_candidates_reach_exhaustive_optimum(desk):
    topo = desk.topology
    keep = [0, 1]
    sub = replace(topo, actuators=tuple(topo.actuators[k] for k in keep),
                  effective_sets=tuple(topo.effective_sets[k] for k in keep))
    n = len(list(enumerate_pairings(sub.effective_sets)))
    ctx2 = CriticContext(sub, desk.env, desk.budgets, desk.loops, desk.solve_options())
    st_ = loac_run(ctx2, _cfg(epochs=3, I_init=n, I_min=max(2, n), N_max=2000), 1)
    for rec in st_.records:
        ch = realize_channels(sub, desk.env, 1, epoch=rec.epoch, name="train_channel",
                              betas=ctx2.betas)
        pairing, alloc = exhaustive_search(sub, ch, desk.budgets, desk.loops)
        assert rec.candidates == n
        assert rec.best_cost == pytest.approx(alloc.total_cost, rel=1e-12)


def test_infer_returns_feasible_pairing(ctx):
    st_ = loac_run(ctx, _cfg(epochs=2), 2)
    ch = realize_channels(ctx.topology, ctx.env, 0, name="eval")
    pairing, alloc, n = infer(ctx, st_.policy, st_.norm, ch, np.random.default_rng(0), 4)
    assert pairing is not None and alloc.feasible
    assert 1 <= n <= 5


# -- checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path):
    pol = PairingPolicy.initialize(0, **SMALL)
    norm = NormalizationRecord((ColumnScale(1e-12, 1e-8, "log"), ColumnScale(50, 500, "log")),
                               (ColumnScale(1e-12, 1e-8, "log"), ColumnScale(10, 60, "linear")))
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    save_policy(p1, pol, norm, _cfg(), 0)
    save_policy(p2, pol, norm, _cfg(), 0)
    assert p1.read_bytes() == p2.read_bytes()
    got, got_norm, meta = load_policy(p1)
    assert got_norm == norm and meta["seed"] == 0
    for k in pol.params:
        assert got.params[k].dtype == np.float64
        assert got.params[k].tobytes() == pol.params[k].tobytes()
    with pytest.raises(ValueError):
        load_state(p1)


def test_checkpoint_version_mismatch(tmp_path, monkeypatch):
    import sc3loop.actor.checkpoint as ck
    pol = PairingPolicy.initialize(0, **SMALL)
    norm = NormalizationRecord((ColumnScale(1, 2, "log"),) * 2, (ColumnScale(1, 2, "log"),) * 2)
    path = tmp_path / "old.npz"
    monkeypatch.setattr(ck, "FORMAT_VERSION", 0)
    save_policy(path, pol, norm)
    monkeypatch.undo()
    with pytest.raises(CheckpointVersionError):
        load_policy(path)
