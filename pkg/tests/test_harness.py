import csv
from dataclasses import replace
import math

import numpy as np
import pytest

from sc3loop import cli, harness
from sc3loop.actor.checkpoint import load_policy
from sc3loop.plotting import EmptyInputError, moving_average, plot_summary, plot_training
from sc3loop.scenario import bundled, load_scenario

SMALL_NET = dict(epochs=10, batch=4, buffer_capacity=8, I_init=4, enc_dim=8, hidden=(16, 8, 4))


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def tiny():
    sc = load_scenario(bundled(), scale="desk")
    sc.train = replace(sc.train, **SMALL_NET)
    sc.experiment = replace(sc.experiment, realizations=3, values=(5e5, 1.2e6),
                            schemes=("comm_first", "comp_first"))
    return sc


@pytest.fixture(scope="module")
def sweep_out(tmp_path_factory):
    sc = load_scenario(bundled(), scale="desk")
    sc.experiment = replace(sc.experiment, realizations=3, values=(5e5, 1.2e6))
    out = tmp_path_factory.mktemp("sweep")
    rows, summary, failed = harness.run_sweep(sc, out, schemes=("comm_first", "comp_first"),
                                              jobs=1)
    return out, rows, summary, failed


def test_sweep_rows_and_summary(sweep_out):
    out, rows, summary, failed = sweep_out
    recs, summ = _read(out / "records.csv"), _read(out / "summary.csv")
    assert len(recs) == 12 and len(summ) == 4 and failed == 0
    for r in recs:
        assert r["scheme"] in ("comm_first", "comp_first")
        assert r["seed"] == "0" and float(r["value"]) in (5e5, 1.2e6)
        if r["feasible"] == "1":
            total = sum(float(r[f"cost_{k}"]) for k in range(3))
            assert float(r["total_cost"]) == pytest.approx(total, rel=1e-9)
    for s in summ:
        costs = [float(r["total_cost"]) for r in recs
                 if r["scheme"] == s["scheme"] and r["value"] == s["value"] and r["feasible"] == "1"]
        assert int(s["n_feasible"]) == len(costs)
        assert abs(float(s["mean_cost"]) - np.mean(costs)) <= 1e-12 * np.mean(costs)
    assert (out / "summary.svg").exists() and (out / "timings.json").exists()


def test_sweep_deterministic_across_jobs(sweep_out, tmp_path):
    out, *_ = sweep_out
    sc = load_scenario(bundled(), scale="desk")
    sc.experiment = replace(sc.experiment, realizations=3, values=(5e5, 1.2e6))
    harness.run_sweep(sc, tmp_path, schemes=("comm_first", "comp_first"), jobs=2, plot=False)
    for name in ("records.csv", "summary.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_unknown_scheme_is_an_error(tiny, tmp_path):
    with pytest.raises(ValueError, match="greedy"):
        harness.run_sweep(tiny, tmp_path, schemes=("greedy",))


def test_status_semantics():
    assert harness._status(True, "") == "ok"
    assert harness._status(False, "InfeasibleStability: loop 0") == "infeasible"
    assert harness._status(False, "SolverFailure: no progress") == "failed"
    assert harness._status(False, "!KeyError: 3") == "failed"


def test_summarize_counts_infeasible():
    rows = [{"scheme": "a", "axis": "x", "value": 1.0, "feasible": f, "total_cost": c}
            for f, c in ((True, 2.0), (True, 4.0), (False, math.inf))]
    (s,) = harness.summarize(rows)
    assert (s["n"], s["n_feasible"], s["mean_cost"]) == (3, 2, 3.0)
    assert s["stderr_cost"] == pytest.approx(1.0)


def test_resolve_jobs_env(monkeypatch):
    monkeypatch.setenv(harness.JOBS_ENV, "3")
    assert harness.resolve_jobs(1) == 3
    monkeypatch.setenv(harness.JOBS_ENV, "x")
    with pytest.raises(ValueError):
        harness.resolve_jobs()
    monkeypatch.delenv(harness.JOBS_ENV)
    assert harness.resolve_jobs() == 1
    with pytest.raises(ValueError):
        harness.resolve_jobs(0)


def test_train_writes_rows_and_checkpoint(tiny, tmp_path):
    st = harness.train_command(tiny, tmp_path, seed=0)
    rows = _read(tmp_path / "train.csv")
    assert [int(r["epoch"]) for r in rows] == list(range(10)) and st.epoch == 10
    policy, norm, meta = load_policy(tmp_path / "checkpoint.npz")
    assert meta["epoch"] == 10 and "fingerprint" in meta["extra"]


def test_train_resume_identical(tiny, tmp_path):
    harness.train_command(tiny, tmp_path / "full", seed=0)
    harness.train_command(tiny, tmp_path / "half", seed=0, until=5)
    harness.train_command(tiny, tmp_path / "half", seed=0,
                          resume=tmp_path / "half" / "checkpoint.npz")
    for name in ("train.csv", "checkpoint.npz"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "half" / name).read_bytes()


def test_evaluate_policy(tiny, tmp_path):
    harness.train_command(tiny, tmp_path, seed=0)
    rows, summary, failed = harness.evaluate(tiny, tmp_path / "checkpoint.npz", tmp_path / "ev",
                                             schemes=("loac", "comm_first"))
    assert len(rows) == 6 and [s["scheme"] for s in summary] == ["loac", "comm_first"]
    assert failed == 0


def test_plots(sweep_out, tmp_path):
    out, *_ = sweep_out
    svg = plot_summary(out / "summary.csv", tmp_path / "s.svg")
    text = svg.read_text()
    assert "comm-first" in text and "comp-first" in text
    assert plot_summary(out / "summary.csv", tmp_path / "t.svg").read_bytes() == svg.read_bytes()
    train = tmp_path / "train.csv"
    train.write_text("epoch,loss\n0,\n1,0.5\n2,0.4\n")
    assert plot_training(train, tmp_path / "loss.svg").exists()
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyInputError):
        plot_training(empty, tmp_path / "x.svg")


def test_five_series_chart(tmp_path):
    rows = [{"scheme": s, "axis": "bandwidth", "value": v, "n": 1, "n_feasible": 1,
             "mean_cost": c + i, "stderr_cost": 0.1}
            for i, s in enumerate(("loac", "exhaustive", "comm_first", "comp_first", "cca"))
            for v, c in ((5e5, 4.0), (1e6, 3.0))]
    harness.write_csv(tmp_path / "summary.csv", harness.SUMMARY_FIELDS, rows)
    text = plot_summary(tmp_path / "summary.csv", tmp_path / "s.svg").read_text()
    for label in ("LOAC", "exhaustive search", "comm-first", "comp-first", "CCA"):
        assert label in text


def test_moving_average_ignores_nan():
    np.testing.assert_allclose(moving_average([np.nan, 1.0, 3.0, 5.0], 2), [np.nan, 1, 2, 4])


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["gen-topology", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "topology.json").exists()
    assert cli.main(["gen-topology", "--config", str(tmp_path / "nope.scenario")]) == 2
    assert cli.main(["sweep", "--out", str(tmp_path), "--schemes", "greedy"]) == 2
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert cli.main(["plot", str(empty)]) == 2
    assert "empty file" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--epochs"])
    assert exc.value.code == 2


def test_cli_sweep_and_train(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.JOBS_ENV, "1")
    rc = cli.main(["sweep", "--out", str(tmp_path / "s"), "--schemes", "comm_first",
                   "--realizations", "2", "--values", "5e5", "--jobs", "4"])
    assert rc == 0 and len(_read(tmp_path / "s" / "records.csv")) == 2
    rc = cli.main(["train", "--out", str(tmp_path / "t"), "--epochs", "3"])
    assert rc == 0 and (tmp_path / "t" / "loss.svg").exists()
    assert len(_read(tmp_path / "t" / "train.csv")) == 3
