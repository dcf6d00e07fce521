"""Actor-critic training: the policy proposes pairings, the allocation
solver scores them, and the best one becomes a supervised target."""
from dataclasses import asdict, dataclass, field
import logging
import math

import numpy as np

from ..channel import large_scale_gains, realize_channels
from ..critic import (INFEASIBLE, InfeasibleStability, LoopBudget, SolveOptions,
                      SolverFailure, solve_p3)
from ..rng import stream
from .network import Adam, PairingPolicy, column_softmax, train_step
from .replay import ReplayBuffer
from .sampler import greedy_pairing, sample_pairings
from .traits import NormalizationRecord, normalize_traits, raw_traits

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1500
    I_init: int = 32
    I_halve_period: int = 512
    I_min: int = 2
    N_max: int = 100
    batch: int = 128
    lr_init: float = 1e-3
    lr_decay: float = 1.0 / math.sqrt(2.0)
    lr_decay_period: int = 256
    buffer_capacity: int = 1280
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    enc_dim: int = 128
    hidden: tuple = (512, 256, 128)
    slope: float = 0.1
    infer_samples: int = 16

    def __post_init__(self):
        ints = (self.epochs, self.I_init, self.I_halve_period, self.N_max, self.batch,
                self.lr_decay_period, self.buffer_capacity)
        if min(ints) < 1 or self.lr_init <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("training settings must be positive")
        if self.I_min < 2:
            raise ValueError("I_min must be at least 2")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def candidates_at(self, epoch):
        return max(self.I_min, self.I_init // 2 ** (epoch // self.I_halve_period))

    def lr_at(self, epoch):
        return self.lr_init * self.lr_decay ** (epoch // self.lr_decay_period)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class CriticContext:
    """Everything the allocation solver needs besides pairing and channels."""
    topology: object
    env: object
    budgets: object
    loops: object = LoopBudget()
    opts: SolveOptions = field(default_factory=SolveOptions)

    def __post_init__(self):
        self.betas = large_scale_gains(self.topology, self.env)
        self.mask = self.topology.mask()

    def score(self, pairing, channels):
        """(cost, allocation) with the infeasible sentinel on failure."""
        try:
            alloc = solve_p3(pairing, self.topology, channels, self.budgets, self.loops,
                             self.opts)
        except (InfeasibleStability, SolverFailure) as exc:
            log.debug("candidate %s infeasible: %s", pairing, exc)
            return INFEASIBLE, None
        return alloc.total_cost, alloc


@dataclass
class EpochRecord:
    epoch: int
    candidates: int
    shortfall: bool
    feasible: int
    best_cost: float
    pairing: tuple
    loss: float
    lr: float


@dataclass
class TrainState:
    cfg: TrainConfig
    seed: int
    policy: PairingPolicy
    adam: Adam
    buffer: ReplayBuffer
    norm: NormalizationRecord
    records: list = field(default_factory=list)
    epoch: int = 0            # next epoch to run


def init_state(ctx: CriticContext, cfg: TrainConfig, seed: int) -> TrainState:
    policy = PairingPolicy.initialize(seed, cfg.enc_dim, cfg.hidden, cfg.slope)
    return TrainState(cfg=cfg, seed=int(seed), policy=policy,
                      adam=Adam(policy.params, cfg.beta1, cfg.beta2, cfg.adam_eps),
                      buffer=ReplayBuffer(cfg.buffer_capacity, ctx.topology.S, ctx.topology.K),
                      norm=NormalizationRecord.from_scenario(ctx.topology, ctx.env))


def select_best(costs):
    """Index of the lowest cost, first index on ties; None if all infinite."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0 or not np.isfinite(costs).any():
        return None
    return int(np.argmin(costs))


def run_epoch(ctx: CriticContext, st: TrainState) -> EpochRecord:
    e, cfg = st.epoch, st.cfg
    topo = ctx.topology
    channels = realize_channels(topo, ctx.env, st.seed, epoch=e, name="train_channel",
                                betas=ctx.betas)
    traits = normalize_traits(*raw_traits(topo, channels), st.norm)
    raw = st.policy.scores(traits.sensor, traits.actuator)
    I = cfg.candidates_at(e)
    cands, shortfall = sample_pairings(column_softmax(raw), topo.effective_sets, I, cfg.N_max,
                                       stream(st.seed, "sampler", e))
    costs = [ctx.score(p, channels)[0] for p in cands]
    best = select_best(costs)
    if best is not None:
        st.buffer.push(traits.sensor, traits.actuator, cands[best])
    loss = math.nan
    lr = cfg.lr_at(e)
    if len(st.buffer) >= cfg.batch:
        xs, xa, tg = st.buffer.sample(cfg.batch, stream(st.seed, "batch", e))
        loss = train_step(st.policy, st.adam, xs, xa, ctx.mask, tg, lr)
    rec = EpochRecord(epoch=e, candidates=len(cands), shortfall=shortfall,
                      feasible=int(np.isfinite(costs).sum()),
                      best_cost=INFEASIBLE if best is None else float(costs[best]),
                      pairing=None if best is None else tuple(cands[best]), loss=loss, lr=lr)
    st.records.append(rec)
    st.epoch += 1
    return rec


def loac_run(ctx: CriticContext, cfg: TrainConfig, seed: int, state: TrainState = None,
             until: int = None, on_epoch=None) -> TrainState:
    """Train (or resume training) up to epoch ``until`` (default cfg.epochs)."""
    st = state if state is not None else init_state(ctx, cfg, seed)
    stop = st.cfg.epochs if until is None else min(until, st.cfg.epochs)
    while st.epoch < stop:
        rec = run_epoch(ctx, st)
        if on_epoch is not None:
            on_epoch(rec)
    return st


def infer(ctx: CriticContext, policy: PairingPolicy, norm: NormalizationRecord, channels,
          rng, samples=16, greedy=True):
    """Best pairing among the greedy decode and ``samples`` sampled candidates.

    Returns (pairing, allocation, n_candidates); pairing is None when no
    candidate is feasible.
    """
    topo = ctx.topology
    traits = normalize_traits(*raw_traits(topo, channels), norm)
    probs = column_softmax(policy.scores(traits.sensor, traits.actuator))
    cands = []
    if greedy:
        g = greedy_pairing(probs, topo.effective_sets, rng)
        if g is not None:
            cands.append(g)
    if samples > 0:
        extra, _ = sample_pairings(probs, topo.effective_sets, samples, 100, rng)
        cands += [c for c in extra if c not in cands]
    scored = [ctx.score(p, channels) for p in cands]
    best = select_best([c for c, _ in scored])
    if best is None:
        return None, None, len(cands)
    return cands[best], scored[best][1], len(cands)
