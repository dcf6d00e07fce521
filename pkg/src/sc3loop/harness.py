"""Experiment orchestration: training runs, scheme sweeps and CSV output.

Every emitted CSV is a pure function of (scenario, master seed): rows are
written in a fixed order, floats via ``repr`` and wall-clock timings go to
a separate JSON file.
"""
import csv
from dataclasses import replace
import hashlib
import json
import logging
import math
import multiprocessing
import os
from pathlib import Path
import time

import numpy as np

from .actor.checkpoint import load_policy, load_state, save_policy
from .actor.loac import CriticContext, loac_run, infer
from .baselines import SCHEMES, SchemeParams, run_baseline
from .channel import realize_channels, with_sensing_rate
from .critic import INFEASIBLE, InfeasibleStability, SolverFailure
from .rng import stream

log = logging.getLogger(__name__)

JOBS_ENV = "SC3_JOBS"
RECORD_FIELDS = ("scheme", "axis", "value", "realization", "seed", "status", "feasible",
                 "total_cost", "pairing", "error")
SUMMARY_FIELDS = ("scheme", "axis", "value", "n", "n_feasible", "mean_cost", "stderr_cost")
TRAIN_FIELDS = ("epoch", "candidates", "shortfall", "feasible", "best_cost", "pairing", "loss",
                "lr")


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (tuple, list)):
        return "-".join(str(int(v)) for v in x)
    return str(x)


def write_csv(path, fieldnames, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for r in rows:
            w.writerow([fmt(r.get(k)) for k in fieldnames])


def resolve_jobs(jobs=None):
    """Worker count: the environment variable wins over the argument."""
    env = os.environ.get(JOBS_ENV)
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ValueError(f"{JOBS_ENV} must be an integer, got {env!r}") from None
    jobs = 1 if jobs is None else int(jobs)
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    return jobs


# ---------------------------------------------------------------- cells

class CellSetting:
    """Topology, budgets and critic context for one sweep value."""

    def __init__(self, sc, axis, value):
        self.axis, self.value = axis, value
        topo = sc.topology
        opts = sc.solve_options()
        budgets = sc.budgets
        if axis == "sensing_rate":
            topo = with_sensing_rate(topo, value)
            opts = replace(opts, sensing_cap=True)
        elif axis in ("bandwidth", "cpu", "dl_power"):
            budgets = replace(budgets, **{axis: float(value)})
        elif axis != "base":
            raise ValueError(f"unknown sweep axis {axis!r}")
        self.topology, self.budgets, self.opts = topo, budgets, opts
        self.ctx = CriticContext(topo, sc.env, budgets, sc.loops, opts)
        ex = sc.experiment
        self.params = SchemeParams(omega=ex.omega, margin=ex.margin, cap=ex.enumeration_cap,
                                   opts=opts)


def _status(feasible, error):
    """ok, infeasible (no stabilizing allocation exists for the scheme) or
    failed (numerical failure or unexpected error)."""
    if feasible:
        return "ok"
    if error.startswith(SolverFailure.__name__) or error.startswith("!"):
        return "failed"
    return "infeasible"


def run_cell(sc, setting: CellSetting, scheme, realization, seed, policy=None):
    """One (scheme, realization) evaluation; returns (row, elapsed seconds)."""
    start = time.perf_counter()
    channels = realize_channels(setting.topology, sc.env, seed, epoch=realization, name="eval",
                                betas=setting.ctx.betas)
    row = {"scheme": scheme, "axis": setting.axis, "value": setting.value,
           "realization": realization, "seed": seed}
    alloc, pairing, error = None, None, ""
    try:
        if scheme == "loac":
            pol, norm, samples, idx = policy
            pairing, alloc, _ = infer(setting.ctx, pol, norm, channels,
                                      stream(seed, "infer", idx, realization), samples=samples)
            if pairing is None:
                error = "InfeasibleStability: no candidate pairing stabilizes every loop"
        else:
            res = run_baseline(scheme, setting.topology, channels, setting.budgets, sc.loops,
                               setting.params)
            pairing, alloc, error = res.pairing, res.allocation, res.error
    except (InfeasibleStability, SolverFailure) as exc:
        error = f"{type(exc).__name__}: {exc}"
    except Exception as exc:    # recorded per row; the run continues
        log.exception("cell %s/%s/%s failed", scheme, setting.value, realization)
        error = f"!{type(exc).__name__}: {exc}"
    feasible = alloc is not None and alloc.feasible
    total = alloc.total_cost if alloc is not None else INFEASIBLE
    row.update(status=_status(feasible, error), feasible=feasible, total_cost=total,
               pairing=pairing, error=error)
    K = setting.topology.K
    for k in range(K):
        row[f"d_sc3_{k}"] = alloc.d_sc3[k] if alloc is not None else math.nan
        row[f"cost_{k}"] = alloc.cost[k] if alloc is not None else INFEASIBLE
    return row, time.perf_counter() - start


def record_fields(K):
    return RECORD_FIELDS + tuple(f"d_sc3_{k}" for k in range(K)) + \
        tuple(f"cost_{k}" for k in range(K))


def summarize(rows):
    """Mean and standard error of total cost over feasible rows per (scheme, value)."""
    groups = {}
    for r in rows:
        groups.setdefault((r["scheme"], r["axis"], r["value"]), []).append(r)
    out = []
    for (scheme, axis, value), rs in groups.items():
        costs = np.array([r["total_cost"] for r in rs if r["feasible"]], dtype=float)
        n_f = len(costs)
        mean = float(np.mean(costs)) if n_f else INFEASIBLE
        se = float(np.std(costs, ddof=1) / math.sqrt(n_f)) if n_f > 1 else math.nan
        out.append({"scheme": scheme, "axis": axis, "value": value, "n": len(rs),
                    "n_feasible": n_f, "mean_cost": mean, "stderr_cost": se})
    return out


# ------------------------------------------------------------- training

def training_rows(records):
    return [{"epoch": r.epoch, "candidates": r.candidates, "shortfall": r.shortfall,
             "feasible": r.feasible, "best_cost": r.best_cost, "pairing": r.pairing,
             "loss": r.loss, "lr": r.lr} for r in records]


def fingerprint(sc, axis, value, seed):
    blob = json.dumps({"scenario": sc.resolved, "budgets": repr(sc.budgets),
                       "train": sc.train.to_dict(), "axis": axis, "value": fmt(value),
                       "seed": int(seed)}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def train_command(sc, out_dir, seed, resume=None, until=None, setting=None, progress=None):
    """Run (or resume) LOAC training; writes train.csv and checkpoint.npz.

    Returns the final training state.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setting = setting or CellSetting(sc, "base", None)
    state = load_state(resume) if resume is not None else None
    if state is not None and state.seed != seed:
        log.warning("resuming with the checkpoint's seed %s instead of %s", state.seed, seed)
    st = loac_run(setting.ctx, sc.train, seed, state=state, until=until, on_epoch=progress)
    write_csv(out / "train.csv", TRAIN_FIELDS, training_rows(st.records))
    save_policy(out / "checkpoint.npz", st.policy, st.norm, st.cfg, st.seed, state=st,
                extra={"fingerprint": fingerprint(sc, setting.axis, setting.value, st.seed)})
    return st


def ensure_policy(sc, setting, seed, folder, progress=None):
    """Trained policy for a sweep value, reusing a matching finished checkpoint."""
    folder = Path(folder)
    ck = folder / "checkpoint.npz"
    fp = fingerprint(sc, setting.axis, setting.value, seed)
    if ck.exists():
        try:
            policy, norm, meta = load_policy(ck)
            if meta.get("extra", {}).get("fingerprint") == fp and \
                    meta.get("epoch") == sc.train.epochs:
                return policy, norm
        except (ValueError, OSError) as exc:
            log.warning("ignoring unreadable checkpoint %s: %s", ck, exc)
    t0 = time.perf_counter()
    st = train_command(sc, folder, seed, setting=setting, progress=progress)
    # wall time lives beside the checkpoint so the checkpoint stays deterministic
    (folder / "timing.json").write_text(json.dumps({"train_seconds":
                                                    time.perf_counter() - t0}))
    return st.policy, st.norm


# ---------------------------------------------------------------- sweeps

_WORK = {}


def _work(task):
    i, r = task
    w = _WORK
    setting = w["settings"][i]
    rows = []
    for scheme in w["schemes"]:
        pol = w["policies"].get(i)
        row, dt = run_cell(w["sc"], setting, scheme, r, w["seed"], pol)
        rows.append((row, dt))
    return i, r, rows


def _map(tasks, jobs):
    if jobs == 1 or len(tasks) <= 1:
        return [_work(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(min(jobs, len(tasks))) as pool:
        return pool.map(_work, tasks, chunksize=1)


def check_schemes(schemes):
    known = ("loac",) + SCHEMES
    bad = [s for s in schemes if s not in known]
    if bad:
        raise ValueError(f"unknown scheme(s) {', '.join(bad)}; choose from {', '.join(known)}")
    return tuple(schemes)


def run_sweep(sc, out_dir, seed=None, jobs=None, schemes=None, values=None, axis=None,
              progress=None, plot=True):
    """Every (sweep value, realization, scheme) cell; writes records.csv,
    summary.csv, timings.json and, when ``plot``, summary.svg.

    Returns (rows, summary rows, number of failed cells).
    """
    ex = sc.experiment
    seed = ex.seed if seed is None else int(seed)
    schemes = check_schemes(schemes or ex.schemes)
    axis = axis or ex.axis
    values = tuple(values if values is not None else ex.values)
    if not values:
        raise ValueError("the scenario defines no sweep values")
    jobs = resolve_jobs(jobs)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    settings = [CellSetting(sc, axis, v) for v in values]
    policies = {}
    train_time = {}
    if "loac" in schemes:
        for i, s in enumerate(settings):
            t0 = time.perf_counter()
            pol, norm = ensure_policy(sc, s, seed, out / "policies" / f"value_{i}", progress)
            policies[i] = (pol, norm, sc.train.infer_samples, i)
            train_time[fmt(s.value)] = time.perf_counter() - t0
    _WORK.clear()
    _WORK.update(sc=sc, settings=settings, schemes=schemes, seed=seed, policies=policies)
    tasks = [(i, r) for i in range(len(values)) for r in range(ex.realizations)]
    results = sorted(_map(tasks, jobs), key=lambda t: (t[0], t[1]))
    rows, timings = [], []
    for i, r, cell_rows in results:
        for row, dt in cell_rows:
            rows.append(row)
            timings.append({"scheme": row["scheme"], "value": fmt(row["value"]),
                            "realization": r, "seconds": dt})
    order = {s: j for j, s in enumerate(schemes)}
    rows.sort(key=lambda row: (values.index(row["value"]), order[row["scheme"]],
                               row["realization"]))
    K = sc.topology.K
    write_csv(out / "records.csv", record_fields(K), rows)
    summary = summarize(rows)
    write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
    (out / "timings.json").write_text(json.dumps({"cells": timings, "training": train_time},
                                                 indent=1))
    if plot:
        from .plotting import plot_summary
        plot_summary(out / "summary.csv", out / "summary.svg")
    failed = sum(1 for row in rows if row["status"] == "failed")
    return rows, summary, failed


def evaluate(sc, checkpoint, out_dir, seed=None, jobs=None, schemes=("loac",)):
    """Score a trained policy (and optional baselines) at the scenario's own
    budgets; same outputs as a one-value sweep."""
    ex = sc.experiment
    seed = ex.seed if seed is None else int(seed)
    schemes = check_schemes(schemes)
    policy, norm, _ = load_policy(checkpoint)
    setting = CellSetting(sc, "base", None)
    jobs = resolve_jobs(jobs)
    _WORK.clear()
    _WORK.update(sc=sc, settings=[setting], schemes=tuple(schemes), seed=seed,
                 policies={0: (policy, norm, sc.train.infer_samples, 0)})
    results = sorted(_map([(0, r) for r in range(ex.realizations)], jobs),
                     key=lambda t: t[1])
    rows = [row for _, _, cell in results for row, _ in cell]
    order = {s: j for j, s in enumerate(schemes)}
    rows.sort(key=lambda row: (order[row["scheme"]], row["realization"]))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "records.csv", record_fields(sc.topology.K), rows)
    summary = summarize(rows)
    write_csv(out / "summary.csv", SUMMARY_FIELDS, summary)
    failed = sum(1 for row in rows if row["status"] == "failed")
    return rows, summary, failed
