"""Command-line entry point: ``sc3loop <command> [options]``."""
import argparse
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__

log = logging.getLogger("sc3loop")


def _common(p):
    p.add_argument("--config", type=Path, required=False,
                   help="scenario file (default: the bundled table1.scenario)")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: from config)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--jobs", type=int, default=None,
                   help="worker processes (the SC3_JOBS environment variable overrides this)")
    p.add_argument("--scale", choices=("desk", "paper"), default="desk",
                   help="which scale block of the scenario to apply")


def build_parser():
    ap = argparse.ArgumentParser(prog="sc3loop", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-topology", help="write the resolved topology as JSON")
    _common(p)

    p = sub.add_parser("train", help="train the pairing policy")
    _common(p)
    p.add_argument("--resume", type=Path, help="resumable checkpoint to continue from")
    p.add_argument("--until", type=int, help="stop after this many epochs in total")
    p.add_argument("--epochs", type=int, help="override train.epochs")

    p = sub.add_parser("evaluate", help="score a trained policy over channel realizations")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--schemes", nargs="+", default=["loac"])
    p.add_argument("--realizations", type=int)

    p = sub.add_parser("sweep", help="run every scheme across the sweep values")
    _common(p)
    p.add_argument("--schemes", nargs="+")
    p.add_argument("--realizations", type=int)
    p.add_argument("--epochs", type=int, help="override train.epochs for the LOAC policies")
    p.add_argument("--axis", choices=("bandwidth", "cpu", "dl_power", "sensing_rate"))
    p.add_argument("--values", nargs="+", type=float)
    p.add_argument("--cpu", type=float, help="override the CPU budget (inf for unconstrained)")

    p = sub.add_parser("plot", help="render SVG charts from harness CSVs")
    p.add_argument("csv", type=Path, nargs="+")
    p.add_argument("--out", type=Path, default=None, help="output directory (default: beside CSV)")

    p = sub.add_parser("verify", help="run the oracle suites")
    p.add_argument("--quick", action="store_true", help="smaller sample counts")
    return ap


def _scenario(args, **overrides):
    from dataclasses import replace
    from .scenario import bundled, load_scenario
    sc = load_scenario(args.config or bundled(), scale=args.scale)
    if overrides.get("epochs"):
        sc.train = replace(sc.train, epochs=overrides["epochs"])
    ex = {}
    if overrides.get("realizations"):
        ex["realizations"] = overrides["realizations"]
    if overrides.get("axis"):
        ex["axis"] = overrides["axis"]
    if overrides.get("values"):
        ex["values"] = tuple(overrides["values"])
    if ex:
        sc.experiment = replace(sc.experiment, **ex)
    if overrides.get("cpu") is not None:
        sc.budgets = replace(sc.budgets, cpu=float(overrides["cpu"]))
    return sc


def cmd_gen_topology(args):
    sc = _scenario(args)
    t = sc.topology
    doc = {"eih_position": list(t.eih_position), "height": sc.env.height,
           "sensors": [{"position": list(s.position), "sensing_range": s.sensing_range,
                        "p_max": s.p_max, "gamma": s.gamma, "rho": s.rho,
                        "sensing_rate": None if math.isinf(s.sensing_rate) else s.sensing_rate}
                       for s in t.sensors],
           "actuators": [{"position": list(a.position), "entropy": a.control.entropy}
                         for a in t.actuators],
           "effective_sets": [list(s) for s in t.effective_sets],
           "provenance": sc.provenance}
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "topology.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(path)
    return 0


def _progress(every=100):
    def cb(rec):
        if rec.epoch % every == 0:
            log.info("epoch %d: %d candidates, best cost %.6g, loss %.4f", rec.epoch,
                     rec.candidates, rec.best_cost, rec.loss)
    return cb


def cmd_train(args):
    from .harness import train_command
    from .plotting import plot_training
    sc = _scenario(args, epochs=args.epochs)
    seed = sc.experiment.seed if args.seed is None else args.seed
    st = train_command(sc, args.out, seed, resume=args.resume, until=args.until,
                       progress=_progress())
    plot_training(args.out / "train.csv", args.out / "loss.svg")
    print(f"trained to epoch {st.epoch}; wrote {args.out / 'train.csv'} and "
          f"{args.out / 'checkpoint.npz'}")
    return 0


def cmd_evaluate(args):
    from .harness import evaluate
    sc = _scenario(args, realizations=args.realizations)
    rows, summary, failed = evaluate(sc, args.checkpoint, args.out, args.seed, args.jobs,
                                     tuple(args.schemes))
    for s in summary:
        print(f"{s['scheme']}: mean cost {s['mean_cost']:.6g} "
              f"({s['n_feasible']}/{s['n']} feasible)")
    return 1 if failed else 0


def cmd_sweep(args):
    from .harness import run_sweep
    sc = _scenario(args, epochs=args.epochs, realizations=args.realizations, axis=args.axis,
                   values=args.values, cpu=args.cpu)
    rows, summary, failed = run_sweep(sc, args.out, seed=args.seed, jobs=args.jobs,
                                      schemes=args.schemes, progress=_progress(500))
    for s in summary:
        print(f"{s['scheme']:>20} {s['value']!r:>12}: {s['mean_cost']:.6g} "
              f"({s['n_feasible']}/{s['n']} feasible)")
    if failed:
        print(f"{failed} cell(s) failed; see the error column of records.csv", file=sys.stderr)
    return 1 if failed else 0


def cmd_plot(args):
    from .plotting import plot_summary, plot_training, read_csv
    for path in args.csv:
        folder = args.out or path.parent
        folder.mkdir(parents=True, exist_ok=True)
        with open(path) as fh:
            header = fh.readline()
        target = folder / (path.stem + ".svg")
        if "mean_cost" in header:
            plot_summary(path, target)
        elif "loss" in header:
            plot_training(path, target)
        else:
            read_csv(path, ("mean_cost",))    # raises the missing-column error
        print(target)
    return 0


def cmd_verify(args):
    from . import verify
    if args.quick:
        checks = (lambda: verify.check_riccati_special(10),
                  verify.check_bound_closed_form,
                  lambda: verify.check_sampler(3, 20_000, tol=0.02),
                  verify.check_gradient,
                  lambda: verify.check_hungarian(20),
                  lambda: verify.check_critic_vs_grid(5),
                  lambda: verify.check_convexity(1000, 200))
    else:
        checks = verify.FAST_CHECKS
    results = verify.run_all(checks)
    return 0 if all(c.passed for c in results) else 1


COMMANDS = {"gen-topology": cmd_gen_topology, "train": cmd_train, "evaluate": cmd_evaluate,
            "sweep": cmd_sweep, "plot": cmd_plot, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    from .scenario import ScenarioError
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
