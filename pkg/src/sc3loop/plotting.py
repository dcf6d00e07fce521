"""Static SVG charts from the harness CSVs."""
import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_SVG_META = {"Date": None, "Creator": None}
plt.rcParams["svg.hashsalt"] = "sc3loop"

LABELS = {"loac": "LOAC", "exhaustive": "exhaustive search", "comm_first": "comm-first",
          "comp_first": "comp-first", "cca": "CCA", "qos": "QoS", "cca_da": "CCA-DA",
          "max_sum_rate": "max-sum rate", "max_min_rate": "max-min rate",
          "max_min_margin_rate": "max-min margin rate"}
AXIS_LABELS = {"bandwidth": "B_max (MHz)", "cpu": "f_max (GHz)", "dl_power": "p_max^d (W)",
               "sensing_rate": "sensing cycle rate (bits/cycle)"}
AXIS_SCALE = {"bandwidth": 1e-6, "cpu": 1e-9}


class EmptyInputError(ValueError):
    pass


def read_csv(path, required):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise EmptyInputError(f"{path}: empty file")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    return rows


def moving_average(x, window):
    """Trailing mean over ``window`` values, ignoring NaN entries."""
    x = np.asarray(x, dtype=float)
    ok = np.isfinite(x)
    c = np.concatenate([[0.0], np.cumsum(np.where(ok, x, 0.0))])
    n = np.concatenate([[0], np.cumsum(ok)])
    i = np.arange(1, len(x) + 1)
    lo = np.maximum(i - window, 0)
    cnt = n[i] - n[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, (c[i] - c[lo]) / np.maximum(cnt, 1), np.nan)


def _save(fig, out):
    fig.savefig(out, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_summary(summary_csv, out, schemes=None, title=None):
    """Mean cost against the sweep value, one labeled series per scheme."""
    rows = read_csv(summary_csv, ("scheme", "axis", "value", "mean_cost", "stderr_cost"))
    axis = rows[0]["axis"]
    scale = AXIS_SCALE.get(axis, 1.0)
    order = []
    for r in rows:
        if r["scheme"] not in order:
            order.append(r["scheme"])
    if schemes is not None:
        order = [s for s in order if s in schemes]
    fig, ax = plt.subplots(figsize=(6, 4))
    for s in order:
        pts = [(float(r["value"]), float(r["mean_cost"]), float(r["stderr_cost"]))
               for r in rows if r["scheme"] == s and r["value"] != ""]
        pts = [p for p in pts if math.isfinite(p[1])]
        if not pts:
            continue
        x, y, e = map(np.array, zip(*pts))
        ax.errorbar(x * scale, y, yerr=np.nan_to_num(e), marker="o", ms=4, capsize=2,
                    label=LABELS.get(s, s))
    ax.set_xlabel(AXIS_LABELS.get(axis, axis))
    ax.set_ylabel("mean total LQR cost")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out)
    return out


def plot_training(train_csv, out, window=10):
    """Loss per epoch with a trailing moving average."""
    rows = read_csv(train_csv, ("epoch", "loss"))
    ep = np.array([int(r["epoch"]) for r in rows])
    loss = np.array([float(r["loss"]) if r["loss"] else math.nan for r in rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ep, loss, lw=0.5, alpha=0.4, label="loss")
    ax.plot(ep, moving_average(loss, window), lw=1.5, label=f"moving average ({window})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy loss")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _save(fig, out)
    return out
