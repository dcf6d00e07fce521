"""Trait matrices fed to the pairing policy and their min-max scaling."""
from dataclasses import asdict, dataclass
import math

import numpy as np

from ..channel import large_scale_gains

# column layout: sensors (UL gain, gamma), actuators (DL gain, entropy)
SENSOR_SCALES = ("log", "log")
ACTUATOR_SCALES = ("log", "linear")


@dataclass(frozen=True)
class ColumnScale:
    lo: float
    hi: float
    kind: str          # "log" or "linear"

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "log":
            if np.any(x <= 0) or self.lo <= 0:
                raise ValueError("log-scaled trait columns must be positive")
            x, lo, hi = np.log(x), math.log(self.lo), math.log(self.hi)
        else:
            lo, hi = self.lo, self.hi
        if hi <= lo:
            return np.full_like(x, 0.5)
        return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class NormalizationRecord:
    sensor: tuple
    actuator: tuple

    @classmethod
    def from_data(cls, sensor_raw, actuator_raw):
        """Statistics taken from the given matrices themselves."""
        def cols(X, kinds):
            X = np.asarray(X, dtype=float)
            return tuple(ColumnScale(float(X[:, j].min()), float(X[:, j].max()), kind)
                         for j, kind in enumerate(kinds))
        return cls(cols(sensor_raw, SENSOR_SCALES), cols(actuator_raw, ACTUATOR_SCALES))

    @classmethod
    def from_scenario(cls, topology, env, fade_quantile=1e-3):
        """Frozen statistics from large-scale gains and trait ranges.

        Gain columns span beta_min * F^-1(q) to beta_max * F^-1(1 - q) where F
        is the unit-mean exponential law of Rayleigh power fading.
        """
        beta_u, beta_d = large_scale_gains(topology, env)
        lo_f = -math.log1p(-fade_quantile)
        hi_f = -math.log(fade_quantile)
        gamma = np.array([s.gamma for s in topology.sensors])
        ent = topology.entropies()
        return cls(
            sensor=(ColumnScale(float(beta_u.min() * lo_f), float(beta_u.max() * hi_f), "log"),
                    ColumnScale(float(gamma.min()), float(gamma.max()), "log")),
            actuator=(ColumnScale(float(beta_d.min() * lo_f), float(beta_d.max() * hi_f), "log"),
                      ColumnScale(float(ent.min()), float(ent.max()), "linear")))

    def to_dict(self):
        return {"sensor": [asdict(c) for c in self.sensor],
                "actuator": [asdict(c) for c in self.actuator]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(ColumnScale(**c) for c in d["sensor"]),
                   tuple(ColumnScale(**c) for c in d["actuator"]))


@dataclass(frozen=True)
class TraitMatrices:
    sensor: np.ndarray       # S x 2, entries in [0, 1]
    actuator: np.ndarray     # K x 2
    record: NormalizationRecord


def raw_traits(topology, channels):
    """Unscaled (|h_u|^2, gamma) per sensor and (|h_d|^2, entropy) per actuator."""
    xs = np.column_stack([np.asarray(channels.ul_gain_sq, float),
                          [s.gamma for s in topology.sensors]])
    xa = np.column_stack([np.asarray(channels.dl_gain_sq, float), topology.entropies()])
    return xs, xa


def normalize_traits(sensor_raw, actuator_raw, record: NormalizationRecord = None):
    """Scale raw trait matrices into [0, 1] column by column.

    Without a record, statistics come from the inputs. Zero gains (deep
    fades) are floored at the record's lower end before the log.
    """
    sensor_raw = np.asarray(sensor_raw, dtype=float)
    actuator_raw = np.asarray(actuator_raw, dtype=float)
    if record is None:
        record = NormalizationRecord.from_data(sensor_raw, actuator_raw)

    def scale(X, cols):
        out = np.empty_like(X)
        for j, c in enumerate(cols):
            x = X[:, j]
            if c.kind == "log" and np.any(x < 0):
                raise ValueError("log-scaled trait columns must be nonnegative")
            if c.kind == "log":
                x = np.maximum(x, c.lo) if c.lo > 0 else x
            out[:, j] = c.apply(x)
        return out

    return TraitMatrices(scale(sensor_raw, record.sensor), scale(actuator_raw, record.actuator),
                         record)
