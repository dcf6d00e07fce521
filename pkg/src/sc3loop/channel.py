"""Topology and air-to-ground channel model.

Large-scale fading follows the elevation-dependent sigmoid path-loss model
and small-scale fading is unit-power Rayleigh, drawn once per epoch
(quasi-static channels).
"""
from dataclasses import dataclass, field, replace
import math

import numpy as np

from .control import LoopCostParams
from .rng import stream


class InfeasibleTopology(ValueError):
    pass


@dataclass(frozen=True)
class EnvParams:
    eta_los: float = 0.1          # dB
    eta_nlos: float = 21.0        # dB
    a: float = 5.0188
    b: float = 0.3511
    carrier_frequency: float = 2.0e9   # Hz
    speed_of_light: float = 3.0e8      # m/s
    height: float = 300.0              # EIH height, m

    def __post_init__(self):
        if min(self.carrier_frequency, self.speed_of_light, self.height, self.b) <= 0:
            raise ValueError("carrier frequency, speed of light, height and b must be positive")


@dataclass(frozen=True)
class SensorTraits:
    position: tuple
    sensing_range: float
    p_max: float                  # W
    gamma: float                  # CPU cycles per bit
    rho: float                    # extraction ratio
    sensing_rate: float = math.inf   # bits per cycle


@dataclass(frozen=True)
class ActuatorTraits:
    position: tuple
    control: LoopCostParams


@dataclass(frozen=True)
class Topology:
    eih_position: tuple
    sensors: tuple
    actuators: tuple
    effective_sets: tuple = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "actuators", tuple(self.actuators))
        if self.effective_sets is None:
            object.__setattr__(self, "effective_sets", effective_sensor_sets(self))

    @property
    def S(self) -> int:
        return len(self.sensors)

    @property
    def K(self) -> int:
        return len(self.actuators)

    def mask(self) -> np.ndarray:
        """Boolean S x K matrix, True where sensor s may serve actuator k."""
        m = np.zeros((self.S, self.K), dtype=bool)
        for k, sk in enumerate(self.effective_sets):
            m[list(sk), k] = True
        return m

    def effective_sensors(self):
        return sorted(set().union(*self.effective_sets))

    def entropies(self) -> np.ndarray:
        return np.array([a.control.entropy for a in self.actuators])


@dataclass(frozen=True)
class ChannelRealization:
    ul_gain_sq: np.ndarray
    dl_gain_sq: np.ndarray
    seed: tuple = ()


def effective_sensor_sets(topology, strict=True):
    """Per actuator, the sorted tuple of sensors whose range covers it."""
    sp = np.array([s.position for s in topology.sensors], dtype=float).reshape(-1, 2)
    ap = np.array([a.position for a in topology.actuators], dtype=float).reshape(-1, 2)
    ranges = np.array([s.sensing_range for s in topology.sensors], dtype=float)
    dist = np.linalg.norm(sp[:, None, :] - ap[None, :, :], axis=-1)
    covered = dist <= ranges[:, None]
    sets = tuple(tuple(int(s) for s in np.flatnonzero(covered[:, k])) for k in range(len(ap)))
    if strict:
        for k, sk in enumerate(sets):
            if not sk:
                raise InfeasibleTopology(f"actuator {k} is outside every sensor's range")
    return sets


def elevation_angle(d, h):
    """Elevation in degrees seen from a ground node at 3-D distance d."""
    d = np.asarray(d, dtype=float)
    if np.any(d < h) or h <= 0:
        raise ValueError("elevation angle needs d >= h > 0")
    return np.degrees(np.arcsin(np.minimum(h / d, 1.0)))


def path_loss_db(d, env: EnvParams):
    d = np.asarray(d, dtype=float)
    elev = elevation_angle(d, env.height)
    A = env.eta_los - env.eta_nlos
    B = (20 * np.log10(d) + 20 * np.log10(4 * np.pi * env.carrier_frequency / env.speed_of_light)
         + env.eta_nlos)
    return A / (1 + env.a * np.exp(-env.b * (elev - env.a))) + B


def large_scale_fading(d, env: EnvParams):
    """Linear power gain beta for 3-D distance d."""
    return 10.0 ** (-path_loss_db(d, env) / 10.0)


def node_distances(topology: Topology, env: EnvParams):
    """3-D EIH-to-node distances for sensors and actuators."""
    eih = np.asarray(topology.eih_position, dtype=float)

    def dist(nodes):
        pos = np.array([n.position for n in nodes], dtype=float).reshape(-1, 2)
        ground = np.linalg.norm(pos - eih, axis=1)
        return np.hypot(ground, env.height)

    return dist(topology.sensors), dist(topology.actuators)


def large_scale_gains(topology: Topology, env: EnvParams):
    ds, da = node_distances(topology, env)
    return large_scale_fading(ds, env), large_scale_fading(da, env)


def _rayleigh_power(rng, size):
    alpha = (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / math.sqrt(2.0)
    return np.abs(alpha) ** 2


def realize_channels(topology: Topology, env: EnvParams, seed: int, epoch: int = 0,
                     name: str = "channel", betas=None) -> ChannelRealization:
    """Draw one quasi-static realization of all UL and DL gains.

    Each node has its own stream keyed by (seed, name, epoch, node), so the
    realization is reproducible and independent of how many nodes exist.
    """
    beta_u, beta_d = betas if betas is not None else large_scale_gains(topology, env)
    ul = np.array([_rayleigh_power(stream(seed, name, epoch, 0, s), 1)[0]
                   for s in range(topology.S)])
    dl = np.array([_rayleigh_power(stream(seed, name, epoch, 1, k), 1)[0]
                   for k in range(topology.K)])
    return ChannelRealization(ul_gain_sq=ul * beta_u, dl_gain_sq=dl * beta_d,
                              seed=(int(seed), name, int(epoch)))


@dataclass(frozen=True)
class TopologyConfig:
    region: tuple = (4000.0, 4000.0)
    eih_position: tuple = (2000.0, 2000.0)
    num_sensors: int = 20
    num_actuators: int = 4
    sensing_range: float = 1000.0
    p_max: float = 0.1
    rho: float = 0.01
    sensing_rate: float = math.inf
    gamma_range: tuple = (50.0, 500.0)
    gamma: tuple = None
    sensor_positions: tuple = None
    actuator_positions: tuple = None
    controls: tuple = ()
    max_retries: int = 1000


def generate_topology(cfg: TopologyConfig, seed: int) -> Topology:
    """Place nodes (explicit coordinates or uniform in the region).

    Random placements are redrawn until every actuator is covered by at
    least one sensor, up to ``cfg.max_retries`` attempts.
    """
    if len(cfg.controls) != (len(cfg.actuator_positions) if cfg.actuator_positions
                             else cfg.num_actuators):
        raise ValueError("one control description per actuator is required")
    rng = stream(seed, "topology")
    S = len(cfg.sensor_positions) if cfg.sensor_positions else cfg.num_sensors
    if cfg.gamma is not None:
        gamma = np.asarray(cfg.gamma, dtype=float)
        if gamma.shape != (S,):
            raise ValueError(f"expected {S} gamma values")
    else:
        lo, hi = cfg.gamma_range
        gamma = rng.uniform(lo, hi, size=S)
    w, h = cfg.region
    for _ in range(cfg.max_retries):
        sp = (np.asarray(cfg.sensor_positions, dtype=float) if cfg.sensor_positions
              else rng.uniform((0, 0), (w, h), size=(S, 2)))
        ap = (np.asarray(cfg.actuator_positions, dtype=float) if cfg.actuator_positions
              else rng.uniform((0, 0), (w, h), size=(cfg.num_actuators, 2)))
        sensors = tuple(
            SensorTraits(position=(float(x), float(y)), sensing_range=cfg.sensing_range,
                         p_max=cfg.p_max, gamma=float(g), rho=cfg.rho,
                         sensing_rate=cfg.sensing_rate)
            for (x, y), g in zip(sp, gamma))
        actuators = tuple(ActuatorTraits(position=(float(x), float(y)), control=c)
                          for (x, y), c in zip(ap, cfg.controls))
        try:
            return Topology(eih_position=tuple(cfg.eih_position), sensors=sensors,
                            actuators=actuators)
        except InfeasibleTopology:
            if cfg.sensor_positions and cfg.actuator_positions:
                raise
    raise InfeasibleTopology(f"no covering placement found in {cfg.max_retries} attempts")


def with_sensing_rate(topology: Topology, rate: float) -> Topology:
    """Copy of the topology with every sensor's sensing cycle rate set."""
    sensors = tuple(replace(s, sensing_rate=rate) for s in topology.sensors)
    return replace(topology, sensors=sensors)
