import numpy as np
import pytest

from sc3loop.channel import ActuatorTraits, ChannelRealization, SensorTraits, Topology
from sc3loop.control import LoopCostParams
from sc3loop.critic import ResourceBudget, dbm_per_hz_to_watt

N0 = dbm_per_hz_to_watt(-174)


def reference_params(entropy):
    return LoopCostParams(entropy=float(entropy), n=100, negentropy_scale=0.01, det_M_root=1.0,
                          trace_term=1.0)


def make_instance(entropies, ul=1e-9, dl=1e-9, gamma=100.0, rho=0.01, p_max=0.1,
                  sensing_rate=np.inf):
    """One sensor per actuator, all co-located, with chosen channel gains."""
    K = len(entropies)
    ul = np.broadcast_to(np.asarray(ul, float), (K,)).copy()
    dl = np.broadcast_to(np.asarray(dl, float), (K,)).copy()
    gamma = np.broadcast_to(np.asarray(gamma, float), (K,))
    sensors = [SensorTraits(position=(0.0, 0.0), sensing_range=10.0, p_max=p_max,
                            gamma=float(gamma[k]), rho=rho, sensing_rate=sensing_rate)
               for k in range(K)]
    actuators = [ActuatorTraits(position=(0.0, 0.0), control=reference_params(e))
                 for e in entropies]
    topo = Topology(eih_position=(0.0, 0.0), sensors=sensors, actuators=actuators,
                    effective_sets=tuple((k,) for k in range(K)))
    return topo, ChannelRealization(ul_gain_sq=ul, dl_gain_sq=dl), tuple(range(K))


def budgets(bandwidth=1e6, dl_power=1.0, cpu=1e9):
    return ResourceBudget(bandwidth=bandwidth, dl_power=dl_power, cpu=cpu, noise_psd=N0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
