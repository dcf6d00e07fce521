"""Scenario files: YAML validated against a JSON schema, resolved into
model objects with defaults applied and provenance recorded."""
import copy
from dataclasses import dataclass, field, fields, replace
import hashlib
import json
import math
import re
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .actor.loac import TrainConfig
from .baselines import SCHEMES
from .channel import EnvParams, TopologyConfig, generate_topology
from .control import ControlSystem, LoopCostParams
from .critic import LoopBudget, ResourceBudget, SolveOptions, dbm_per_hz_to_watt

SCALES = ("desk", "paper")
ALL_SCHEMES = ("loac",) + SCHEMES


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats such as 1.0e6."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+][0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


class ScenarioError(ValueError):
    """Parse or validation failure; the message names file, line and field."""


@dataclass(frozen=True)
class ExperimentConfig:
    schemes: tuple = ("loac", "exhaustive", "comm_first", "comp_first")
    axis: str = "bandwidth"
    values: tuple = ()
    realizations: int = 20
    seed: int = 0
    omega: float = 0.3
    margin: float = 15.0
    enumeration_cap: int = 100_000
    sensing_cap: bool = False


@dataclass
class Scenario:
    name: str
    topology_config: TopologyConfig
    topology_seed: int
    env: EnvParams
    budgets: ResourceBudget
    loops: LoopBudget
    train: TrainConfig
    experiment: ExperimentConfig
    resolved: dict
    provenance: dict = field(default_factory=dict)
    _topology: object = field(default=None, repr=False)

    @property
    def topology(self):
        if self._topology is None:
            self._topology = generate_topology(self.topology_config, self.topology_seed)
        return self._topology

    def solve_options(self):
        return SolveOptions(sensing_cap=self.experiment.sensing_cap)


def bundled(name="table1.scenario") -> Path:
    return Path(resources.files("sc3loop") / "data" / name)


def schema():
    return json.loads((Path(resources.files("sc3loop") / "data" / "scenario_schema.json"))
                      .read_text())


def _node_at(node, path):
    """YAML node addressed by a jsonschema error path (deepest existing one)."""
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = [v for k, v in node.value if k.value == key]
            if not nxt:
                break
            node = nxt[0]
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return node


def _merge(base, over):
    """Recursive dict merge; scalars and lists in ``over`` replace."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _validate(doc, root, path, validator, what):
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.path))
    if not errors:
        return
    msgs = []
    for err in errors:
        where = ".".join(str(p) for p in err.path) or "<root>"
        node = _node_at(root, err.path) if root is not None else None
        line = f"line {node.start_mark.line + 1}: " if node is not None else ""
        msgs.append(f"{path}: {line}{what}{where}: {err.message}")
    raise ScenarioError("\n".join(msgs))


def _take(block, cls, skip=(), prefix=""):
    """Keyword arguments for ``cls`` from ``block`` plus the defaulted names."""
    names = [f.name for f in fields(cls) if f.name not in skip]
    kw = {k: block[k] for k in names if k in block}
    return kw, [f"{prefix}{k}" for k in names if k not in block]


def _tuple_points(pts):
    return None if pts is None else tuple(tuple(float(c) for c in p) for p in pts)


def load_scenario(path, scale=None) -> Scenario:
    """Parse, validate and resolve a scenario file.

    ``scale`` selects one of the file's ``scale`` override blocks; None
    uses the base values as written.
    """
    path = Path(path)
    text = path.read_text()
    try:
        root = yaml.compose(text, Loader=_Loader)
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: line 1: expected a mapping at the top level")
    validator = jsonschema.Draft7Validator(schema())
    _validate(doc, root, path, validator, "")
    if scale is not None:
        if scale not in SCALES:
            raise ScenarioError(f"unknown scale {scale!r}; expected one of {SCALES}")
        over = doc.get("scale", {}).get(scale, {})
        merged = _merge({k: v for k, v in doc.items() if k != "scale"}, over)
        _validate(merged, None, path, validator, f"scale.{scale} override gives ")
        doc = merged
    doc = {k: v for k, v in doc.items() if k != "scale"}
    return resolve(doc, provenance={"path": str(path), "scale": scale,
                                    "sha256": hashlib.sha256(text.encode()).hexdigest()})


def resolve(doc, provenance=None) -> Scenario:
    defaults = []
    topo = doc["topology"]
    sens, acts = topo["sensors"], topo["actuators"]
    ctrl = doc["control"]
    K = acts["count"]
    if len(ctrl["entropies"]) != K:
        raise ScenarioError(f"control.entropies has {len(ctrl['entropies'])} values for {K} "
                            "actuators")
    for blk, n, key in ((sens, sens["count"], "sensors"), (acts, K, "actuators")):
        if blk.get("positions") is not None and len(blk["positions"]) != n:
            raise ScenarioError(f"topology.{key}.positions has {len(blk['positions'])} entries, "
                                f"count is {n}")
    ctrl_kw = {k: ctrl[k] for k in ("state_cost", "input_cost", "noise_variance") if k in ctrl}
    defaults += [f"control.{k}" for k in ("state_cost", "input_cost", "noise_variance")
                 if k not in ctrl]
    cache = {}
    controls = []
    for e in ctrl["entropies"]:
        if e not in cache:
            cache[e] = LoopCostParams.from_system(
                ControlSystem.isotropic(float(e), ctrl["n"], **ctrl_kw))
        controls.append(cache[e])
    rate = sens.get("sensing_rate")
    tcfg = TopologyConfig(
        region=tuple(topo["region"]), eih_position=tuple(topo["eih_position"]),
        num_sensors=sens["count"], num_actuators=K, sensing_range=sens["sensing_range"],
        p_max=sens["p_max"], rho=sens["rho"], sensing_rate=math.inf if rate is None else rate,
        gamma_range=tuple(sens.get("gamma_range", TopologyConfig.gamma_range)),
        gamma=None if sens.get("gamma") is None else tuple(sens["gamma"]),
        sensor_positions=_tuple_points(sens.get("positions")),
        actuator_positions=_tuple_points(acts.get("positions")),
        controls=tuple(controls), max_retries=topo.get("max_retries", 1000))
    defaults += [f"topology.{k}" for k in ("seed", "max_retries") if k not in topo]
    env_kw, d = _take(doc.get("env", {}), EnvParams, skip=("height",), prefix="env.")
    env = EnvParams(height=topo["height"], **env_kw)
    defaults += d
    bud = doc["budgets"]
    budgets = ResourceBudget(bandwidth=float(bud["bandwidth"]), dl_power=float(bud["dl_power"]),
                             cpu=math.inf if bud["cpu"] is None else float(bud["cpu"]),
                             noise_psd=dbm_per_hz_to_watt(bud["noise_psd_dbm_hz"]))
    loop_kw, d = _take(doc.get("loop", {}), LoopBudget, prefix="loop.")
    defaults += d
    train_kw, d = _take(doc.get("train", {}), TrainConfig, prefix="train.")
    defaults += d
    exp = dict(doc.get("experiment", {}))
    sweep = exp.pop("sweep", None)
    if sweep is not None:
        exp["axis"] = sweep["axis"]
        exp["values"] = tuple(math.inf if v is None else float(v) for v in sweep["values"])
    if "schemes" in exp:
        bad = [s for s in exp["schemes"] if s not in ALL_SCHEMES]
        if bad:
            raise ScenarioError(f"experiment.schemes: unknown scheme(s) {bad}; "
                                f"expected names from {ALL_SCHEMES}")
        exp["schemes"] = tuple(exp["schemes"])
    exp_kw, d = _take(exp, ExperimentConfig, prefix="experiment.")
    defaults += d
    prov = dict(provenance or {})
    prov["defaults_used"] = sorted(defaults)
    return Scenario(name=doc.get("name", "scenario"), topology_config=tcfg,
                    topology_seed=int(topo.get("seed", 0)), env=env, budgets=budgets,
                    loops=LoopBudget(**loop_kw), train=TrainConfig(**train_kw),
                    experiment=ExperimentConfig(**exp_kw), resolved=doc, provenance=prov)


def with_budget(budgets: ResourceBudget, axis, value):
    """Budgets with one sweep axis replaced (sensing_rate is not a budget)."""
    if axis in ("bandwidth", "cpu", "dl_power"):
        return replace(budgets, **{axis: float(value)})
    return budgets
