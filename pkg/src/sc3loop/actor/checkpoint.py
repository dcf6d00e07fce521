"""Policy checkpoints as a single .npz container.

Layout (format version 1):

- ``param/<name>``: float64 weight arrays, one per entry of PARAM_ORDER
- ``adam_m/<name>``, ``adam_v/<name>``: optimizer moments (training checkpoints)
- ``replay/<field>``: replay buffer contents (training checkpoints)
- ``meta``: uint8 array holding UTF-8 JSON with the format version, layer
  shapes, normalization record, train-config echo, seed, next epoch, Adam
  step count and the per-epoch records so far.

Arrays are stored verbatim, so loading is bit-exact, and members carry a
fixed timestamp so equal checkpoints are equal files.
"""
from dataclasses import asdict
import json
import zipfile

import numpy as np

from .loac import EpochRecord, TrainConfig, TrainState
from .network import PARAM_ORDER, Adam, PairingPolicy
from .replay import ReplayBuffer
from .traits import NormalizationRecord

FORMAT_VERSION = 1


class CheckpointVersionError(ValueError):
    pass


def _meta_bytes(meta):
    return np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def save_policy(path, policy: PairingPolicy, norm: NormalizationRecord, cfg: TrainConfig = None,
                seed=None, state: TrainState = None, extra=None):
    """Write a checkpoint; pass ``state`` to make it resumable.

    ``extra`` is any JSON-serializable dict stored verbatim in the metadata.
    """
    arrays = {f"param/{k}": np.asarray(policy.params[k], dtype=np.float64) for k in PARAM_ORDER}
    meta = {"format_version": FORMAT_VERSION, "slope": policy.slope,
            "shapes": {k: list(policy.params[k].shape) for k in PARAM_ORDER},
            "normalization": norm.to_dict(),
            "train_config": None if cfg is None else cfg.to_dict(),
            "seed": None if seed is None else int(seed), "resumable": state is not None,
            "extra": extra or {}}
    if state is not None:
        for k in PARAM_ORDER:
            arrays[f"adam_m/{k}"] = state.adam.m[k]
            arrays[f"adam_v/{k}"] = state.adam.v[k]
        for k, v in state.buffer.state().items():
            arrays[f"replay/{k}"] = v
        meta.update(epoch=state.epoch, adam_step=state.adam.step,
                    records=[_record_dict(r) for r in state.records])
    arrays["meta"] = _meta_bytes(meta)
    _write_npz(path, arrays)


def _write_npz(path, arrays):
    # np.savez stamps members with the current time; a fixed stamp keeps
    # identical checkpoints byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.ascontiguousarray(arrays[name]),
                                          allow_pickle=False)


def _record_dict(r: EpochRecord):
    d = asdict(r)
    d["pairing"] = None if r.pairing is None else list(r.pairing)
    return d


def _read(path):
    with np.load(path, allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    if "meta" not in data:
        raise CheckpointVersionError(f"{path}: not a policy checkpoint (no metadata)")
    meta = json.loads(data.pop("meta").tobytes().decode("utf-8"))
    ver = meta.get("format_version")
    if ver != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format {ver}, this build reads format {FORMAT_VERSION}")
    return meta, data


def load_policy(path):
    """(policy, normalization record, metadata dict)."""
    meta, data = _read(path)
    params = {k: data[f"param/{k}"] for k in PARAM_ORDER}
    for k, shape in meta["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"{path}: {k} has shape {params[k].shape}, metadata says {shape}")
    norm = NormalizationRecord.from_dict(meta["normalization"])
    return PairingPolicy(params, meta["slope"]), norm, meta


def load_state(path) -> TrainState:
    """Training state for resuming; the checkpoint must be resumable."""
    meta, data = _read(path)
    if not meta.get("resumable"):
        raise ValueError(f"{path}: checkpoint holds weights only and cannot resume training")
    policy, norm, _ = load_policy(path)
    cfg = TrainConfig.from_dict(meta["train_config"])
    adam = Adam(policy.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    adam.m = {k: data[f"adam_m/{k}"] for k in PARAM_ORDER}
    adam.v = {k: data[f"adam_v/{k}"] for k in PARAM_ORDER}
    adam.step = int(meta["adam_step"])
    replay = {k[len("replay/"):]: v for k, v in data.items() if k.startswith("replay/")}
    buf = ReplayBuffer.from_state(cfg.buffer_capacity, replay)
    records = []
    for d in meta["records"]:
        d = dict(d)
        d["pairing"] = None if d["pairing"] is None else tuple(d["pairing"])
        records.append(EpochRecord(**d))
    return TrainState(cfg=cfg, seed=meta["seed"], policy=policy, adam=adam, buffer=buf,
                      norm=norm, records=records, epoch=int(meta["epoch"]))
