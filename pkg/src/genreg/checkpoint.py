"""Versioned JSON checkpoint container.

A checkpoint bundles the architecture config, named parameter tensors
(base64-encoded little-endian float64), the fitted target normalizer, the
noise-schedule spec, and free-form metadata. A sha256 over the canonical
config JSON is embedded so loads can reject containers whose declared config
no longer matches the stored one.
"""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

from .core import TargetNormalizer
from .errors import CheckpointCorrupt, DimensionMismatch
from .nets import config_from_dict, param_shapes
from .schedule import NoiseSchedule

SCHEMA_VERSION = 1


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(entry["shape"])


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_checkpoint(path, net_config, params: dict,
                    normalizer: TargetNormalizer,
                    sched: NoiseSchedule | None = None,
                    meta: dict | None = None) -> None:
    cfg_dict = net_config.to_dict()
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "normalizer": normalizer.to_dict(),
        "schedule": sched.to_dict() if sched is not None else None,
        "params": {k: _encode_array(v) for k, v in sorted(params.items())},
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


class Checkpoint:
    def __init__(self, net_config, params, normalizer, sched, meta):
        self.net_config = net_config
        self.params = params
        self.normalizer = normalizer
        self.schedule = sched
        self.meta = meta


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointCorrupt(f"cannot parse checkpoint {path}: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointCorrupt(
            f"unsupported schema_version {doc.get('schema_version')!r}"
        )
    cfg_dict = doc.get("config")
    if cfg_dict is None or config_hash(cfg_dict) != doc.get("config_hash"):
        raise CheckpointCorrupt("config hash mismatch")
    try:
        net_config = config_from_dict(cfg_dict)
    except Exception as exc:
        raise CheckpointCorrupt(f"bad architecture config: {exc}") from exc
    expected = param_shapes(net_config)
    raw_params = doc.get("params", {})
    if set(raw_params) != set(expected):
        raise CheckpointCorrupt("parameter names do not match the config")
    params = {}
    for name, entry in raw_params.items():
        arr = _decode_array(entry)
        if arr.shape != expected[name]:
            raise DimensionMismatch(
                f"parameter {name} has shape {arr.shape}, "
                f"config requires {expected[name]}"
            )
        params[name] = arr
    normalizer = TargetNormalizer.from_dict(doc["normalizer"])
    sched = None
    if doc.get("schedule") is not None:
        sched = NoiseSchedule.from_dict(doc["schedule"])
    return Checkpoint(net_config, params, normalizer, sched, doc.get("meta", {}))
