"""Checkpoint archives with a per-tensor manifest.

An archive is a ``torch.save`` dict::

    {"format": FORMAT, "model_config": {...}, "manifest": [{name, shape, dtype, group}],
     "tensors": {name: tensor}, "train_state": {...} | None, "meta": {...}}

``group`` is one of ``transformer``, ``cnn`` or ``coupling``. Inference
only needs the ``transformer`` group.
"""
from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Any

import torch

from ..types import DepthRange
from .dual import DepthEstimator, DualBranchModel, ModelConfig

FORMAT = "crossdepth-checkpoint/1"
GROUPS = ("transformer", "cnn", "coupling")


class CheckpointError(RuntimeError):
    pass


def group_of(name: str) -> str:
    if name.startswith("transformer."):
        return "transformer"
    if name.startswith("cnn.couplings."):
        return "coupling"
    if name.startswith("cnn."):
        return "cnn"
    raise CheckpointError(f"tensor {name!r} belongs to no known group")


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    if "depth_range" in d and isinstance(d["depth_range"], dict):
        d["depth_range"] = DepthRange(**d["depth_range"])
    return ModelConfig(**d)


def save_checkpoint(path: str | os.PathLike, model: DualBranchModel,
                    train_state: dict[str, Any] | None = None,
                    meta: dict[str, Any] | None = None) -> Path:
    tensors = {k: v.detach().clone() for k, v in model.state_dict().items()}
    manifest = [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype).replace("torch.", ""),
                 "group": group_of(k)} for k, v in tensors.items()]
    payload = {"format": FORMAT, "model_config": config_to_dict(model.cfg), "manifest": manifest,
               "tensors": tensors, "train_state": train_state, "meta": meta or {}}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_checkpoint(path: str | os.PathLike) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} archive")
    names = {m["name"] for m in payload["manifest"]}
    if names != set(payload["tensors"]):
        raise CheckpointError(f"{path}: manifest and tensors disagree")
    return payload


def strip_checkpoint(src: str | os.PathLike, dst: str | os.PathLike,
                     keep: tuple[str, ...] = ("transformer",)) -> Path:
    """Write a copy of ``src`` holding only tensors from the ``keep`` groups."""
    payload = read_checkpoint(src)
    payload["manifest"] = [m for m in payload["manifest"] if m["group"] in keep]
    kept = {m["name"] for m in payload["manifest"]}
    payload["tensors"] = {k: v for k, v in payload["tensors"].items() if k in kept}
    payload["train_state"] = None
    dst = Path(dst)
    dst.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, dst)
    return dst


def load_estimator(path: str | os.PathLike) -> DepthEstimator:
    """Build the transformer-only estimator; CNN and coupling tensors are never read into a module."""
    payload = read_checkpoint(path)
    cfg = config_from_dict(payload["model_config"])
    prefix = "transformer."
    wanted = {k: v for k, v in payload["tensors"].items() if k.startswith(prefix)}
    model = DepthEstimator(cfg)
    expected = set(model.state_dict())
    missing = expected - set(wanted)
    if missing:
        raise CheckpointError(f"checkpoint lacks transformer tensors, e.g. {sorted(missing)[:3]}")
    model.load_state_dict(wanted)
    return model.eval()


def load_dual(path: str | os.PathLike, seed: int = 0) -> tuple[DualBranchModel, dict[str, Any]]:
    payload = read_checkpoint(path)
    model = DualBranchModel(config_from_dict(payload["model_config"]), seed=seed)
    missing = set(model.state_dict()) - set(payload["tensors"])
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors needed for training, e.g. {sorted(missing)[:3]}")
    model.load_state_dict(payload["tensors"])
    return model, payload
