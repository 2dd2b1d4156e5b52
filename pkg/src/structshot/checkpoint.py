"""Versioned .npz checkpoints: parameter arrays, per-branch transform means, and a JSON header."""

from __future__ import annotations

import json
import logging
import os
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from structshot.config import RunConfig
from structshot.errors import CheckpointError, ShapeError
from structshot.fusion import ModelParams, init_model
from structshot.meta import EmbeddingTransform
from structshot.params import load_state_dict, state_dict

logger = logging.getLogger("structshot")

# Increment when the archive layout changes; older versions are rejected, not migrated
FORMAT_VERSION = 1

PARAM_PREFIX = "param/"
TRANSFORM_PREFIX = "transform/"
META_KEY = "meta"


@dataclass(eq=False)
class Checkpoint:
    config: RunConfig
    params: ModelParams
    in_dim: int
    transforms: list[EmbeddingTransform]
    best_val_acc: float | None = None
    rng_state: dict | None = None
    loss_trace: list[float] = field(default_factory=list)
    validation: list[tuple[int, float]] = field(default_factory=list)
    format_version: int = FORMAT_VERSION


def _meta(ckpt: Checkpoint) -> dict:
    return {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_dict(),
        "in_dim": ckpt.in_dim,
        "best_val_acc": ckpt.best_val_acc,
        "rng_state": ckpt.rng_state,
        "loss_trace": ckpt.loss_trace,
        "validation": [[step, acc] for step, acc in ckpt.validation],
        "l2_normalize": [t.l2_normalize for t in ckpt.transforms],
    }


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Write ckpt to path, replacing any existing file only once the write completed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {PARAM_PREFIX + name: array for name, array in state_dict(ckpt.params).items()}
    for i, transform in enumerate(ckpt.transforms):
        arrays[f"{TRANSFORM_PREFIX}{i}"] = transform.mean
    arrays[META_KEY] = np.array(json.dumps(_meta(ckpt), sort_keys=True))

    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp, path)
    logger.info(f"Checkpoint written to {path} ({len(arrays) - 1} arrays)")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from None
    if META_KEY not in arrays:
        raise CheckpointError(f"{path} has no metadata record")
    try:
        meta = json.loads(str(arrays.pop(META_KEY)))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupt metadata ({e.msg})") from None

    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format version {version} (expected {FORMAT_VERSION})"
        )
    logger.debug(f"Checkpoint {path}: format version {version}")

    config = RunConfig.from_dict(meta["config"])
    params = init_model(
        config.model_variant(),
        meta["in_dim"],
        config.gin_config(),
        np.random.default_rng(0),
        num_substructures=config.num_substructures,
    )
    state = {
        name[len(PARAM_PREFIX) :]: array for name, array in arrays.items() if name.startswith(PARAM_PREFIX)
    }
    try:
        load_state_dict(params, state)
    except (KeyError, ShapeError) as e:
        raise CheckpointError(f"{path}: parameters do not match the stored config: {e}") from None

    flags = meta.get("l2_normalize", [])
    transforms = []
    for i, l2 in enumerate(flags):
        key = f"{TRANSFORM_PREFIX}{i}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing transform for branch {i}")
        transforms.append(
            EmbeddingTransform(mean=arrays[key], l2_normalize=l2, epsilon_floor=config.epsilon_floor)
        )

    return Checkpoint(
        config=config,
        params=params,
        in_dim=meta["in_dim"],
        transforms=transforms,
        best_val_acc=meta.get("best_val_acc"),
        rng_state=meta.get("rng_state"),
        loss_trace=list(meta.get("loss_trace", [])),
        validation=[(int(s), float(a)) for s, a in meta.get("validation", [])],
        format_version=version,
    )
