"""Checkpoint files.

Layout: a magic line ``SEATRANS-CKPT <version>``, one line of JSON header
(config snapshot, seed, step, array table, payload size and SHA-256 digest),
then the raw little-endian array bytes in table order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .errors import (
    CheckpointDigestError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointVersionError,
    MissingCheckpointError,
)

FORMAT_VERSION = 1
MAGIC = b"SEATRANS-CKPT"


@dataclass
class CheckpointManifest:
    version: int
    config: dict[str, Any]
    arrays: list[dict[str, Any]]
    digest: str
    seed: int = 0
    step: int = 0
    extra: dict[str, Any] = field(default_factory=dict)


def _state_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {
        name: t.detach().cpu().numpy().copy(order="C")  # ascontiguousarray would turn 0-d into 1-d
        for name, t in module.state_dict().items()
    }


def weights_digest(module: nn.Module) -> str:
    """SHA-256 over every state entry's name, shape, dtype and bytes."""
    h = hashlib.sha256()
    for name, arr in _state_arrays(module).items():
        h.update(name.encode())
        h.update(str(arr.shape).encode())
        h.update(arr.dtype.str.encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(
    module: nn.Module,
    path: str | Path,
    config: dict[str, Any] | None = None,
    seed: int = 0,
    step: int = 0,
    extra: dict[str, Any] | None = None,
) -> Path:
    if config is None:
        cfg = getattr(module, "cfg", None)
        config = cfg.to_dict() if cfg is not None else {}
    arrays = _state_arrays(module)
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        data = arr.tobytes()
        table.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
             "offset": offset, "nbytes": len(data)}
        )
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {
        "version": FORMAT_VERSION,
        "config": config,
        "seed": seed,
        "step": step,
        "extra": extra or {},
        "arrays": table,
        "payload_bytes": len(payload),
        "digest": hashlib.sha256(payload).hexdigest(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC + b" " + str(FORMAT_VERSION).encode() + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload)
    return path


def read_checkpoint(path: str | Path) -> tuple[CheckpointManifest, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    magic, _, rest = raw.partition(b"\n")
    parts = magic.split(b" ")
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if parts[1] != str(FORMAT_VERSION).encode():
        raise CheckpointVersionError(
            f"{path} has format version {parts[1].decode(errors='replace')}, expected {FORMAT_VERSION}"
        )
    header_line, newline, payload = rest.partition(b"\n")
    try:
        if not newline:
            raise ValueError("header not terminated")
        header = json.loads(header_line)
    except ValueError as exc:
        raise CheckpointDigestError(f"{path}: header is corrupt or truncated ({exc})") from exc
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: header version {header.get('version')}")
    if len(payload) != header["payload_bytes"] or hashlib.sha256(payload).hexdigest() != header["digest"]:
        raise CheckpointDigestError(f"{path}: payload digest mismatch (file corrupt or truncated)")
    arrays = {}
    for entry in header["arrays"]:
        start = entry["offset"]
        buf = payload[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    manifest = CheckpointManifest(
        version=header["version"],
        config=header["config"],
        arrays=header["arrays"],
        digest=header["digest"],
        seed=header.get("seed", 0),
        step=header.get("step", 0),
        extra=header.get("extra", {}),
    )
    return manifest, arrays


def load_state(module: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    """Copy arrays into ``module`` after checking names and shapes match exactly."""
    state = module.state_dict()
    for name, target in state.items():
        if name not in arrays:
            raise CheckpointShapeError(f"checkpoint lacks array {name!r}")
        if tuple(arrays[name].shape) != tuple(target.shape):
            raise CheckpointShapeError(
                f"array {name!r}: checkpoint shape {tuple(arrays[name].shape)} "
                f"!= model shape {tuple(target.shape)}"
            )
    extra = set(arrays) - set(state)
    if extra:
        raise CheckpointShapeError(f"checkpoint has arrays the model lacks: {sorted(extra)[:3]}")
    module.load_state_dict(
        {name: torch.from_numpy(arrays[name]).to(state[name].dtype) for name in state}
    )


def load_checkpoint(path: str | Path, model: nn.Module | None = None) -> tuple[nn.Module, CheckpointManifest]:
    """Load weights into ``model``, or build the model from the stored config snapshot."""
    manifest, arrays = read_checkpoint(path)
    if model is None:
        from .baselines import build_model
        from .config import model_config_from_dict

        model = build_model(model_config_from_dict(manifest.config), seed=manifest.seed)
    load_state(model, arrays)
    return model, manifest


def load_segmentation_checkpoint(model: nn.Module, path: str | Path) -> CheckpointManifest:
    """Load a UNet checkpoint into ``model.segmentation``."""
    if getattr(model, "segmentation", None) is None:
        raise CheckpointError(f"{type(model).__name__} has no segmentation branch to load into")
    manifest, arrays = read_checkpoint(path)
    load_state(model.segmentation, arrays)
    return manifest
