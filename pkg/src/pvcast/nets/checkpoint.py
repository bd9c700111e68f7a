"""Named-tensor checkpoints: parameters, buffers, and a JSON meta header."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .layers import Module

FORMAT_VERSION = 1

_META_KEY = "__meta__"


def save_checkpoint(path: str | Path, module: Module, meta: dict | None = None) -> None:
    """Writes every parameter and buffer of ``module`` plus ``meta`` (JSON)."""
    arrays: dict[str, np.ndarray] = {}
    for name, p in module.named_parameters():
        arrays[f"param:{name}"] = p.data
    for name, b in module.named_buffers():
        arrays[f"buffer:{name}"] = b
    header = {"format_version": FORMAT_VERSION, "meta": meta or {}}
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays[_META_KEY] = np.frombuffer(payload, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def read_checkpoint_meta(path: str | Path) -> dict:
    """Reads just the meta dict, without needing a module to load into."""
    with np.load(path) as data:
        if _META_KEY not in data.files:
            raise ValidationError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    return header["meta"]


def load_checkpoint(path: str | Path, module: Module) -> dict:
    """Loads a checkpoint into ``module`` in place and returns its meta dict.

    The checkpoint must cover the module exactly: unknown tensors, missing
    tensors, shape mismatches, and format-version drift are all rejected.
    """
    with np.load(path) as data:
        if _META_KEY not in data.files:
            raise ValidationError(f"{path}: not a checkpoint (missing header)")
        header = json.loads(bytes(data[_META_KEY]).decode("utf-8"))
        version = header.get("format_version")
        if version != FORMAT_VERSION:
            raise ValidationError(
                f"{path}: format version {version!r}, expected {FORMAT_VERSION}"
            )
        params = dict(module.named_parameters())
        buffers = dict(module.named_buffers())
        seen: set[tuple[str, str]] = set()
        for key in data.files:
            if key == _META_KEY:
                continue
            kind, _, name = key.partition(":")
            target = params if kind == "param" else buffers if kind == "buffer" else None
            if target is None or name not in target:
                raise ValidationError(f"{path}: unexpected tensor {key!r}")
            stored = data[key]
            dest = target[name].data if kind == "param" else target[name]
            if stored.shape != dest.shape:
                raise ValidationError(
                    f"{path}: {key} has shape {stored.shape}, expected {dest.shape}"
                )
            dest[...] = stored
            seen.add((kind, name))
        missing = [f"param:{n}" for n in params if ("param", n) not in seen]
        missing += [f"buffer:{n}" for n in buffers if ("buffer", n) not in seen]
        if missing:
            raise ValidationError(f"{path}: checkpoint is missing {', '.join(sorted(missing))}")
    return header["meta"]
