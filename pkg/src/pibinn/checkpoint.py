"""Checkpoint files: a JSON manifest plus little-endian float64 tensors."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import CorruptManifestError, ShapeMismatchError, TruncatedDataError
from .physics import BlockStructure, SparsityMask
from .unroll import FcnNet, UnrolledNet

_FORMAT = "pibinn-checkpoint"
_LE_F64 = np.dtype("<f8")

__all__ = ["load_checkpoint", "save_checkpoint"]


def _write(path: Path, arr) -> None:
    np.ascontiguousarray(arr, dtype=_LE_F64).tofile(path)


def _read(path: Path, shape) -> np.ndarray:
    expected = int(np.prod(shape)) * 8
    try:
        size = path.stat().st_size
    except FileNotFoundError as exc:
        raise TruncatedDataError(f"{path} is missing") from exc
    if size != expected:
        cls = TruncatedDataError if size < expected else ShapeMismatchError
        raise cls(f"{path}: {size} bytes, expected {expected}")
    return np.fromfile(path, dtype=_LE_F64).astype(np.float64).reshape(shape)


def save_checkpoint(net: UnrolledNet | FcnNet, path, extra: dict | None = None) -> Path:
    """Write ``net`` under directory ``path``; the manifest is replaced atomically last."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    if isinstance(net, FcnNet):
        for k, W in enumerate(net.weights):
            _write(root / f"W{k}.bin", W)
        _write(root / "thetas.bin", net.thetas)
        man = {"format": _FORMAT, "version": 1, "kind": "fcn", "K": net.K,
               "activation": net.activation.value,
               "weight_shapes": [list(W.shape) for W in net.weights]}
    else:
        _write(root / "weights.bin", np.stack(net.weights))
        _write(root / "thetas.bin", net.thetas)
        man = {
            "format": _FORMAT,
            "version": 1,
            "kind": "unrolled",
            "K": net.K,
            "weight_shape": list(net.weights[0].shape),
            "delta": net.delta,
            "activation": net.activation.value,
            "quant_mode": net.quant_mode.value,
            "lambda0": net.lambda0,
            "scale": net.scale,
            "quant_axis": net.quant_axis,
            "structure": None if net.structure is None else net.structure.to_json(),
            "mask": None if net.mask is None else net.mask.to_json(),
        }
    man["extra"] = extra or {}
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(man, indent=2, sort_keys=True))
    os.replace(tmp, root / "manifest.json")
    return root


def load_checkpoint(path) -> UnrolledNet | FcnNet:
    root = Path(path)
    try:
        man = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise CorruptManifestError(f"{root}: manifest.json missing") from exc
    except json.JSONDecodeError as exc:
        raise CorruptManifestError(f"{root}: unreadable manifest ({exc})") from exc
    if man.get("format") != _FORMAT:
        raise CorruptManifestError(f"{root}: not a checkpoint manifest")
    try:
        K = int(man["K"])
        if man.get("kind") == "fcn":
            weights = [_read(root / f"W{k}.bin", tuple(s))
                       for k, s in enumerate(man["weight_shapes"])]
            return FcnNet(weights, _read(root / "thetas.bin", (K,)), man["activation"])
        shape = tuple(man["weight_shape"])
        W = _read(root / "weights.bin", (K,) + shape)
        structure = man.get("structure")
        mask = man.get("mask")
        return UnrolledNet(
            list(W), _read(root / "thetas.bin", (K,)), delta=float(man["delta"]),
            activation=man["activation"], scale=float(man["scale"]),
            quant_mode=man["quant_mode"],
            structure=None if structure is None else BlockStructure(**structure["block"]),
            lambda0=float(man["lambda0"]),
            mask=None if mask is None else SparsityMask.from_json(mask),
            quant_axis=man.get("quant_axis", "row"))
    except (KeyError, TypeError) as exc:
        raise CorruptManifestError(f"{root}: incomplete manifest ({exc})") from exc
