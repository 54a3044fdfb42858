"""Measured quantities: NMSE, generalization gap, spectral terms, coherence, bit counts."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .linalg import as_dense, index_set, spectral_norm
from .unroll import Activation, UnrolledNet

__all__ = [
    "BitModel",
    "GoodSetReport",
    "MetricsReport",
    "bit_count",
    "emit_report",
    "gen_gap",
    "good_set_check",
    "mu_coherence",
    "nmse_db",
    "nmse_ratio",
    "spectral_fk",
    "theory_theta",
]

RATIO_FLOOR = 1e-15
CSV_FLOOR_DB = -150.0


def nmse_ratio(estimates, truths) -> tuple[float, int]:
    """Mean of ``||x_hat - x||^2 / ||x||^2`` and the number of zero-norm truths skipped."""
    E = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    X = np.atleast_2d(np.asarray(truths, dtype=np.float64))
    if E.shape != X.shape:
        raise DimensionError(f"estimates {E.shape} vs truths {X.shape}")
    den = np.sum(X * X, axis=1)
    keep = den > 0
    if not keep.any():
        raise ValueError("no sample with a nonzero ground truth")
    num = np.sum((E - X) ** 2, axis=1)
    return float(np.mean(num[keep] / den[keep])), int((~keep).sum())


def nmse_db(estimates, truths) -> float:
    """NMSE in dB; ``-inf`` when the mean ratio is below ``1e-15``."""
    ratio, _ = nmse_ratio(estimates, truths)
    if ratio < RATIO_FLOOR:
        return float("-inf")
    return float(10 * np.log10(ratio))


def gen_gap(train_nmse_db: float, test_nmse_db: float) -> float:
    if not (math.isfinite(train_nmse_db) and math.isfinite(test_nmse_db)):
        raise ValueError("generalization gap needs finite NMSE values")
    return test_nmse_db - train_nmse_db


def mu_coherence(W, Qbar) -> float:
    """Largest off-diagonal ``|W_i^T Qbar_j|`` over column pairs ``i != j``."""
    W, Qbar = as_dense(W), as_dense(Qbar)
    if W.shape[0] != Qbar.shape[0]:
        raise DimensionError(f"W {W.shape} and Qbar {Qbar.shape} need equal row counts")
    M = np.abs(W.T @ Qbar)
    k = min(M.shape)
    M[np.arange(k), np.arange(k)] = 0.0
    return float(M.max()) if M.size else 0.0


def _dense_weights(net: UnrolledNet) -> list[np.ndarray]:
    if net.structure is not None:
        net = net.materialize()
    return net.effective_weights()


def spectral_fk(net: UnrolledNet, Qtilde, support, variant: Activation | str = "hard",
                Qbar=None) -> np.ndarray:
    """Per-layer ``||delta I - W_S^T Qtilde||`` (plus ``mu * s`` for soft thresholding).

    ``W_S`` holds the columns of the effective (scaled) weights indexed by
    ``support``. For a fixed sensing matrix ``A`` pass ``Qtilde = A[:, S]`` and
    ``Qbar = A``; with a Gram matrix pass ``Q[S, S]`` and ``Q[S, :]``.
    """
    variant = Activation(variant)
    Qtilde = as_dense(Qtilde)
    Ws = _dense_weights(net)
    S = index_set(support, Ws[0].shape[1])
    s = S.size
    if Qtilde.shape[1] != s:
        raise DimensionError(f"Qtilde has {Qtilde.shape[1]} columns, support has {s}")
    if variant is Activation.SOFT and Qbar is None:
        raise ValueError("soft-threshold spectral term needs Qbar for the coherence")
    out = np.empty(net.K)
    for k, W in enumerate(Ws):
        Ws_k = W[:, S]
        if Ws_k.shape[0] != Qtilde.shape[0]:
            raise DimensionError(f"W_S {Ws_k.shape} incompatible with Qtilde {Qtilde.shape}")
        f = spectral_norm(net.delta * np.eye(s) - Ws_k.T @ Qtilde)
        if variant is Activation.SOFT:
            f += mu_coherence(W, Qbar) * s
        out[k] = f
    return out


@dataclass
class GoodSetReport:
    fk: np.ndarray
    good: np.ndarray
    mu: np.ndarray
    diag_products: list[np.ndarray]

    @property
    def all_good(self) -> bool:
        return bool(np.all(self.good))


def good_set_check(net: UnrolledNet, Qtilde, support, variant="hard", delta: float | None = None,
                   Qbar=None) -> GoodSetReport:
    """Per-layer membership test ``f_k < 1`` with the inspection values ``W_i^T Qbar_i``.

    ``delta`` overrides the net's own value for the spectral term.
    """
    if delta is not None and delta != net.delta:
        net = net.copy()
        net.delta = delta
    fk = spectral_fk(net, Qtilde, support, variant, Qbar)
    Ws = _dense_weights(net)
    ref = as_dense(Qbar) if Qbar is not None else None
    mu = np.array([mu_coherence(W, ref) if ref is not None else np.nan for W in Ws])
    diag = [np.einsum("ij,ij->j", W, ref) if ref is not None else np.array([]) for W in Ws]
    return GoodSetReport(fk, fk < 1.0, mu, diag)


def theory_theta(states, X_opt, net: UnrolledNet, Qbar) -> np.ndarray:
    """Thresholds ``mu(W_k) * max_i ||x_{k-1,i} - x_opt,i||_1`` for every layer.

    ``states`` are the batched forward states ``x_0..x_K``. Analysis only.
    """
    X_opt = np.atleast_2d(np.asarray(X_opt, dtype=np.float64))
    Ws = _dense_weights(net)
    out = np.empty(net.K)
    for k in range(net.K):
        prev = np.atleast_2d(states[k])
        dist = np.abs(prev - X_opt).sum(axis=1).max()
        out[k] = mu_coherence(Ws[k], Qbar) * dist
    return out


class BitModel(str, Enum):
    FCN_RELU = "fcn_relu"
    FCN_ST = "fcn_st"
    DUN = "dun"
    ONE_BIT_DUN = "one_bit"


def bit_count(model: BitModel | str, K: int, m: int, n: int) -> int:
    """Storage bits of the four reference models.

    The fully connected models store one ``m x n`` and ``K - 1`` ``n x n``
    layers.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    model = BitModel(model)
    if model is BitModel.FCN_RELU:
        return 32 * (m * n + (K - 1) * n * n)
    if model is BitModel.FCN_ST:
        return 32 * (m * n + (K - 1) * n * n) + 32 * K
    if model is BitModel.DUN:
        return 32 * K * (m * n + 1)
    return K * (m * n + 32)


@dataclass
class MetricsReport:
    train_nmse_db: float
    test_nmse_db: float
    gap_db: float
    bits: int
    params: int
    fk_curve: list[float] = field(default_factory=list)
    overlap: float | None = None
    layer_curve: list[float] = field(default_factory=list)
    wall_times: dict[str, float] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def build(cls, train_nmse_db, test_nmse_db, **kw) -> "MetricsReport":
        gap = (test_nmse_db - train_nmse_db
               if math.isfinite(train_nmse_db) and math.isfinite(test_nmse_db) else float("nan"))
        return cls(train_nmse_db, test_nmse_db, gap, **kw)

    def to_json(self) -> dict:
        return _json_safe(asdict(self))

    @classmethod
    def from_json(cls, d: dict) -> "MetricsReport":
        d = _json_restore(d)
        return cls(**d)


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "-inf" if obj < 0 else "inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def _json_restore(obj):
    if isinstance(obj, str) and obj in ("-inf", "inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _json_restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_restore(v) for v in obj]
    return obj


def _csv_num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    if math.isinf(x) and x < 0:
        x = CSV_FLOOR_DB
    return repr(x)


def emit_report(report: MetricsReport, path, fmt: str = "json") -> Path:
    """Write a report as JSON, or its per-layer curves as CSV (one row per layer)."""
    path = Path(path)
    if fmt == "json":
        text = json.dumps(report.to_json(), indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "layer_nmse_db", "fk"])
        n = max(len(report.layer_curve), len(report.fk_curve))
        for k in range(n):
            lc = report.layer_curve[k] if k < len(report.layer_curve) else None
            fk = report.fk_curve[k] if k < len(report.fk_curve) else None
            w.writerow([k + 1, _csv_num(lc), _csv_num(fk)])
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text)
    return path
