"""Unrolled LISTA-style network: forward pass, losses, reverse-mode gradients.

Each layer computes::

    x_k = act_{theta_k}(delta * x_{k-1} - W_k^T (A x_{k-1} - y))

with ``delta = 1`` giving plain LISTA. Weights are stored with the same
orientation as the sensing matrix, so ``W_k.T`` maps residuals to signal space.
In one-bit mode the stored weights are ``+-lambda0`` and the global ``scale``
multiplies them at forward time.

Everything runs on batches laid out as ``(batch, u, p)``: a dense problem is
the ``u = 1`` case, a block-structured one has ``u`` independent blocks.
"""

from __future__ import annotations

import copy
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionError, NumericalError
from .linalg import BlockDiagOperator
from .physics import BlockStructure, SparsityMask

__all__ = [
    "Activation",
    "FcnNet",
    "ForwardTrace",
    "Gradients",
    "LossKind",
    "QuantMode",
    "UnrolledNet",
    "activate",
    "backward",
    "batch_loss",
    "forward",
    "forward_batch",
    "hard_threshold",
    "init_lista",
    "loss",
    "loss_and_grad",
    "per_layer_errors",
    "relu",
    "set_workers",
    "soft_threshold",
]


class Activation(str, Enum):
    SOFT = "soft"
    HARD = "hard"
    RELU = "relu"


class QuantMode(str, Enum):
    HIGH_RES = "high_res"
    ONE_BIT = "one_bit"
    TERNARY = "ternary"
    CHANNEL_WISE = "channel_wise"


class LossKind(str, Enum):
    SQUARED = "squared"
    NORM = "norm"


def soft_threshold(x, theta: float) -> np.ndarray:
    if np.any(np.asarray(theta) < 0):
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def hard_threshold(x, theta: float) -> np.ndarray:
    """Keep entries with magnitude strictly above ``theta``."""
    if np.any(np.asarray(theta) < 0):
        raise ValueError("threshold must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) > theta, x, 0.0)


def relu(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, 0.0)


def activate(kind: Activation, z, theta) -> np.ndarray:
    if kind is Activation.SOFT:
        return soft_threshold(z, theta)
    if kind is Activation.HARD:
        return hard_threshold(z, theta)
    return relu(z)


def _activation_grads(kind: Activation, z: np.ndarray, theta):
    """Local derivatives ``(d act/dz, d act/dtheta)``; zero on the closed dead zone."""
    if kind is Activation.RELU:
        dz = (z > 0).astype(np.float64)
        return dz, np.zeros_like(z)
    live = np.abs(z) > theta
    dz = live.astype(np.float64)
    if kind is Activation.SOFT:
        return dz, -np.sign(z) * dz
    return dz, np.zeros_like(z)


@dataclass
class UnrolledNet:
    """K-layer unrolled network.

    ``weights[k]`` is ``(m, n)`` for a dense net, ``(v, p)`` for a
    block-structured net with one block shared by the ``u`` copies, or
    ``(u, v, p)`` for distinct per-block weights. ``mask`` optionally pins an
    irregular zero pattern on dense weights. ``quant_axis`` names the channel
    axis of the ternary/channel-wise scales.
    """

    weights: list[np.ndarray]
    thetas: np.ndarray
    delta: float = 1.0
    activation: Activation = Activation.SOFT
    scale: float = 1.0
    quant_mode: QuantMode = QuantMode.HIGH_RES
    structure: BlockStructure | None = None
    lambda0: float = 0.02
    mask: SparsityMask | None = None
    quant_axis: str = "row"

    def __post_init__(self):
        self.weights = [np.array(W, dtype=np.float64) for W in self.weights]
        self.thetas = np.array(self.thetas, dtype=np.float64).reshape(-1)
        self.activation = Activation(self.activation)
        self.quant_mode = QuantMode(self.quant_mode)
        self.validate()

    def validate(self) -> None:
        K = len(self.weights)
        if K < 1:
            raise ValueError("need at least one layer")
        if self.thetas.shape != (K,):
            raise DimensionError(f"{K} layers but {self.thetas.shape[0]} thresholds")
        if np.any(self.thetas < 0):
            raise ValueError("thresholds must be >= 0")
        if not 0 < self.delta <= 1:
            raise ValueError(f"delta must lie in (0, 1], got {self.delta}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        shapes = {W.shape for W in self.weights}
        if len(shapes) != 1:
            raise DimensionError(f"layers have different weight shapes {shapes}")
        for W in self.weights:
            if not np.all(np.isfinite(W)):
                raise ValueError("weights must be finite")
        shape = self.weights[0].shape
        if self.structure is not None:
            s = self.structure
            if shape not in ((s.v, s.p), (s.u, s.v, s.p)):
                raise DimensionError(f"weights {shape} do not fit structure {s}")
        elif len(shape) != 2:
            raise DimensionError("3-D weights need a block structure")
        if self.mask is not None:
            if self.structure is not None or self.mask.shape != shape:
                raise DimensionError("mask must match dense weight shape")
            for W in self.weights:
                if np.any(W[~self.mask.active]):
                    raise ValueError("weight is nonzero at a masked position")
        if self.quant_mode is QuantMode.ONE_BIT:
            for W in self.weights:
                vals = np.abs(W) if self.mask is None else np.abs(W[self.mask.active])
                if not np.all(vals == self.lambda0):
                    raise ValueError("one-bit weights must all be +-lambda0")

    @property
    def K(self) -> int:
        return len(self.weights)

    @property
    def n_blocks(self) -> int:
        return 1 if self.structure is None else self.structure.u

    @property
    def tied(self) -> bool:
        return self.weights[0].ndim == 2

    @property
    def block_shape(self) -> tuple[int, int]:
        return self.weights[0].shape[-2:]

    @property
    def io_shape(self) -> tuple[int, int]:
        """``(measurement length, signal length)``."""
        v, p = self.block_shape
        return v * self.n_blocks, p * self.n_blocks

    @property
    def weight_multiplier(self) -> float:
        return self.scale if self.quant_mode is QuantMode.ONE_BIT else 1.0

    def effective_weights(self) -> list[np.ndarray]:
        c = self.weight_multiplier
        return [c * W for W in self.weights]

    def copy(self) -> "UnrolledNet":
        return copy.deepcopy(self)

    def materialize(self) -> "UnrolledNet":
        """Dense equivalent of a block-structured net (tests and tiny sizes only)."""
        if self.structure is None:
            return self.copy()
        u = self.structure.u
        dense = []
        for W in self.weights:
            blocks = W[None] if W.ndim == 2 else W
            dense.append(BlockDiagOperator(blocks, u).materialize())
        out = self.copy()
        out.weights, out.structure = dense, None
        if self.quant_mode is QuantMode.ONE_BIT:
            # off-block zeros are structural; keep the one-bit invariant via a mask
            from .physics import mask_from_block
            out.mask = mask_from_block(self.structure)
        out.validate()
        return out


def init_lista(A, K: int, theta: float = 0.1, delta: float = 1.0,
               activation: Activation = Activation.SOFT,
               structure: BlockStructure | None = None, tied: bool = True) -> UnrolledNet:
    """ISTA initialization: ``W_k = A / L`` and ``theta_k = theta / L`` with ``L = ||A||^2``.

    Without ``structure`` the net is dense even when ``A`` is block-diagonal.
    """
    if isinstance(A, BlockDiagOperator) and structure is None:
        # no structure requested: a dense net over the materialized operator
        A = A.materialize()
    if isinstance(A, BlockDiagOperator):
        blocks = A.blocks
        L = max(np.linalg.norm(b, 2) ** 2 for b in blocks)
        if tied and not A.tied:
            W0 = blocks.mean(axis=0) / L
        elif tied:
            W0 = blocks[0] / L
        else:
            W0 = np.broadcast_to(blocks, (structure.u,) + blocks.shape[1:]) / L
    else:
        A = np.asarray(A, dtype=np.float64)
        L = np.linalg.norm(A, 2) ** 2
        W0 = A / L
    return UnrolledNet([W0.copy() for _ in range(K)], np.full(K, theta / L), delta=delta,
                       activation=activation, structure=structure)


@dataclass
class ForwardTrace:
    """States ``x_0..x_K`` and pre-activations ``z_1..z_K``.

    For a single sample the arrays are 1-D; batched traces carry a leading
    batch axis. ``residuals[k]`` is ``A x_k - y`` for ``k < K``.
    """

    states: list[np.ndarray]
    pre_activations: list[np.ndarray]
    residuals: list[np.ndarray] = field(default_factory=list, repr=False)
    n_blocks: int = 1


def _sensing_blocks(A, u: int) -> BlockDiagOperator:
    if isinstance(A, BlockDiagOperator):
        if u == 1 and A.repeat > 1:
            # dense net on block data: the whole operator acts as a single block
            return BlockDiagOperator(A.materialize()[None], 1)
        if A.repeat != u:
            raise DimensionError(f"operator has {A.repeat} blocks, net expects {u}")
        return A
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError("sensing matrix must be 2-D")
    if u != 1:
        raise DimensionError("block-structured net needs a BlockDiagOperator")
    return BlockDiagOperator(A[None], 1)


def _wT(W: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``W^T r`` for every block: ``(B, u, v) -> (B, u, p)``."""
    if W.ndim == 2:
        return R @ W
    return np.einsum("buv,uvp->bup", R, W)


def _w(W: np.ndarray, G: np.ndarray) -> np.ndarray:
    """``W g`` for every block: ``(B, u, p) -> (B, u, v)``."""
    if W.ndim == 2:
        return G @ W.T
    return np.einsum("bup,uvp->buv", G, W)


def _check_io(net: UnrolledNet, op: BlockDiagOperator):
    if op.block_shape != tuple(net.block_shape):
        raise DimensionError(
            f"sensing blocks {op.block_shape} do not match weight blocks {net.block_shape}")


def forward_batch(net: UnrolledNet, A, Y, X0=None) -> ForwardTrace:
    """Batched forward pass. ``Y`` is ``(batch, m)``; states are ``(batch, n)``."""
    u = net.n_blocks
    op = _sensing_blocks(A, u)
    _check_io(net, op)
    v, p = op.block_shape
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != v * u:
        raise DimensionError(f"measurements must be (batch, {v * u}), got {Y.shape}")
    B = Y.shape[0]
    Yb = Y.reshape(B, u, v)
    X = np.zeros((B, u, p)) if X0 is None else np.asarray(X0, dtype=np.float64).reshape(B, u, p)
    states, pre, res = [X], [], []
    for k, W in enumerate(net.effective_weights()):
        R = op.apply_blocks(X) - Yb
        Z = net.delta * X - _wT(W, R)
        X = activate(net.activation, Z, net.thetas[k])
        if not np.all(np.isfinite(X)):
            raise NumericalError(f"non-finite state at layer {k + 1}", layer=k + 1)
        res.append(R)
        pre.append(Z)
        states.append(X)
    flat = lambda arrs, d: [a.reshape(B, d) for a in arrs]  # noqa: E731
    return ForwardTrace(flat(states, u * p), flat(pre, u * p), flat(res, u * v), n_blocks=u)


def forward(net: UnrolledNet, A, y, x0=None) -> ForwardTrace:
    """Single-sample forward pass; ``x0`` defaults to zero."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError("y must be a vector")
    X0 = None if x0 is None else np.asarray(x0, dtype=np.float64)[None]
    tr = forward_batch(net, A, y[None], X0)
    one = lambda arrs: [a[0] for a in arrs]  # noqa: E731
    return ForwardTrace(one(tr.states), one(tr.pre_activations), one(tr.residuals), tr.n_blocks)


def loss(x_final, x_opt, kind: LossKind = LossKind.SQUARED) -> float:
    x_final = np.asarray(x_final, dtype=np.float64)
    x_opt = np.asarray(x_opt, dtype=np.float64)
    if x_final.shape != x_opt.shape:
        raise DimensionError(f"shape mismatch {x_final.shape} vs {x_opt.shape}")
    sq = float(np.sum((x_final - x_opt) ** 2))
    return sq if LossKind(kind) is LossKind.SQUARED else float(np.sqrt(sq))


def _loss_seed(XK: np.ndarray, Xopt: np.ndarray, kind: LossKind):
    """Mean loss over the batch and its gradient w.r.t. the final states."""
    E = XK - Xopt
    B = E.shape[0]
    sq = np.sum(E * E, axis=1)
    if LossKind(kind) is LossKind.SQUARED:
        return float(sq.mean()), 2.0 * E / B
    nrm = np.sqrt(sq)
    safe = np.where(nrm > 0, nrm, 1.0)
    return float(nrm.mean()), E / safe[:, None] / B


@dataclass
class Gradients:
    dW: list[np.ndarray]
    dtheta: np.ndarray
    dscale: float

    def is_finite(self) -> bool:
        return (all(np.all(np.isfinite(g)) for g in self.dW)
                and np.all(np.isfinite(self.dtheta)) and np.isfinite(self.dscale))


def _backward(net: UnrolledNet, op: BlockDiagOperator, trace: ForwardTrace,
              G: np.ndarray) -> Gradients:
    u = net.n_blocks
    v, p = op.block_shape
    B = G.shape[0]
    c = net.weight_multiplier
    Weff = net.effective_weights()
    G = G.reshape(B, u, p)
    dW, dtheta = [None] * net.K, np.zeros(net.K)
    dscale = 0.0
    for k in range(net.K - 1, -1, -1):
        Z = trace.pre_activations[k].reshape(B, u, p)
        R = trace.residuals[k].reshape(B, u, v)
        dz_loc, dth_loc = _activation_grads(net.activation, Z, net.thetas[k])
        dZ = G * dz_loc
        dtheta[k] = float(np.sum(G * dth_loc))
        if net.weights[k].ndim == 2:
            dWeff = -R.reshape(-1, v).T @ dZ.reshape(-1, p)
        else:
            dWeff = -np.einsum("buv,bup->uvp", R, dZ)
        if net.quant_mode is QuantMode.ONE_BIT:
            dscale += float(np.sum(dWeff * net.weights[k]))
        dW[k] = c * dWeff
        dR = -_w(Weff[k], dZ)
        G = net.delta * dZ + op.apply_blocks_T(dR)
    return Gradients(dW, dtheta, dscale)


def backward(net: UnrolledNet, A, y, x_opt, trace: ForwardTrace,
             kind: LossKind = LossKind.SQUARED) -> Gradients:
    """Reverse-mode gradients of ``loss(x_K, x_opt)`` for one sample or a batch.

    Batched inputs (2-D ``y``/``x_opt``) give gradients of the mean loss.
    """
    op = _sensing_blocks(A, net.n_blocks)
    y = np.asarray(y, dtype=np.float64)
    x_opt = np.asarray(x_opt, dtype=np.float64)
    single = y.ndim == 1
    if single:
        y, x_opt = y[None], x_opt[None]
        trace = ForwardTrace([s[None] for s in trace.states],
                             [z[None] for z in trace.pre_activations],
                             [r[None] for r in trace.residuals], trace.n_blocks)
    if (len(trace.states) != net.K + 1 or len(trace.residuals) != net.K
            or trace.states[-1].shape != x_opt.shape or trace.n_blocks != net.n_blocks
            or trace.residuals[0].shape != y.shape):
        raise DimensionError("trace does not belong to this net and input")
    _, G = _loss_seed(trace.states[-1], x_opt, kind)
    return _backward(net, op, trace, G)


_WORKERS = 1


def set_workers(n: int) -> None:
    """Split gradient batches over ``n`` threads; results are reduced in chunk order."""
    global _WORKERS
    if n < 1:
        raise ValueError("workers must be >= 1")
    _WORKERS = int(n)


def _chunk_loss_and_grad(net, op, Y, Xopt, kind):
    trace = forward_batch(net, op, Y)
    value, G = _loss_seed(trace.states[-1], Xopt, kind)
    return value, _backward(net, op, trace, G)


def loss_and_grad(net: UnrolledNet, A, Y, Xopt, kind: LossKind = LossKind.SQUARED):
    """Mean batch loss and its gradients in one forward/backward sweep."""
    op = _sensing_blocks(A, net.n_blocks)
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    Xopt = np.atleast_2d(np.asarray(Xopt, dtype=np.float64))
    B = Y.shape[0]
    if _WORKERS == 1 or B < 2 * _WORKERS:
        value, grads = _chunk_loss_and_grad(net, op, Y, Xopt, kind)
    else:
        bounds = np.linspace(0, B, _WORKERS + 1).astype(int)
        with ThreadPoolExecutor(_WORKERS) as pool:
            parts = list(pool.map(
                lambda ab: _chunk_loss_and_grad(net, op, Y[ab[0]:ab[1]], Xopt[ab[0]:ab[1]], kind),
                zip(bounds[:-1], bounds[1:])))
        w = np.diff(bounds) / B
        value = float(sum(wi * v for wi, (v, _) in zip(w, parts)))
        grads = Gradients([sum(wi * g.dW[k] for wi, (_, g) in zip(w, parts))
                           for k in range(net.K)],
                          sum(wi * g.dtheta for wi, (_, g) in zip(w, parts)),
                          float(sum(wi * g.dscale for wi, (_, g) in zip(w, parts))))
    if not grads.is_finite():
        raise NumericalError("non-finite gradient")
    return value, grads


def batch_loss(net: UnrolledNet, A, Y, Xopt, kind: LossKind = LossKind.SQUARED) -> float:
    trace = forward_batch(net, A, Y)
    return _loss_seed(trace.states[-1], np.asarray(Xopt, dtype=np.float64), kind)[0]


def per_layer_errors(net: UnrolledNet, dataset) -> np.ndarray:
    """Mean NMSE (dB) of every layer's output ``x_1..x_K`` against the ground truth."""
    from .diag import nmse_db

    if len(dataset) == 0:
        raise ValueError("empty dataset")
    trace = forward_batch(net, dataset.A, dataset.Y)
    return np.array([nmse_db(Xk, dataset.X) for Xk in trace.states[1:]])


@dataclass
class FcnNet:
    """Fully connected baseline: ``x_1 = act(W_1^T y)``, ``x_k = act(W_k^T x_{k-1})``.

    ``W_1`` is ``(m, n)`` and the remaining layers are ``(n, n)``. With ReLU
    activation the thresholds are unused.
    """

    weights: list[np.ndarray]
    thetas: np.ndarray
    activation: Activation = Activation.SOFT

    def __post_init__(self):
        self.weights = [np.array(W, dtype=np.float64) for W in self.weights]
        self.thetas = np.array(self.thetas, dtype=np.float64).reshape(-1)
        self.activation = Activation(self.activation)

    @property
    def K(self) -> int:
        return len(self.weights)

    @classmethod
    def init(cls, m: int, n: int, K: int, activation=Activation.SOFT, theta: float = 0.01,
             seed: int = 0) -> "FcnNet":
        rng = np.random.default_rng(seed)
        Ws = [rng.standard_normal((m, n)) / np.sqrt(m)]
        Ws += [np.eye(n) + rng.standard_normal((n, n)) * (0.1 / np.sqrt(n)) for _ in range(K - 1)]
        return cls(Ws, np.full(K, theta), activation)

    def forward_batch(self, Y):
        X = np.asarray(Y, dtype=np.float64)
        states, pre = [X], []
        for k, W in enumerate(self.weights):
            Z = X @ W
            X = activate(self.activation, Z, self.thetas[k])
            pre.append(Z)
            states.append(X)
        return states, pre

    def loss_and_grad(self, Y, Xopt, kind: LossKind = LossKind.SQUARED):
        states, pre = self.forward_batch(Y)
        value, G = _loss_seed(states[-1], np.asarray(Xopt, dtype=np.float64), kind)
        dW, dtheta = [None] * self.K, np.zeros(self.K)
        for k in range(self.K - 1, -1, -1):
            dz_loc, dth_loc = _activation_grads(self.activation, pre[k], self.thetas[k])
            dZ = G * dz_loc
            dtheta[k] = float(np.sum(G * dth_loc))
            dW[k] = states[k].T @ dZ
            G = dZ @ self.weights[k].T
        return value, Gradients(dW, dtheta, 0.0)

    def predict(self, Y) -> np.ndarray:
        return self.forward_batch(Y)[0][-1]
