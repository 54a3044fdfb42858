"""Quantization-aware training of unrolled nets.

Stage I trains latent full-precision weights under a one-bit projection,
either by lazy projection (straight-through: gradients at the projected
weights, updates on the latent ones) or by an l1-type proximal regularizer
pulling latents toward ``+-lambda0``. Stage II then learns one global scale
shared by every layer with signs and thresholds frozen. Ternary and
channel-wise binarization are provided as baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import NumericalError
from .optim import SGD, StepDecay, make_optimizer, minibatches
from .physics import SparsityMask
from .unroll import LossKind, QuantMode, UnrolledNet, batch_loss, loss_and_grad

log = logging.getLogger(__name__)

__all__ = [
    "QatMode",
    "QuantConfig",
    "ShadowState",
    "channelwise_binarize",
    "effective_bits",
    "finalize_binary",
    "prox_epoch",
    "prox_regularizer",
    "prox_step",
    "sign_project",
    "stage2_scale",
    "ste_epoch",
    "ternary_project",
]


class QatMode(str, Enum):
    LAZY = "lazy"
    PROX = "prox"


@dataclass
class QuantConfig:
    mode: QatMode = QatMode.LAZY
    lambda0: float = 0.02
    beta: float = 0.0
    lr0: float = 1e-3
    decay: float = 0.9
    decay_every: int = 10
    epochs: int = 0
    seed: int = 0
    optimizer: str = "adam"
    batch_size: int | None = 64

    def __post_init__(self):
        self.mode = QatMode(self.mode)
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")

    @property
    def schedule(self) -> StepDecay:
        return StepDecay(self.lr0, self.decay, self.decay_every)


def _sign(W: np.ndarray) -> np.ndarray:
    return np.where(W >= 0, 1.0, -1.0)


def sign_project(latent_W, lambda0: float, mask: SparsityMask | None = None) -> np.ndarray:
    """``lambda0 * sign(W)`` with ``sign(0) = +1``; masked entries become exact zeros."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    out = lambda0 * _sign(np.asarray(latent_W, dtype=np.float64))
    if mask is not None:
        out = np.where(mask.active, out, 0.0)
    return out


def prox_regularizer(theta, lambda0: float):
    """Distance to the nearer of the two anchors ``+-lambda0``."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    r = np.minimum(np.abs(theta - lambda0), np.abs(theta + lambda0))
    return float(r) if r.ndim == 0 else r


def prox_step(theta, t: float, lambda0: float):
    """Proximal map of ``t * prox_regularizer``: move toward the nearer anchor by ``t``.

    Never overshoots the anchor; ``theta = 0`` goes toward ``+lambda0``.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    theta = np.asarray(theta, dtype=np.float64)
    anchor = np.where(theta >= 0, lambda0, -lambda0)
    out = np.where(theta > anchor, np.maximum(theta - t, anchor), np.minimum(theta + t, anchor))
    return float(out) if out.ndim == 0 else out


def _row_scales(W: np.ndarray, axis: str) -> np.ndarray:
    """Mean absolute value per channel, broadcastable against ``W``."""
    A = np.abs(W)
    if axis == "row":
        return A.mean(axis=-1, keepdims=True)
    if axis == "column":
        return A.mean(axis=-2, keepdims=True)
    if axis == "matrix":
        return A.mean(axis=(-2, -1), keepdims=True)
    raise ValueError(f"unknown channel axis {axis!r}")


def ternary_project(W, axis: str = "row") -> tuple[np.ndarray, np.ndarray]:
    """Ternary codes in ``{-1, 0, 1}`` and per-channel scales.

    Each channel is divided by its mean magnitude (1 for an all-zero channel);
    normalized values inside ``(-0.5, 0.5)`` become 0, the rest their sign.
    """
    W = np.asarray(W, dtype=np.float64)
    g = _row_scales(W, axis)
    g = np.where(g > 0, g, 1.0)
    q = W / g
    tern = np.where(np.abs(q) < 0.5, 0.0, np.sign(q))
    return tern, g


def channelwise_binarize(W, axis: str = "row") -> tuple[np.ndarray, np.ndarray]:
    """Signs (``sign(0) = +1``) and per-channel mean-magnitude scales."""
    W = np.asarray(W, dtype=np.float64)
    return _sign(W), _row_scales(W, axis)


@dataclass
class ShadowState:
    """Latent full-precision parameters kept alongside the projected net."""

    latent: list[np.ndarray]
    thetas: np.ndarray
    lambda0: float
    mask: SparsityMask | None = None
    axis: str = "row"

    @classmethod
    def from_net(cls, net: UnrolledNet, lambda0: float | None = None) -> "ShadowState":
        return cls([W.copy() for W in net.effective_weights()], net.thetas.copy(),
                   net.lambda0 if lambda0 is None else lambda0, net.mask)

    def params(self) -> dict[str, np.ndarray]:
        p = {f"W{k}": W for k, W in enumerate(self.latent)}
        p["theta"] = self.thetas
        return p


def _grad_dict(grads) -> dict[str, np.ndarray]:
    g = {f"W{k}": dW for k, dW in enumerate(grads.dW)}
    g["theta"] = grads.dtheta
    return g


def _dequant(pair):
    codes, gamma = pair
    return codes * gamma


def project_net(net: UnrolledNet, shadow: ShadowState, mode: QuantMode = QuantMode.ONE_BIT):
    """Refresh ``net`` in place from the latent state under the given quantizer."""
    if mode is QuantMode.ONE_BIT:
        net.weights = [sign_project(W, shadow.lambda0, shadow.mask) for W in shadow.latent]
        net.lambda0 = shadow.lambda0
        net.scale = 1.0
    elif mode is QuantMode.TERNARY:
        net.weights = [_dequant(ternary_project(W, shadow.axis)) for W in shadow.latent]
    elif mode is QuantMode.CHANNEL_WISE:
        net.weights = [_dequant(channelwise_binarize(W, shadow.axis)) for W in shadow.latent]
    else:
        net.weights = [W.copy() for W in shadow.latent]
    if shadow.mask is not None:
        net.weights = [np.where(shadow.mask.active, W, 0.0) for W in net.weights]
    net.thetas = shadow.thetas.copy()
    net.quant_mode = mode
    net.quant_axis = shadow.axis
    return net


def _apply_update(shadow: ShadowState, grads, lr: float, optimizer) -> None:
    optimizer.step(shadow.params(), _grad_dict(grads), lr)
    np.maximum(shadow.thetas, 0.0, out=shadow.thetas)
    if shadow.mask is not None:
        for W in shadow.latent:
            W[~shadow.mask.active] = 0.0


def ste_update(net: UnrolledNet, shadow: ShadowState, grads, lr: float, optimizer=None,
               mode: QuantMode = QuantMode.ONE_BIT):
    """One lazy-projection update: step the latents, then re-project the net."""
    _apply_update(shadow, grads, lr, optimizer or SGD())
    return project_net(net, shadow, mode), shadow


def ste_epoch(net: UnrolledNet, shadow: ShadowState, dataset, lr: float, optimizer=None,
              batch_size: int | None = None, seed: int | None = None, epoch: int = 0,
              mode: QuantMode = QuantMode.ONE_BIT, kind: LossKind = LossKind.SQUARED):
    """Lazy projection over one pass of the data.

    Gradients are taken at the projected weights and applied to the latents;
    thresholds are updated directly. Returns ``(net, shadow, mean_loss)``.
    """
    optimizer = optimizer or SGD()
    project_net(net, shadow, mode)
    total = 0.0
    for idx in minibatches(len(dataset), batch_size, seed, epoch):
        value, grads = loss_and_grad(net, dataset.A, dataset.Y[idx], dataset.X[idx], kind)
        if not grads.is_finite():
            raise NumericalError("non-finite gradient in lazy-projection epoch", epoch=epoch)
        total += value * len(idx)
        ste_update(net, shadow, grads, lr, optimizer, mode)
    return net, shadow, total / len(dataset)


def prox_epoch(net: UnrolledNet, shadow: ShadowState, dataset, lr: float, beta: float,
               optimizer=None, batch_size: int | None = None, seed: int | None = None,
               epoch: int = 0, kind: LossKind = LossKind.SQUARED):
    """Regularized QAT epoch: gradient step at the latents, then ``prox_step`` with ``t = lr*beta``.

    ``net`` is left holding the (unprojected) latent weights in high-resolution
    mode; call :func:`finalize_binary` at the end of Stage I.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    optimizer = optimizer or SGD()
    project_net(net, shadow, QuantMode.HIGH_RES)
    total = 0.0
    for idx in minibatches(len(dataset), batch_size, seed, epoch):
        value, grads = loss_and_grad(net, dataset.A, dataset.Y[idx], dataset.X[idx], kind)
        if not grads.is_finite():
            raise NumericalError("non-finite gradient in proximal epoch", epoch=epoch)
        total += value * len(idx)
        _apply_update(shadow, grads, lr, optimizer)
        if beta > 0:
            for W in shadow.latent:
                W[...] = prox_step(W, lr * beta, shadow.lambda0)
                if shadow.mask is not None:
                    W[~shadow.mask.active] = 0.0
        project_net(net, shadow, QuantMode.HIGH_RES)
    return net, shadow, total / len(dataset)


def finalize_binary(net: UnrolledNet, shadow: ShadowState) -> UnrolledNet:
    return project_net(net, shadow, QuantMode.ONE_BIT)


@dataclass
class ScaleResult:
    scale: float
    effective_scale: float
    losses: list[float] = field(default_factory=list)
    stopped_early: bool = False


def stage2_scale(net: UnrolledNet, dataset, lr: float = 1e-3, epochs: int = 50,
                 optimizer="adam", batch_size: int | None = 64, seed: int | None = 0,
                 kind: LossKind = LossKind.SQUARED, patience: int = 20,
                 callback: Callable | None = None) -> ScaleResult:
    """Learn the global scale ``lambda`` (starting at 1) with everything else frozen.

    The returned scale is the best one seen on the full dataset, so the loss
    never ends above the starting loss. Stops after ``patience`` consecutive
    epochs of increasing loss. ``net.scale`` is set to the result.
    """
    if net.quant_mode is not QuantMode.ONE_BIT:
        raise ValueError("stage II needs a one-bit net")
    opt = make_optimizer(optimizer) if isinstance(optimizer, str) else optimizer
    net.scale = 1.0
    scale = np.array(1.0)
    best_loss = batch_loss(net, dataset.A, dataset.Y, dataset.X, kind)
    best, prev, rising = 1.0, best_loss, 0
    losses = [best_loss]
    stopped = False
    for epoch in range(epochs):
        for idx in minibatches(len(dataset), batch_size, seed, epoch):
            _, grads = loss_and_grad(net, dataset.A, dataset.Y[idx], dataset.X[idx], kind)
            if not np.isfinite(grads.dscale):
                raise NumericalError("non-finite scale gradient", stage="stage2", epoch=epoch)
            opt.step({"scale": scale}, {"scale": np.array(grads.dscale)}, lr)
            scale[...] = max(float(scale), 1e-6)
            net.scale = float(scale)
        cur = batch_loss(net, dataset.A, dataset.Y, dataset.X, kind)
        losses.append(cur)
        if callback is not None:
            callback(epoch, cur, float(scale))
        if cur < best_loss:
            best_loss, best = cur, float(scale)
        rising = rising + 1 if cur > prev else 0
        prev = cur
        if rising >= patience:
            log.info("stage II stopped after %d rising epochs", patience)
            stopped = True
            break
    net.scale = best
    return ScaleResult(best, best * net.lambda0, losses, stopped)


def _stored_weight_count(net: UnrolledNet) -> int:
    if net.mask is not None:
        return net.K * net.mask.n_active
    return sum(W.size for W in net.weights)


def _channel_count(net: UnrolledNet) -> int:
    axis = getattr(net, "quant_axis", "row")
    W = net.weights[0]
    lead = W.shape[0] if W.ndim == 3 else 1
    per = {"row": W.shape[-2], "column": W.shape[-1], "matrix": 1}[axis]
    return net.K * lead * per


def effective_bits(net: UnrolledNet) -> int:
    """Stored bits: 1 per binary weight, 2 per ternary weight, 32 per real scalar.

    Structural zeros (outside the block pattern or the mask) cost nothing.
    """
    w = _stored_weight_count(net)
    thresholds = 32 * net.K
    mode = net.quant_mode
    if mode is QuantMode.ONE_BIT:
        return w + thresholds + 32
    if mode is QuantMode.TERNARY:
        return 2 * w + 32 * _channel_count(net) + thresholds
    if mode is QuantMode.CHANNEL_WISE:
        return w + 32 * _channel_count(net) + thresholds
    return 32 * w + thresholds
