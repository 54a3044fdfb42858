"""Training pipeline: high-resolution pretraining, Stage I QAT, Stage II scale."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError
from .optim import make_optimizer, minibatches
from .physics import BlockStructure
from .quant import (QatMode, QuantConfig, ShadowState, finalize_binary, prox_epoch,
                    stage2_scale, ste_epoch)
from .unroll import Activation, FcnNet, LossKind, QuantMode, UnrolledNet, init_lista

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    K: int = 5
    delta: float = 1.0
    activation: Activation = Activation.SOFT
    quant_mode: QuantMode = QuantMode.ONE_BIT
    structure: BlockStructure | None = None
    tied: bool = True
    theta_init: float = 0.1
    lambda0: float = 0.02
    channel_axis: str = "row"

    def __post_init__(self):
        self.activation = Activation(self.activation)
        self.quant_mode = QuantMode(self.quant_mode)
        if isinstance(self.structure, dict):
            self.structure = BlockStructure(**self.structure.get("block", self.structure))
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    quant: QuantConfig = field(default_factory=QuantConfig)
    pretrain: bool = True
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-3
    stage2_epochs: int = 0
    stage2_lr: float = 1e-3
    batch_size: int | None = 64
    seed: int = 0
    loss: LossKind = LossKind.SQUARED

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.quant, dict):
            self.quant = QuantConfig(**self.quant)
        self.loss = LossKind(self.loss)

    def to_json(self) -> dict:
        d = asdict(self)
        s = self.model.structure
        d["model"]["structure"] = None if s is None else s.to_json()
        return _plain(d)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "value"):
        return obj.value
    return obj


@dataclass
class TrainResult:
    net: UnrolledNet
    history: list[dict] = field(default_factory=list)
    wall_times: dict[str, float] = field(default_factory=dict)
    scale: float | None = None


EpochHook = Callable[[str, int, UnrolledNet], None]


def build_net(A, cfg: ModelConfig) -> UnrolledNet:
    net = init_lista(A, cfg.K, cfg.theta_init, cfg.delta, cfg.activation, cfg.structure,
                     cfg.tied)
    net.lambda0 = cfg.lambda0
    net.quant_axis = cfg.channel_axis
    return net


def _run_stage(name: str, net, shadow, ds, epochs: int, lr_of, cfg: TrainConfig, history,
               on_epoch: EpochHook | None, mode: QuantMode, prox_beta: float | None = None):
    opt = make_optimizer(cfg.quant.optimizer)
    for epoch in range(epochs):
        lr = lr_of(epoch)
        try:
            if prox_beta is None:
                net, shadow, value = ste_epoch(net, shadow, ds, lr, opt, cfg.batch_size,
                                               cfg.seed, epoch, mode, cfg.loss)
            else:
                net, shadow, value = prox_epoch(net, shadow, ds, lr, prox_beta, opt,
                                                cfg.batch_size, cfg.seed, epoch, cfg.loss)
        except NumericalError as exc:
            exc.stage, exc.epoch = name, epoch
            raise
        if not np.isfinite(value):
            raise NumericalError(f"NaN loss in {name}", stage=name, epoch=epoch)
        history.append({"stage": name, "epoch": epoch, "lr": lr, "loss": value})
        log.debug("%s epoch %d lr %.3g loss %.6g", name, epoch, lr, value)
        if on_epoch is not None:
            on_epoch(name, epoch, net)
    return net, shadow


def train(ds, cfg: TrainConfig, on_epoch: EpochHook | None = None) -> TrainResult:
    """Run pretraining, Stage I and (for one-bit nets) Stage II on one dataset split.

    Stage ordering is fixed; ``cfg.pretrain = False`` skips the warm start.
    """
    mode = cfg.model.quant_mode
    net = build_net(ds.A, cfg.model)
    history: list[dict] = []
    times: dict[str, float] = {}

    t0 = time.perf_counter()
    if cfg.pretrain and cfg.pretrain_epochs > 0:
        shadow = ShadowState.from_net(net)
        net, _ = _run_stage("pretrain", net, shadow, ds, cfg.pretrain_epochs,
                            lambda e: cfg.pretrain_lr, cfg, history, on_epoch,
                            QuantMode.HIGH_RES)
    times["pretrain"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    q = cfg.quant
    shadow = ShadowState.from_net(net, q.lambda0)
    shadow.axis = cfg.model.channel_axis
    if mode is QuantMode.HIGH_RES:
        net, _ = _run_stage("stage1", net, shadow, ds, q.epochs, q.schedule, cfg, history,
                            on_epoch, QuantMode.HIGH_RES)
    elif mode is QuantMode.ONE_BIT and q.mode is QatMode.PROX:
        net, shadow = _run_stage("stage1", net, shadow, ds, q.epochs, q.schedule, cfg, history,
                                 on_epoch, mode, prox_beta=q.beta)
        net = finalize_binary(net, shadow)
    else:
        net, shadow = _run_stage("stage1", net, shadow, ds, q.epochs, q.schedule, cfg, history,
                                 on_epoch, mode)
    if mode is QuantMode.ONE_BIT:
        net = finalize_binary(net, shadow)
        net.validate()
    times["stage1"] = time.perf_counter() - t0

    result = TrainResult(net, history, times)
    if mode is QuantMode.ONE_BIT and cfg.stage2_epochs > 0:
        t0 = time.perf_counter()

        def hook(epoch, value, scale):
            history.append({"stage": "stage2", "epoch": epoch, "lr": cfg.stage2_lr,
                            "loss": value, "scale": scale})
            if on_epoch is not None:
                on_epoch("stage2", epoch, net)

        res = stage2_scale(net, ds, cfg.stage2_lr, cfg.stage2_epochs, q.optimizer,
                           cfg.batch_size, cfg.seed, cfg.loss, callback=hook)
        result.scale = res.scale
        times["stage2"] = time.perf_counter() - t0
    return result


def train_fcn(ds, K: int, activation=Activation.SOFT, epochs: int = 100, lr: float = 1e-3,
              batch_size: int | None = 64, seed: int = 0, theta_init: float = 0.01,
              optimizer: str = "adam") -> FcnNet:
    """Train the fully connected baseline on ``(Y, X)`` pairs."""
    m, n = ds.Y.shape[1], ds.X.shape[1]
    net = FcnNet.init(m, n, K, activation, theta_init, seed)
    opt = make_optimizer(optimizer)
    for epoch in range(epochs):
        for idx in minibatches(len(ds), batch_size, seed, epoch):
            _, g = net.loss_and_grad(ds.Y[idx], ds.X[idx])
            params = {f"W{k}": W for k, W in enumerate(net.weights)}
            grads = {f"W{k}": dW for k, dW in enumerate(g.dW)}
            params["theta"], grads["theta"] = net.thetas, g.dtheta
            opt.step(params, grads, lr)
            np.maximum(net.thetas, 0.0, out=net.thetas)
    return net
