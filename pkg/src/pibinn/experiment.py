"""Command-level workflows shared by the CLI, the scripts and the acceptance tests."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from . import diag
from .checkpoint import save_checkpoint
from .data import Dataset, DatasetSpec, gen_dataset, load_dataset, save_dataset
from .errors import ConfigError, DimensionError
from .linalg import BlockDiagOperator, as_dense
from .physics import BlockStructure, SparsityMask, mask_from_block, overlap_fraction
from .quant import effective_bits
from .train import ModelConfig, TrainConfig, train
from .unroll import Activation, FcnNet, QuantMode, UnrolledNet, forward_batch

log = logging.getLogger(__name__)

__all__ = [
    "compare_schemes",
    "diagnose",
    "evaluate",
    "fixed_scale_nmse",
    "gen_data",
    "load_splits",
    "resolve_dataset",
    "run_training",
    "sample_efficiency",
    "scaling_sweep",
    "spectral_study",
    "stored_weight_count",
    "ternary_overlap",
    "train_config_from_json",
    "write_diagnostics",
    "write_table",
]


def load_splits(path) -> tuple[Dataset | None, Dataset | None]:
    """``(train, test)`` from a dataset root, or a single split directory."""
    root = Path(path)
    if (root / "manifest.json").exists():
        ds = load_dataset(root)
        return (ds, None) if ds.split == "train" else (None, ds)
    train_ds = load_dataset(root / "train")
    test_ds = load_dataset(root / "test") if (root / "test" / "manifest.json").exists() else None
    return train_ds, test_ds


def resolve_dataset(ref) -> tuple[Dataset, Dataset | None]:
    """Dataset reference from a config: a directory path or an inline spec."""
    if isinstance(ref, str):
        train_ds, test_ds = load_splits(ref)
        if train_ds is None:
            raise ConfigError(f"{ref}: no training split")
        return train_ds, test_ds
    return gen_dataset(DatasetSpec(**ref))


def train_config_from_json(cfg: dict) -> TrainConfig:
    keys = ("pretrain", "pretrain_epochs", "pretrain_lr", "stage2_epochs", "stage2_lr",
            "batch_size", "loss", "seed")
    kw = {k: cfg[k] for k in keys if k in cfg}
    quant = dict(cfg["quant"])
    quant.setdefault("batch_size", cfg.get("batch_size", 64))
    quant.setdefault("seed", cfg.get("seed", 0))
    model = ModelConfig(**cfg["model"])
    quant.setdefault("lambda0", model.lambda0)
    return TrainConfig(model=model, quant=quant, **kw)


def stored_weight_count(net: UnrolledNet) -> int:
    if net.mask is not None:
        return net.K * net.mask.n_active
    return int(sum(W.size for W in net.weights))


def _check_compatible(net, ds: Dataset) -> None:
    m, n = ds.Y.shape[1], ds.X.shape[1]
    io = net.io_shape if isinstance(net, UnrolledNet) else (net.weights[0].shape[0],
                                                             net.weights[-1].shape[1])
    if tuple(io) != (m, n):
        raise DimensionError(f"checkpoint expects (m, n) = {tuple(io)}, dataset has {(m, n)}")
    if isinstance(net, UnrolledNet) and isinstance(ds.A, BlockDiagOperator):
        if net.structure is not None and net.block_shape != ds.A.block_shape:
            raise DimensionError(f"block {net.block_shape} vs dataset block {ds.A.block_shape}")


def _predict(net, ds: Dataset) -> list[np.ndarray]:
    if isinstance(net, FcnNet):
        return [net.predict(ds.Y)]
    return forward_batch(net, ds.A, ds.Y).states[1:]


def evaluate(net, train_ds: Dataset | None, test_ds: Dataset | None,
             wall_times: dict | None = None, extra: dict | None = None) -> diag.MetricsReport:
    """NMSE on both splits, per-layer test curve (train if no test split), bits, params."""
    nan = float("nan")
    for ds in (train_ds, test_ds):
        if ds is not None:
            _check_compatible(net, ds)
    tr = diag.nmse_db(_predict(net, train_ds)[-1], train_ds.X) if train_ds is not None else nan
    curve_ds = test_ds if test_ds is not None else train_ds
    layers = _predict(net, curve_ds)
    curve = [diag.nmse_db(Xk, curve_ds.X) for Xk in layers]
    te = curve[-1] if test_ds is not None else nan
    if isinstance(net, FcnNet):
        bits = 32 * sum(W.size for W in net.weights) + 32 * net.K
        params = int(sum(W.size for W in net.weights))
    else:
        bits, params = effective_bits(net), stored_weight_count(net)
    return diag.MetricsReport.build(tr, te, bits=bits, params=params, layer_curve=curve,
                                    wall_times=dict(wall_times or {}), extra=dict(extra or {}))


def _write_history(history: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "lr", "loss", "scale"])
        for r in history:
            w.writerow([r["stage"], r["epoch"], repr(float(r["lr"])), repr(float(r["loss"])),
                        "" if "scale" not in r else repr(float(r["scale"]))])


def run_training(cfg: dict, out=None, train_ds=None, test_ds=None):
    """Train from a validated config; write checkpoint, metrics and loss CSV under ``out``.

    Returns ``(net, report)``. A checkpoint is rewritten after every epoch so an
    interrupted run leaves the last finished epoch on disk.
    """
    if train_ds is None:
        train_ds, test_ds = resolve_dataset(cfg["dataset"])
    if "train_subset" in cfg:
        train_ds = train_ds.subset(cfg["train_subset"])
    tc = train_config_from_json(cfg)
    hook = None
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)

        def hook(stage, epoch, net):
            save_checkpoint(net, out / "checkpoint", {"stage": stage, "epoch": epoch})

    result = train(train_ds, tc, on_epoch=hook)
    extra = {"config": tc.to_json()}
    if result.scale is not None:
        extra["scale"] = result.scale
        extra["effective_scale"] = result.scale * result.net.lambda0
    report = evaluate(result.net, train_ds, test_ds, result.wall_times, extra)
    if out is not None:
        save_checkpoint(result.net, out / "checkpoint", {"stage": "final"})
        diag.emit_report(report, out / "metrics.json", "json")
        diag.emit_report(report, out / "layers.csv", "csv")
        _write_history(result.history, out / "losses.csv")
    return result.net, report


# --- diagnostics --------------------------------------------------------------

def diagnose(net: UnrolledNet, ds: Dataset, support=None, variant=None,
             delta: float | None = None) -> dict:
    """Spectral terms, good-set flags, coherence, theory thresholds, per-layer NMSE."""
    _check_compatible(net, ds)
    if support is None:
        support = ds.spec.fixed_support if ds.spec is not None else None
    if support is None:
        raise ConfigError("support-dependent diagnostics need a support set; pass --support "
                          "(or generate the dataset with fixed_support)")
    variant = Activation(variant if variant is not None else
                         ("soft" if net.activation is Activation.SOFT else "hard"))
    A = as_dense(ds.A)
    S = np.asarray(support, dtype=np.int64)
    rep = diag.good_set_check(net, A[:, S], S, variant, delta, Qbar=A)
    dense = net.materialize() if net.structure is not None else net
    states = forward_batch(dense, A, ds.Y).states
    theta = diag.theory_theta(states, ds.X, dense, A)
    curve = [diag.nmse_db(Xk, ds.X) for Xk in states[1:]]
    return {
        "variant": variant.value,
        "delta": net.delta if delta is None else delta,
        "support": S.tolist(),
        "fk": rep.fk.tolist(),
        "good": rep.good.tolist(),
        "all_good": rep.all_good,
        "mu": rep.mu.tolist(),
        "theory_theta": theta.tolist(),
        "learned_theta": net.thetas.tolist(),
        "layer_nmse_db": curve,
    }


def write_diagnostics(result: dict, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.json").write_text(json.dumps(diag._json_safe(result), indent=2) + "\n")
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "fk", "good", "mu", "theory_theta", "learned_theta", "layer_nmse_db"])
        for k in range(len(result["fk"])):
            nm = result["layer_nmse_db"][k]
            w.writerow([k + 1, repr(result["fk"][k]), int(result["good"][k]),
                        repr(result["mu"][k]), repr(result["theory_theta"][k]),
                        repr(result["learned_theta"][k]),
                        repr(max(nm, diag.CSV_FLOOR_DB))])


# --- scheme comparison --------------------------------------------------------

def _physics_mask(ds: Dataset) -> SparsityMask | None:
    if isinstance(ds.A, BlockDiagOperator) and ds.A.repeat > 1:
        v, p = ds.A.block_shape
        return mask_from_block(BlockStructure(ds.A.repeat, v, p))
    return None


def ternary_overlap(net: UnrolledNet, physics: SparsityMask) -> float | None:
    """Share of the ternary zeros (pooled over layers) that are also physics zeros."""
    dense = net.materialize() if net.structure is not None else net
    zeros = np.vstack([W != 0 for W in dense.weights])
    ref = np.vstack([physics.active] * net.K)
    return overlap_fraction(SparsityMask(zeros), SparsityMask(ref))


def compare_schemes(dataset_ref, schemes: list[dict], out=None) -> list[dict]:
    """Train every scheme on one shared dataset and tabulate NMSE, params, bits, overlap."""
    for s in schemes:
        if "dataset" in s and s["dataset"] != dataset_ref:
            raise ConfigError(f"scheme {s.get('name', '?')!r} uses a different dataset")
    train_ds, test_ds = resolve_dataset(dataset_ref)
    physics = _physics_mask(train_ds)
    rows = []
    for i, s in enumerate(schemes):
        name = s.get("name") or f"{s['model'].get('quant_mode', 'one_bit')}_{i}"
        sub = None if out is None else Path(out) / name
        net, rep = run_training(s, sub, train_ds, test_ds)
        overlap = None
        if net.quant_mode is QuantMode.TERNARY and physics is not None:
            overlap = ternary_overlap(net, physics)
        rows.append({"scheme": name, "quant_mode": net.quant_mode.value,
                     "train_nmse_db": rep.train_nmse_db, "test_nmse_db": rep.test_nmse_db,
                     "gap_db": rep.gap_db, "params": rep.params, "bits": rep.bits,
                     "overlap": overlap})
    if out is not None:
        write_table(rows, Path(out) / "compare.csv")
    return rows


def write_table(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["scheme", "quant_mode", "train_nmse_db", "test_nmse_db", "gap_db", "params", "bits",
            "overlap"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else r[c] for c in cols])


def gen_data(spec: DatasetSpec, out) -> tuple[Path, Path]:
    train_ds, test_ds = gen_dataset(spec)
    out = Path(out)
    return save_dataset(train_ds, out / "train"), save_dataset(test_ds, out / "test")



# --- studies shared by scripts/ and the acceptance suite -----------------------

def _override(cfg: dict, **changes) -> dict:
    out = json.loads(json.dumps(cfg))
    for key, value in changes.items():
        if isinstance(value, dict):
            out.setdefault(key, {}).update(value)
        else:
            out[key] = value
    return out


def fixed_scale_nmse(net: UnrolledNet, ds: Dataset, scale: float = 1.0) -> float:
    """Test NMSE of a one-bit net with its global scale pinned (``1`` means ``lambda0``)."""
    pinned = net.copy()
    pinned.scale = scale
    return diag.nmse_db(forward_batch(pinned, ds.A, ds.Y).states[-1], ds.X)


def scaling_sweep(cfg: dict, Ks, train_ds=None, test_ds=None, out=None) -> list[dict]:
    """Train one config at several depths; report learned vs fixed-scale NMSE per depth.

    ``cfg`` may carry per-depth overrides under ``"per_K"`` (``{"20": {...}}``).
    """
    if train_ds is None:
        train_ds, test_ds = resolve_dataset(cfg["dataset"])
    per_k = cfg.get("per_K", {})
    base = {k: v for k, v in cfg.items() if k != "per_K"}
    rows = []
    for K in Ks:
        run = _override(base, model={"K": int(K)}, **per_k.get(str(K), {}))
        sub = None if out is None else Path(out) / f"K{K}"
        net, rep = run_training(run, sub, train_ds, test_ds)
        row = {"K": int(K), "train_nmse_db": rep.train_nmse_db,
               "test_nmse_db": rep.test_nmse_db, "bits": rep.bits,
               "scale": rep.extra.get("scale"), "effective_scale": rep.extra.get("effective_scale"),
               "fixed_scale_test_nmse_db": None, "seconds": sum(rep.wall_times.values())}
        if net.quant_mode is QuantMode.ONE_BIT and test_ds is not None:
            row["fixed_scale_test_nmse_db"] = fixed_scale_nmse(net, test_ds)
        rows.append(row)
        log.info("K=%d test %.2f dB", K, rep.test_nmse_db)
    if out is not None:
        _write_rows(rows, Path(out) / "scaling.csv")
    return rows


def spectral_study(cfg: dict, seeds, support_size: int, out=None) -> list[dict]:
    """Train on a fixed-support dataset per seed and check the good-set condition.

    The support is drawn per seed from ``support_size`` distinct coordinates.
    """
    rows = []
    for seed in seeds:
        spec = dict(cfg["dataset"], seed=int(seed))
        n = spec.get("n", 100)
        rng = np.random.default_rng([int(seed), support_size])
        spec["fixed_support"] = sorted(rng.choice(n, support_size, replace=False).tolist())
        run = dict(cfg, dataset=spec, seed=int(seed))
        train_ds, test_ds = resolve_dataset(spec)
        sub = None if out is None else Path(out) / f"seed{seed}"
        net, rep = run_training(run, sub, train_ds, test_ds)
        d = diagnose(net, test_ds if test_ds is not None else train_ds)
        if sub is not None:
            write_diagnostics(d, sub)
        rows.append({"seed": int(seed), "test_nmse_db": rep.test_nmse_db,
                     "max_fk": max(d["fk"]), "all_good": d["all_good"], "fk": d["fk"]})
    if out is not None:
        _write_rows([{k: v for k, v in r.items() if k != "fk"} for r in rows],
                    Path(out) / "spectral.csv")
    return rows


def sample_efficiency(cfg: dict, out=None) -> dict:
    """Unrolled net on a small training subset vs the fully connected baseline on all samples.

    ``cfg`` holds ``"dun"`` (a train config with ``train_subset``) and ``"fcn"``
    (``K``, ``activation``, ``epochs``, ``lr``, ``batch_size``, ``theta_init``).
    """
    from .train import train_fcn

    dun_cfg = cfg["dun"]
    train_ds, test_ds = resolve_dataset(dun_cfg["dataset"])
    _, dun = run_training(dun_cfg, None if out is None else Path(out) / "dun",
                          train_ds, test_ds)
    f = dict(cfg["fcn"])
    fcn = train_fcn(train_ds, f.pop("K"), f.pop("activation", "soft"), seed=dun_cfg.get("seed", 0),
                    **f)
    fcn_rep = evaluate(fcn, train_ds, test_ds)
    if out is not None:
        save_checkpoint(fcn, Path(out) / "fcn" / "checkpoint")
        diag.emit_report(fcn_rep, Path(out) / "fcn" / "metrics.json")
    return {"dun_samples": dun_cfg.get("train_subset", len(train_ds)),
            "dun_test_nmse_db": dun.test_nmse_db,
            "fcn_samples": len(train_ds), "fcn_test_nmse_db": fcn_rep.test_nmse_db,
            "dun_bits": dun.bits, "fcn_bits": fcn_rep.bits}


def _write_rows(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else r[c] for c in cols])
