"""``pibinn`` command-line entry point.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import experiment as ex
from .checkpoint import load_checkpoint
from .data import DatasetSpec
from .diag import MetricsReport, bit_count, emit_report
from .errors import ConfigError, DimensionError, NonConvergenceError, NumericalError
from .schemas import validate
from .unroll import set_workers

log = logging.getLogger("pibinn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
COMMANDS = ("gen-data", "train", "eval", "diagnose", "compare", "bits", "fmt")


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None


def _out_dir(args, cfg: dict, default: str) -> Path:
    return Path(args.out or cfg.get("out") or default)


def _parse_support(text: str | None):
    if text is None:
        return None
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise ConfigError(f"--support expects comma-separated integers, got {text!r}") from None


def _configs(args) -> list[dict]:
    if not args.config:
        raise ConfigError(f"{args.command} needs --config <path.json>")
    return [_load_json(p) for p in args.config]


def cmd_gen_data(args) -> int:
    cfg = validate("gen-data", _configs(args)[0])
    spec = dict(cfg["dataset"])
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is not None:
        spec["seed"] = seed
    try:
        spec = DatasetSpec(**spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(args, cfg, "data")
    tr, te = ex.gen_data(spec, out)
    print(f"wrote {tr} and {te}")
    return EXIT_OK


def _with_seed(cfg: dict, seed) -> dict:
    if seed is None:
        return cfg
    cfg = dict(cfg, seed=seed)
    if isinstance(cfg.get("dataset"), dict):
        cfg["dataset"] = dict(cfg["dataset"], seed=seed)
    return cfg


def cmd_train(args) -> int:
    cfg = validate("train", _configs(args)[0])
    if args.no_pretrain:
        cfg = dict(cfg, pretrain=False)
    cfg = _with_seed(cfg, args.seed)
    out = _out_dir(args, cfg, "run")
    _, rep = ex.run_training(cfg, out)
    print(f"train {rep.train_nmse_db:.3f} dB, test {rep.test_nmse_db:.3f} dB, "
          f"bits {rep.bits}; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = validate("eval", _configs(args)[0])
    net = load_checkpoint(cfg["checkpoint"])
    train_ds, test_ds = ex.load_splits(cfg["dataset"])
    rep = ex.evaluate(net, train_ds, test_ds)
    out = _out_dir(args, cfg, "eval")
    out.mkdir(parents=True, exist_ok=True)
    emit_report(rep, out / "metrics.json", "json")
    emit_report(rep, out / "layers.csv", "csv")
    print(f"train {rep.train_nmse_db:.3f} dB, test {rep.test_nmse_db:.3f} dB; wrote {out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = validate("diagnose", _configs(args)[0])
    support = _parse_support(args.support)
    if support is None:
        support = cfg.get("support")
    variant = args.variant or cfg.get("variant")
    delta = args.delta if args.delta is not None else cfg.get("delta")
    net = load_checkpoint(cfg["checkpoint"])
    train_ds, test_ds = ex.load_splits(cfg["dataset"])
    split = cfg.get("split", "test")
    ds = test_ds if split == "test" and test_ds is not None else train_ds
    if ds is None:
        ds = test_ds
    res = ex.diagnose(net, ds, support, variant, delta)
    out = _out_dir(args, cfg, "diagnose")
    ex.write_diagnostics(res, out)
    print(f"f_k max {max(res['fk']):.4f}, all good: {res['all_good']}; wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfgs = _configs(args)
    if len(cfgs) == 1 and "schemes" in cfgs[0]:
        cfg = validate("compare", cfgs[0])
        dataset, schemes = cfg["dataset"], cfg["schemes"]
    else:
        for c in cfgs:
            validate("train", c)
        dataset = cfgs[0]["dataset"]
        if any(c["dataset"] != dataset for c in cfgs[1:]):
            raise ConfigError("compare configs do not share one dataset")
        cfg, schemes = cfgs[0], cfgs
    if args.seed is not None:
        schemes = [dict(s, seed=args.seed) for s in schemes]
    out = _out_dir(args, cfg, "compare")
    rows = ex.compare_schemes(dataset, schemes, out)
    print(render_rows(rows))
    return EXIT_OK


def cmd_bits(args) -> int:
    if args.config:
        cfg = _configs(args)[0]
    else:
        cfg = {k: getattr(args, k) for k in ("model", "K", "m", "n") if getattr(args, k) is not None}
    cfg = validate("bits", cfg)
    model = cfg["model"].replace("-", "_")
    print(bit_count(model, cfg["K"], cfg["m"], cfg["n"]))
    return EXIT_OK


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return "" if v is None else str(v)


def render_rows(rows: list[dict]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[_fmt_cell(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def render(path) -> str:
    """Human-readable table for a report JSON or a CSV written by another command."""
    path = Path(path)
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return render_rows([{k: _maybe_float(v) for k, v in r.items()} for r in rows])
    obj = json.loads(path.read_text())
    if "train_nmse_db" in obj:
        rep = MetricsReport.from_json(obj)
        head = [{"train_nmse_db": rep.train_nmse_db, "test_nmse_db": rep.test_nmse_db,
                 "gap_db": rep.gap_db, "bits": rep.bits, "params": rep.params}]
        layers = [{"layer": k + 1, "layer_nmse_db": v} for k, v in enumerate(rep.layer_curve)]
        return render_rows(head) + ("\n\n" + render_rows(layers) if layers else "")
    if "fk" in obj:
        keys = ("fk", "good", "mu", "theory_theta", "learned_theta", "layer_nmse_db")
        rows = [{"layer": k + 1, **{c: _maybe_float(obj[c][k]) for c in keys}}
                for k in range(len(obj["fk"]))]
        return render_rows(rows)
    raise ConfigError(f"{path}: unrecognized report")


def _maybe_float(v):
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v or None
    return v


def cmd_fmt(args) -> int:
    paths = list(args.paths) + list(args.config or [])
    if not paths:
        raise ConfigError("fmt needs a report path")
    print("\n\n".join(render(p) for p in paths))
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "compare": cmd_compare,
    "bits": cmd_bits,
    "fmt": cmd_fmt,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pibinn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("paths", nargs="*", help="report files (fmt only)")
    p.add_argument("--config", action="append", help="JSON config; repeatable for compare")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-pretrain", action="store_true", help="skip the high-res warm start")
    p.add_argument("--support", help="comma-separated support indices (diagnose)")
    p.add_argument("--variant", choices=["soft", "hard"], help="spectral term variant (diagnose)")
    p.add_argument("--delta", type=float, help="delta override (diagnose)")
    p.add_argument("--model", help="bits: fcn_relu | fcn_st | dun | one_bit")
    p.add_argument("--K", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    return p


def main(argv=None) -> int:
    level = os.environ.get("PIBINN_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        set_workers(args.workers)
        return HANDLERS[args.command](args)
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NonConvergenceError) as exc:
        ctx = ""
        if isinstance(exc, NumericalError) and exc.stage is not None:
            ctx = f" (stage {exc.stage}, epoch {exc.epoch})"
        print(f"numeric failure: {exc}{ctx}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        set_workers(1)


if __name__ == "__main__":
    sys.exit(main())
