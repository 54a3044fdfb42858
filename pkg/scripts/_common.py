import argparse
import json
import logging
import os
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def parser(doc: str, config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc.strip().splitlines()[0])
    p.add_argument("--config", default=str(ROOT / "configs" / config))
    p.add_argument("--out", default=None, help="output directory (default: runs/<script>)")
    return p


def setup(args, name: str) -> tuple[dict, Path]:
    logging.basicConfig(level=os.environ.get("PIBINN_LOG", "info").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = json.loads(Path(args.config).read_text())
    out = Path(args.out or ROOT / "runs" / name)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out
