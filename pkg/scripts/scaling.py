"""One-bit depth sweep on the synthetic setup: NMSE, bits, learned vs fixed scale per K.

    python3 scripts/scaling.py --K 5 10 20
"""
from _common import parser, setup

from pibinn.cli import render_rows
from pibinn.experiment import scaling_sweep
from pibinn.schemas import validate


def main():
    p = parser(__doc__, "scaling.json")
    p.add_argument("--K", type=int, nargs="+", default=None)
    args = p.parse_args()
    cfg, out = setup(args, "scaling")
    Ks = args.K or cfg.pop("K", [5, 10, 20])
    cfg.pop("K", None)
    base = {k: v for k, v in cfg.items() if k != "per_K"}
    validate("train", dict(base, model=dict(base.get("model", {}), K=int(Ks[0]))))
    rows = scaling_sweep(cfg, Ks, out=out)
    print(render_rows(rows))
    print(f"wrote {out / 'scaling.csv'}")


if __name__ == "__main__":
    main()
