"""Good-set check of trained one-bit hard-threshold nets on fixed-support data, per seed.

    python3 scripts/spectral.py --seeds 0 1 2 3 4
"""
from _common import parser, setup

from pibinn.cli import render_rows
from pibinn.experiment import spectral_study


def main():
    p = parser(__doc__, "spectral.json")
    p.add_argument("--seeds", type=int, nargs="+", default=None)
    args = p.parse_args()
    cfg, out = setup(args, "spectral")
    seeds = args.seeds or cfg.pop("seeds", [0, 1, 2, 3, 4])
    cfg.pop("seeds", None)
    size = cfg.pop("support_size")
    rows = spectral_study(cfg, seeds, size, out=out)
    print(render_rows([{k: v for k, v in r.items() if k != "fk"} for r in rows]))
    print(f"{sum(r['all_good'] for r in rows)}/{len(rows)} seeds with f_k < 1 on every layer")


if __name__ == "__main__":
    main()
