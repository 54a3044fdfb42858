"""Physics-structured one-bit net vs ternary, channel-wise and high-res on a block dataset.

    python3 scripts/block_compare.py
"""
from _common import parser, setup

from pibinn.cli import render_rows
from pibinn.experiment import compare_schemes
from pibinn.schemas import validate


def main():
    args = parser(__doc__, "block_compare.json").parse_args()
    cfg, out = setup(args, "block_compare")
    cfg = validate("compare", cfg)
    rows = compare_schemes(cfg["dataset"], cfg["schemes"], out)
    print(render_rows(rows))
    print(f"wrote {out / 'compare.csv'}")


if __name__ == "__main__":
    main()
