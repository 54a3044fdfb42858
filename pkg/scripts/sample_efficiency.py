"""Unrolled net trained on few samples vs the fully connected baseline on all of them.

    python3 scripts/sample_efficiency.py
"""
import json

from _common import parser, setup

from pibinn.experiment import sample_efficiency


def main():
    args = parser(__doc__, "sample_efficiency.json").parse_args()
    cfg, out = setup(args, "sample_efficiency")
    res = sample_efficiency(cfg, out)
    (out / "summary.json").write_text(json.dumps(res, indent=2) + "\n")
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
