"""Regenerate the long-format CSV behind each figure preset.

Usage:
    python3 scripts/make_figures.py [--out-dir figures] [--grid-steps 2000]

Writes one ``<preset>.csv`` per figure preset through the same code path as
``regimedefault sweep --preset <name>``.
"""
import argparse
import pathlib
import sys

from regimedefault import cli

FIGURES = ("fig1", "fig2", "fig3", "fig4")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="figures")
    ap.add_argument("--grid-steps", type=int, default=2000)
    ap.add_argument("--only", nargs="*", choices=FIGURES, default=list(FIGURES))
    args = ap.parse_args(argv)
    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.only:
        target = out / f"{name}.csv"
        code = cli.main(["sweep", "--preset", name, "--grid-steps", str(args.grid_steps),
                         "--out", str(target)])
        if code != 0:
            return code
        print(f"{name}: {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
