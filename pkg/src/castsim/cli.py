"""Command line: ``castsim run|compare|presets``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml
from pydantic import ValidationError

from .config import PRESET_SUMMARIES, PRESETS, load_config, resolve
from .output import IncompatibleRuns, compare, execute, format_comparison, write_comparison_csv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="castsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config", help="YAML scenario file or a preset name")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory (default runs/<preset>-<seed>)")

    c = sub.add_parser("compare", help="compare finished runs")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--assert-orderings", action="store_true",
                   help="exit 1 if any delivery-mode ordering fails")
    c.add_argument("--csv", default=None, help="also write the table as CSV")

    sub.add_parser("presets", help="list built-in presets")
    return p


def _load(source: str, seed: Optional[int]):
    if source in PRESETS and not Path(source).exists():
        data = {"preset": source}
    else:
        data = yaml.safe_load(Path(source).read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{source}: top level must be a mapping")
    if seed is not None:
        data["seed"] = seed
    return resolve(data)


def _field_errors(err: ValidationError) -> str:
    out = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        out.append(f"  {loc}: {e['msg']}")
    return "\n".join(out)


def cmd_run(args) -> int:
    try:
        cfg = _load(args.config, args.seed)
    except ValidationError as e:
        print(f"invalid config {args.config}:\n{_field_errors(e)}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, yaml.YAMLError) as e:
        print(f"cannot load {args.config}: {e}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("runs") / f"{cfg.preset}-{cfg.seed}"
    result = execute(cfg, out)
    rep = result.report
    print(f"{cfg.preset} seed={cfg.seed} -> {out}")
    print(f"  consumption={rep.avg_resource_consumption}")
    print(f"  al_se={rep.al_se_bits_per_s_per_hz}")
    print(f"  fraction_max_mos={rep.fraction_max_mos} mean_mos={rep.mean_mos}")
    for w in rep.warnings:
        print(f"  warning: {w}")
    return 0


def cmd_compare(args) -> int:
    try:
        cmp = compare(args.dirs)
    except IncompatibleRuns as e:
        print(f"refusing to compare: {e}", file=sys.stderr)
        return 2
    sys.stdout.write(format_comparison(cmp))
    if args.csv:
        write_comparison_csv(args.csv, cmp)
    if args.assert_orderings and not cmp.all_passed:
        return 1
    return 0


def cmd_presets(_args) -> int:
    width = max(map(len, PRESETS))
    for name in PRESETS:
        print(f"{name.ljust(width)}  {PRESET_SUMMARIES[name]}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return {"run": cmd_run, "compare": cmd_compare, "presets": cmd_presets}[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
