"""Run artifacts on disk and side-by-side comparison of finished runs."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .client import write_trace
from .config import ScenarioConfig, dump_config, resolve
from .kpi import UNDEFINED, write_mos_series, write_qoe_cdf
from .mood import write_switch_log
from .scenario import RunResult, run

MANIFEST = "manifest.json"
CONFIG_FILE = "config.yaml"
REPORT = "kpi_report.json"
RESOURCE_COLUMNS = ("tti", "prbs_multicast", "prbs_unicast", "prbs_total")
MERGE_COLUMNS = ("ue", "received", "duplicates_discarded", "repaired", "declared_lost")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _manifest(cfg: ScenarioConfig) -> dict:
    return {
        "software": "castsim",
        "version": __version__,
        "seed": cfg.seed,
        "preset": cfg.preset,
        "config": cfg.model_dump(mode="json"),
        "digests": None,
    }


def write_resources(path, log) -> None:
    # numpy formatting is ~20x faster than csv.writer for 300k rows
    tti = np.arange(log.horizon, dtype=np.int64)
    total = np.full(log.horizon, log.prbs_total, dtype=np.int64)
    table = np.column_stack([tti, log.multicast, log.unicast, total])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(RESOURCE_COLUMNS) + "\n")
        np.savetxt(fh, table, fmt="%d", delimiter=",")


def write_merge_stats(path, stats: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MERGE_COLUMNS)
        for ue in sorted(stats):
            received, dups, repaired, lost = stats[ue][:4]
            w.writerow([ue, received, dups, repaired, lost])


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def execute(cfg: ScenarioConfig, out_dir) -> RunResult:
    """Run one scenario and write its full output tree into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _manifest(cfg)
    (out / MANIFEST).write_text(_dump_json(manifest))
    (out / CONFIG_FILE).write_text(dump_config(cfg))

    result = run(cfg)

    files = [CONFIG_FILE]
    for c, log in enumerate(result.logs):
        name = f"resources_cell{c}.csv"
        write_resources(out / name, log)
        files.append(name)
    for ue in sorted(result.traces):
        name = f"trace_ue{ue}.csv"
        write_trace(out / name, result.traces[ue])
        files.append(name)
    write_switch_log(out / "switch_log.csv", result.switch_log)
    write_merge_stats(out / "merge_stats.csv", result.merge_stats)
    write_mos_series(out / "mos_series.csv", result.mos_series)
    write_qoe_cdf(out / "qoe_cdf.csv", result.report.qoe_cdf)
    (out / REPORT).write_text(result.report.to_json())
    files += ["switch_log.csv", "merge_stats.csv", "mos_series.csv", "qoe_cdf.csv", REPORT]

    manifest["digests"] = {name: sha256_of(out / name) for name in sorted(files)}
    (out / MANIFEST).write_text(_dump_json(manifest))
    return result


# --- comparison ---------------------------------------------------------------------------------

class IncompatibleRuns(ValueError):
    pass


KPI_KEYS = ("avg_resource_consumption", "al_se_bits_per_s_per_hz", "fraction_max_mos")


@dataclass
class RunSummary:
    path: Path
    preset: str
    seed: int
    cfg: ScenarioConfig
    kpis: dict

    @property
    def label(self) -> str:
        return f"{self.preset}@{self.seed}"


@dataclass
class OrderingCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class Comparison:
    runs: list
    checks: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def load_run(path) -> RunSummary:
    p = Path(path)
    try:
        manifest = json.loads((p / MANIFEST).read_text())
        report = json.loads((p / REPORT).read_text())
    except FileNotFoundError as e:
        raise IncompatibleRuns(f"{p}: not a completed run ({Path(e.filename).name} missing)") from None
    if manifest.get("digests") is None:
        raise IncompatibleRuns(f"{p}: run did not finish (manifest has no digests)")
    cfg = resolve(manifest["config"])
    return RunSummary(p, report["preset"], report["seed"], cfg, {k: report.get(k) for k in KPI_KEYS})


def _compat_key(cfg: ScenarioConfig) -> dict:
    return {"topology": cfg.topology.model_dump(), "content": cfg.content.model_dump(),
            "duration_s": cfg.duration_s, "workload": cfg.workload}


def check_compatible(runs: Sequence[RunSummary]) -> None:
    base = _compat_key(runs[0].cfg)
    for r in runs[1:]:
        other = _compat_key(r.cfg)
        diff = sorted(k for k in base if base[k] != other[k])
        if diff:
            raise IncompatibleRuns(f"{r.path} differs from {runs[0].path} in {', '.join(diff)}; "
                                   "runs must share topology, content, workload and duration")


def _num(v) -> Optional[float]:
    return None if v is None or v == UNDEFINED else float(v)


def _order(name, a: RunSummary, b: RunSummary, key: str, op: str) -> OrderingCheck:
    x, y = _num(a.kpis[key]), _num(b.kpis[key])
    if x is None or y is None:
        return OrderingCheck(name, False, f"{key} undefined")
    ok = {"<": x < y, "<=": x <= y, ">": x > y}[op]
    return OrderingCheck(name, ok, f"{a.label} {x:.4f} {op} {b.label} {y:.4f}")


def ordering_checks(runs: Sequence[RunSummary]) -> list[OrderingCheck]:
    """Structural orderings between delivery modes, for every seed present in all involved runs."""
    by = {(r.preset, r.seed): r for r in runs}
    seeds = sorted({r.seed for r in runs})
    rules = [
        ("ptm-only", "ptp-only", "avg_resource_consumption", "<"),
        ("ptm-only", "ptm-multilink", "avg_resource_consumption", "<"),
        ("ptm-multilink", "ptp-only", "avg_resource_consumption", "<"),
        ("ptm-only", "ptp-only", "al_se_bits_per_s_per_hz", ">"),
        ("ptm-multilink", "ptp-only", "al_se_bits_per_s_per_hz", ">"),
        ("ptm-only", "ptm-multilink", "fraction_max_mos", "<"),
        ("ptm-multilink", "ptp-only", "fraction_max_mos", "<="),
    ]
    out = []
    for seed in seeds:
        for a, b, key, op in rules:
            if (a, seed) in by and (b, seed) in by:
                out.append(_order(f"{key}: {a} {op} {b} (seed {seed})", by[a, seed], by[b, seed], key, op))
    return out


def compare(paths: Sequence) -> Comparison:
    if len(paths) < 2:
        raise IncompatibleRuns("need at least two run directories")
    runs = [load_run(p) for p in paths]
    check_compatible(runs)
    return Comparison(runs, ordering_checks(runs))


def format_comparison(cmp: Comparison) -> str:
    base = cmp.runs[0]
    head = ["run", "consumption", "al_se", "frac_max_mos",
            "d_consumption", "d_al_se", "d_frac_max_mos"]
    rows = []
    for r in cmp.runs:
        vals = [_num(r.kpis[k]) for k in KPI_KEYS]
        deltas = []
        for k, v in zip(KPI_KEYS, vals):
            b = _num(base.kpis[k])
            deltas.append(None if v is None or b is None else v - b)
        rows.append([r.label] + [_fmt(v) for v in vals + deltas])
    widths = [max(len(head[i]), *(len(row[i]) for row in rows)) for i in range(len(head))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    if cmp.checks:
        lines.append("")
        lines += [f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}" for c in cmp.checks]
    return "\n".join(lines) + "\n"


def _fmt(v: Optional[float]) -> str:
    return UNDEFINED if v is None else f"{v:.6f}"


def write_comparison_csv(path, cmp: Comparison) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "preset", "seed", *KPI_KEYS])
        for r in cmp.runs:
            w.writerow([str(r.path), r.preset, r.seed, *(_fmt(_num(r.kpis[k])) for k in KPI_KEYS)])
