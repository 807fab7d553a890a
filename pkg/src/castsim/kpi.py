"""Resource consumption, application-layer spectral efficiency and MOS/QoE."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

AL_SE_CAVEAT = ("packet losses caused by transmission errors or congestion "
                "are not considered in this KPI")
UNDEFINED = "undefined"


class KpiUndefined(ValueError):
    pass


def avg_resource_consumption(rows: Iterable[tuple[float, float]]) -> float:
    """Sum of used PRBs over sum of available PRBs; rows are (used, total)."""
    used = 0
    total = 0
    n = 0
    for u, t in rows:
        if u < 0 or u > t:
            raise ValueError(f"row uses {u} of {t} PRBs")
        used += u
        total += t
        n += 1
    if n == 0 or total == 0:
        raise KpiUndefined("empty resource log")
    return used / total


def consumption_of_logs(logs) -> float:
    """Consumption over every TTI of every cell log."""
    used = sum(int(log.used.sum()) for log in logs)
    total = sum(log.horizon * log.prbs_total for log in logs)
    if total == 0:
        raise KpiUndefined("empty resource log")
    if any(int(log.used.max(initial=0)) > log.prbs_total for log in logs):
        raise ValueError("PRB conservation violated")
    return used / total


def al_se(source_bits: float, duration_s: float, bandwidth_hz: float, consumption: float) -> float:
    """Source rate over the bandwidth actually occupied (bits/s/Hz)."""
    if consumption <= 0:
        raise KpiUndefined("consumption is zero")
    if duration_s <= 0 or bandwidth_hz <= 0:
        raise ValueError("duration and bandwidth must be positive")
    return (source_bits / duration_s) / (bandwidth_hz * consumption)


@dataclass
class QoeConfig:
    window_segments: int = 15
    episode_penalty: float = 1.5
    stall_second_penalty: float = 0.1

    def __post_init__(self):
        if self.window_segments < 1:
            raise ValueError("window must be >= 1")


@dataclass(frozen=True)
class WindowEntry:
    bitrate_bps: Optional[float]  # None: not played (pending or skipped)
    episodes: int = 0
    stall_s: float = 0.0


def mos(window: Sequence[WindowEntry], top_bitrate_bps: float, cfg: QoeConfig = QoeConfig()) -> float:
    """Linear quality base minus stall penalties over the last ``window_segments`` entries."""
    entries = list(window)[-cfg.window_segments:]
    if not entries:
        raise ValueError("empty window")
    played = [e.bitrate_bps for e in entries if e.bitrate_bps is not None]
    base = 1.0 + 4.0 * (sum(played) / len(played) / top_bitrate_bps) if played else 1.0
    episodes = sum(e.episodes for e in entries)
    stall = sum(e.stall_s for e in entries)
    penalty = cfg.episode_penalty * episodes + cfg.stall_second_penalty * stall
    return min(5.0, max(1.0, base - penalty))


def qoe_cdf(values: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF as (value, cumulative fraction) at each distinct value."""
    if not values:
        raise ValueError("need at least one UE")
    xs = sorted(values)
    n = len(xs)
    out = []
    for i, x in enumerate(xs):
        if i + 1 < n and xs[i + 1] == x:
            continue
        out.append((x, (i + 1) / n))
    return out


def fraction_at_max(values: Sequence[float], top: float = 5.0) -> float:
    return sum(1 for v in values if v >= top) / len(values)


@dataclass
class KpiReport:
    preset: str
    seed: int
    duration_s: float
    num_ues: int
    avg_resource_consumption: object = UNDEFINED
    al_se_bits_per_s_per_hz: object = UNDEFINED
    al_se_caveat: str = AL_SE_CAVEAT
    source_bits: float = 0.0
    bandwidth_hz: float = 0.0
    mean_mos: Optional[float] = None
    fraction_max_mos: Optional[float] = None
    per_ue_mos: dict = field(default_factory=dict)
    qoe_cdf: list = field(default_factory=list)
    quit_ues: list = field(default_factory=list)
    stalls_total: int = 0
    reached: Optional[dict] = None
    alert_paths: Optional[dict] = None
    alert_completion_s: Optional[dict] = None
    switches: int = 0
    warnings: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_ue_mos"] = {str(k): v for k, v in self.per_ue_mos.items()}
        d["qoe_cdf"] = [list(p) for p in self.qoe_cdf]
        return d

    def to_json(self) -> str:
        return json.dumps(_round_floats(self.to_dict()), indent=2, sort_keys=True) + "\n"


def _round_floats(obj, nd: int = 12):
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return UNDEFINED
        return round(obj, nd)
    if isinstance(obj, dict):
        return {k: _round_floats(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, nd) for v in obj]
    return obj


def write_mos_series(path, series: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ue", "time_s", "mos"])
        for ue in sorted(series):
            for t, m in series[ue]:
                w.writerow([ue, f"{t / 1000:.3f}", f"{m:.6f}"])


def write_qoe_cdf(path, points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mos", "cdf"])
        for x, y in points:
            w.writerow([f"{x:.6f}", f"{y:.6f}"])
