"""Audience-driven unicast/multicast switching with hysteresis."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from .kernel import seconds


class Mode(enum.Enum):
    UNICAST = "unicast"
    MULTICAST = "multicast"


@dataclass
class MoodConfig:
    activate_threshold: int = 2
    deactivate_threshold: int = 1
    evaluation_interval: int = seconds(1)
    switch_latency: int = seconds(2)

    def __post_init__(self):
        if self.deactivate_threshold >= self.activate_threshold:
            raise ValueError("deactivate_threshold must be below activate_threshold")
        if self.evaluation_interval <= 0:
            raise ValueError("evaluation_interval must be positive")
        if self.switch_latency < 0:
            raise ValueError("switch_latency must be non-negative")


@dataclass(frozen=True)
class SwitchCommand:
    content_id: str
    from_mode: Mode
    to_mode: Mode
    issued_at: int
    completes_at: int
    audience: int


@dataclass(frozen=True)
class SwitchRecord:
    time: int
    content_id: str
    from_mode: Mode
    to_mode: Mode
    audience: int


@dataclass
class MoodState:
    content_id: str
    mode: Mode = Mode.UNICAST
    audience: int = 0
    pending: Optional[SwitchCommand] = None
    last_report: dict = field(default_factory=dict)


class MoodController:
    """Counts reporting UEs per content and issues switch commands.

    A UE counts as audience while its last report is at most one evaluation
    interval old. While a switch is pending no new command is issued.
    """

    def __init__(self, cfg: MoodConfig = None):
        self.cfg = cfg or MoodConfig()
        self.states: dict[str, MoodState] = {}
        self.log: list[SwitchRecord] = []

    def state(self, content_id: str, initial: Mode = Mode.UNICAST) -> MoodState:
        st = self.states.get(content_id)
        if st is None:
            st = self.states[content_id] = MoodState(content_id, initial)
        return st

    def _count(self, st: MoodState, now: int) -> int:
        horizon = self.cfg.evaluation_interval
        stale = [ue for ue, t in st.last_report.items() if now - t > horizon]
        for ue in stale:
            del st.last_report[ue]
        return len(st.last_report)

    def report(self, ue: int, content_id: str, now: int) -> int:
        st = self.state(content_id)
        st.last_report[ue] = now
        st.audience = self._count(st, now)
        return st.audience

    def withdraw(self, ue: int, content_id: str) -> None:
        """Forget a UE immediately (used when a client quits)."""
        st = self.state(content_id)
        st.last_report.pop(ue, None)

    def evaluate(self, content_id: str, now: int) -> Optional[SwitchCommand]:
        st = self.state(content_id)
        st.audience = self._count(st, now)
        if st.pending is not None:
            return None
        cfg = self.cfg
        target = None
        if st.mode is Mode.UNICAST and st.audience >= cfg.activate_threshold:
            target = Mode.MULTICAST
        elif st.mode is Mode.MULTICAST and st.audience <= cfg.deactivate_threshold:
            target = Mode.UNICAST
        if target is None:
            return None
        st.pending = SwitchCommand(content_id, st.mode, target, now, now + cfg.switch_latency,
                                   st.audience)
        return st.pending

    def matured(self, content_id: str, now: int) -> Optional[SwitchCommand]:
        st = self.states.get(content_id)
        if st is None or st.pending is None or now < st.pending.completes_at:
            return None
        return st.pending

    def apply_switch(self, cmd: SwitchCommand, now: int) -> SwitchRecord:
        """Flip the content's mode; the caller rewires delivery at the boundary ``now``."""
        st = self.state(cmd.content_id)
        if st.pending is not cmd:
            raise ValueError("command is not the pending switch")
        if now < cmd.completes_at:
            raise ValueError("switch applied before it matured")
        st.mode = cmd.to_mode
        st.pending = None
        rec = SwitchRecord(now, cmd.content_id, cmd.from_mode, cmd.to_mode, cmd.audience)
        self.log.append(rec)
        return rec


def next_boundary(t: int, segment_duration: int, offset: int = 0) -> int:
    """First segment boundary (offset + k * duration) at or after t."""
    k = max(0, math.ceil((t - offset) / segment_duration))
    return offset + k * segment_duration


def write_switch_log(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "content", "from_mode", "to_mode", "audience"])
        for r in records:
            w.writerow([f"{r.time / 1000:.3f}", r.content_id, r.from_mode.value,
                        r.to_mode.value, r.audience])
