"""Per-UE media client: rate adaptation, cancellation, quit and playback accounting."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .delivery import DeliveryMode, Rung

PANIC_BUFFER_S = 2.0
SAFETY_FACTOR = 0.8
CANCEL_LEAD_S = 10.0


@dataclass
class ClientConfig:
    initial_buffer_target_s: float = 4.0
    max_buffer_s: float = 30.0
    quit_timer_s: float = 30.0
    throughput_ema_alpha: float = 0.1
    safety_factor: float = SAFETY_FACTOR
    panic_buffer_s: float = PANIC_BUFFER_S
    cancel_check_interval_s: float = 0.5
    request_delay_ms: int = 20

    def __post_init__(self):
        if not 0 < self.initial_buffer_target_s <= self.max_buffer_s:
            raise ValueError("need 0 < initial_buffer_target_s <= max_buffer_s")
        if not 0 < self.throughput_ema_alpha <= 1:
            raise ValueError("throughput_ema_alpha must be in (0, 1]")


@dataclass
class AbrState:
    buffer_s: float = 0.0
    throughput_estimate_bps: Optional[float] = None
    current_rung: int = 0

    def observe(self, goodput_bps: float, alpha: float) -> float:
        if self.throughput_estimate_bps is None:
            self.throughput_estimate_bps = goodput_bps
        else:
            self.throughput_estimate_bps = alpha * goodput_bps + (1 - alpha) * self.throughput_estimate_bps
        return self.throughput_estimate_bps


def select_bitrate(abr: AbrState, ladder: Sequence[Rung], safety: float = SAFETY_FACTOR,
                   panic_buffer_s: float = PANIC_BUFFER_S) -> int:
    """Rung for the next segment.

    Highest rung under ``safety`` x estimate, at most one step above the current
    rung; below the panic buffer, at most one step below the current rung.
    """
    cur = min(max(abr.current_rung, 0), len(ladder) - 1)
    est = abr.throughput_estimate_bps
    if est is None:
        fit = cur
    else:
        fit = 0
        for i, r in enumerate(ladder):
            if r.bits_per_s <= safety * est:
                fit = i
    rung = min(fit, cur + 1)
    if abr.buffer_s < panic_buffer_s:
        rung = min(rung, max(cur - 1, 0))
    return rung


class CancelDecision(enum.Enum):
    CONTINUE = "continue"
    CANCEL = "cancel"


def maybe_cancel(remaining_bits: float, goodput_bps: float, buffer_s: float,
                 rung: int) -> CancelDecision:
    """Cancel when the projected completion overruns the buffer and a lower rung exists."""
    if rung <= 0:
        return CancelDecision.CONTINUE
    projected = math.inf if goodput_bps <= 0 else remaining_bits / goodput_bps
    return CancelDecision.CANCEL if projected > buffer_s else CancelDecision.CONTINUE


class QuitDecision(enum.Enum):
    CONTINUE = "continue"
    QUIT = "quit"


def check_quit(age_s: float, last_cancel_age_s: Optional[float], replacement_will_miss: bool,
               quit_timer_s: float = 30.0, lowest_rung: bool = False) -> QuitDecision:
    """Quit once a download is ``quit_timer_s`` old and cancelling did not help.

    "Did not help" means a cancel fired at least 10 s earlier and the replacement
    is still projected to miss. A download already on the lowest rung has nothing
    to cancel to, so there the starvation alone decides.
    """
    if age_s < quit_timer_s or not replacement_will_miss:
        return QuitDecision.CONTINUE
    if lowest_rung and last_cancel_age_s is None:
        return QuitDecision.QUIT
    if last_cancel_age_s is not None and last_cancel_age_s >= CANCEL_LEAD_S:
        return QuitDecision.QUIT
    return QuitDecision.CONTINUE


class Popularity(enum.Enum):
    SHARED = "shared"
    PERSONALIZED = "personalized"


@dataclass(frozen=True)
class MediaObject:
    object_id: str
    bitrate_bps: int
    popularity: Popularity = Popularity.SHARED


def assign_object_modes(objects: Sequence[MediaObject], heavy_threshold_bps: float,
                        audience: int = 2) -> dict[str, DeliveryMode]:
    """Shared heavy objects go multicast, everything else unicast.

    ``audience`` below 2 leaves nothing worth sharing, so all objects stay unicast.
    """
    if not objects:
        raise ValueError("object set must not be empty")
    out = {}
    for o in objects:
        shared = o.popularity is Popularity.SHARED and audience >= 2
        heavy = o.bitrate_bps >= heavy_threshold_bps
        out[o.object_id] = DeliveryMode.MULTICAST if shared and heavy else DeliveryMode.UNICAST
    return out


# --- playback -----------------------------------------------------------------

@dataclass
class PositionRecord:
    position: int
    bitrate_bps: float = 0.0  # 0 when skipped
    played_at: Optional[int] = None
    skipped: bool = False
    stall_ms: int = 0
    episodes: int = 0


@dataclass
class PlaybackRecord:
    stalls: list = field(default_factory=list)       # (start_ms, duration_ms)
    played_per_rung: dict = field(default_factory=dict)
    positions: dict = field(default_factory=dict)    # position -> PositionRecord
    quit: bool = False
    quit_at: Optional[int] = None
    skipped: int = 0


class PlayerState(enum.Enum):
    WAITING = "waiting"     # initial buffering
    PLAYING = "playing"
    STALLED = "stalled"
    STOPPED = "stopped"


class Player:
    """Playhead over segment positions with the freeze model.

    A position plays when ``ready(p)`` holds. If it is not ready when due, a stall
    opens and stays open until it becomes ready; a position that can no longer
    complete (``lost(p)``) is skipped and scored as a freeze of one segment.
    """

    def __init__(self, start_position: int, segment_ms: int, initial_buffer_s: float,
                 ready: Callable[[int], bool], lost: Callable[[int], bool],
                 bitrate_of: Callable[[int], float], on_trace: Optional[Callable] = None):
        self.segment_ms = segment_ms
        self.position = start_position
        self.start_position = start_position
        self.initial_segments = max(1, math.ceil(initial_buffer_s * 1000 / segment_ms))
        self.ready = ready
        self.lost = lost
        self.bitrate_of = bitrate_of
        self.state = PlayerState.WAITING
        self.play_end: Optional[int] = None
        self.stall_start: Optional[int] = None
        self.record = PlaybackRecord()
        self.on_trace = on_trace or (lambda *a: None)
        self.started_at: Optional[int] = None

    # buffer -------------------------------------------------------------------
    def ready_run(self, from_pos: int, limit: int = 64) -> int:
        n = 0
        while n < limit and self.ready(from_pos + n):
            n += 1
        return n

    def buffer_s(self, now: int) -> float:
        if self.state is PlayerState.PLAYING:
            rem = max(0, self.play_end - now)
            return (rem + self.segment_ms * self.ready_run(self.position + 1)) / 1000.0
        if self.state is PlayerState.STOPPED:
            return 0.0
        return self.segment_ms * self.ready_run(self.position) / 1000.0

    # transitions ---------------------------------------------------------------
    def _rec(self, p: int) -> PositionRecord:
        r = self.record.positions.get(p)
        if r is None:
            r = self.record.positions[p] = PositionRecord(p)
        return r

    def _skip_lost(self, now: int) -> None:
        while self.lost(self.position) and not self.ready(self.position):
            r = self._rec(self.position)
            r.skipped = True
            r.episodes += 1
            r.stall_ms += self.segment_ms
            self.record.skipped += 1
            self.on_trace(now, "skip", self.position)
            self.position += 1

    def poke(self, now: int) -> Optional[int]:
        """Re-evaluate after new data; returns the next play-end time if playback (re)starts."""
        if self.state is PlayerState.WAITING:
            self._skip_lost_startup()
            if self.ready_run(self.position, self.initial_segments) >= self.initial_segments:
                self.started_at = now
                return self._start(now)
        elif self.state is PlayerState.STALLED:
            if not self.ready(self.position):
                if self.lost(self.position):
                    self._close_stall(now)
                    self._skip_lost(now)
                    if self.ready(self.position):
                        return self._start(now)
                    self._open_stall(now)
                return None
            self._close_stall(now)
            return self._start(now)
        return None

    def _skip_lost_startup(self) -> None:
        while self.lost(self.position) and not self.ready(self.position):
            self.position += 1
            self.start_position = self.position

    def _start(self, now: int) -> int:
        self.state = PlayerState.PLAYING
        p = self.position
        r = self._rec(p)
        r.played_at = now
        r.bitrate_bps = self.bitrate_of(p)
        self.record.played_per_rung[r.bitrate_bps] = self.record.played_per_rung.get(r.bitrate_bps, 0) + 1
        self.play_end = now + self.segment_ms
        self.on_trace(now, "play", p)
        return self.play_end

    def _open_stall(self, now: int) -> None:
        self.state = PlayerState.STALLED
        self.stall_start = now
        self._rec(self.position).episodes += 1
        self.on_trace(now, "stall_start", self.position)

    def _close_stall(self, now: int) -> None:
        dur = now - self.stall_start
        self._rec(self.position).stall_ms += dur
        self.record.stalls.append((self.stall_start, dur))
        self.stall_start = None
        self.on_trace(now, "stall_end", self.position)

    def segment_end(self, now: int) -> Optional[int]:
        """Current position finished; advance. Returns the next play-end or None if stalled."""
        if self.state is not PlayerState.PLAYING or now != self.play_end:
            return None
        self.position += 1
        self._skip_lost(now)
        if self.ready(self.position):
            return self._start(now)
        self._open_stall(now)
        return None

    def stop(self, now: int) -> None:
        if self.state is PlayerState.STALLED:
            self._close_stall(now)
        self.state = PlayerState.STOPPED

    def current_stall_ms(self, now: int) -> int:
        return now - self.stall_start if self.state is PlayerState.STALLED else 0

    def stalled_for_ms(self, now: int) -> int:
        return self.current_stall_ms(now)


TRACE_COLUMNS = ("time_s", "event", "rung", "buffer_s")


def write_trace(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for t, ev, rung, buf in rows:
            w.writerow([f"{t / 1000:.3f}", ev, rung, f"{buf:.3f}"])
