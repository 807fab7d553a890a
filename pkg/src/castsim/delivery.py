"""Sessions, packetization, per-link queues and the per-TTI PRB scheduler."""
from __future__ import annotations

import bisect
import enum
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .radio.mcs import McsEntry, bits_per_prb

PAYLOAD_BYTES = 1500
DEFAULT_BROADCAST_SHARE = 0.8
BROADCAST_SHARE_PRESETS = {"rel14-": 0.6, "rel14+": 0.8}


class DeliveryMode(enum.Enum):
    UNICAST = "unicast"
    MULTICAST = "multicast"
    MULTICAST_ML = "multicast+ml"


class LinkTag(enum.Enum):
    MULTICAST = "multicast"
    UNICAST_DUPLICATE = "unicast-duplicate"
    UNICAST_REPAIR = "unicast-repair"
    UNICAST_PRIMARY = "unicast-primary"


class DeliveryError(RuntimeError):
    pass


@dataclass(frozen=True)
class Rung:
    bits_per_s: int
    label: str


DEFAULT_LADDER = (
    Rung(1_000_000, "480p"),
    Rung(4_000_000, "1080p"),
    Rung(8_000_000, "1080p"),
    Rung(12_000_000, "2K"),
    Rung(16_000_000, "4K"),
    Rung(20_000_000, "4K"),
)


def segment_bytes(bits_per_s: float, duration_s: float) -> int:
    return int(round(bits_per_s * duration_s / 8))


def packet_count(size_bytes: int, payload: int = PAYLOAD_BYTES) -> int:
    if size_bytes <= 0:
        raise DeliveryError("segment size must be positive")
    return -(-size_bytes // payload)


@dataclass
class Segment:
    content_id: str
    index: int
    bits_per_s: int
    size_bytes: int
    first_seq: int = 0
    n_packets: int = 0

    @property
    def last_seq(self) -> int:
        return self.first_seq + self.n_packets - 1

    @property
    def bits(self) -> int:
        return self.size_bytes * 8


@dataclass
class Session:
    """A content delivered either per-UE (unicast) or once for all (multicast).

    Multicast sessions carry only the top rung. Packets get a session-wide
    sequence number in emission order; a segment's packets are contiguous.
    """
    content_id: str
    mode: DeliveryMode
    ladder: Sequence[Rung] = DEFAULT_LADDER
    segment_duration_s: float = 1.0
    subscribers: set = field(default_factory=set)
    next_seq: int = 0
    last_index: Optional[int] = None
    segments: dict = field(default_factory=dict)
    _starts: list = field(default_factory=list)
    _indices: list = field(default_factory=list)

    def subscribe(self, ue: int) -> None:
        self.subscribers.add(ue)

    def unsubscribe(self, ue: int) -> None:
        self.subscribers.discard(ue)

    def enqueue_segment(self, seg: Segment, payload: int = PAYLOAD_BYTES) -> Segment:
        """Assign contiguous seqs to ``seg``; indices must be gapless."""
        if self.last_index is not None and seg.index != self.last_index + 1:
            raise DeliveryError(
                f"{self.content_id}: segment {seg.index} after {self.last_index} (gap)")
        seg.n_packets = packet_count(seg.size_bytes, payload)
        seg.first_seq = self.next_seq
        self.next_seq += seg.n_packets
        self.last_index = seg.index
        self.segments[seg.index] = seg
        self._starts.append(seg.first_seq)
        self._indices.append(seg.index)
        return seg

    def segment_of(self, seq: int) -> Segment:
        i = bisect.bisect_right(self._starts, seq) - 1
        if i < 0:
            raise KeyError(seq)
        return self.segments[self._indices[i]]

    def split_by_segment(self, lo: int, hi: int):
        """Yield (segment, lo, hi) pieces of a seq range."""
        i = bisect.bisect_right(self._starts, lo) - 1
        while lo < hi and 0 <= i < len(self._starts):
            seg = self.segments[self._indices[i]]
            end = min(hi, seg.first_seq + seg.n_packets)
            if end > lo:
                yield seg, lo, end
            lo = end
            i += 1


class Burst:
    """A run of packets ``[lo, hi)`` queued on one link."""
    __slots__ = ("tag", "lo", "hi", "total_bits", "done_bits", "released", "sink", "ctx")

    def __init__(self, tag: LinkTag, lo: int, hi: int, total_bytes: int, sink, ctx=None):
        self.tag = tag
        self.lo = lo
        self.hi = hi
        self.total_bits = float(total_bytes * 8)
        self.done_bits = 0.0
        self.released = 0
        self.sink = sink
        self.ctx = ctx

    @property
    def remaining_bits(self) -> float:
        return self.total_bits - self.done_bits


def burst_bytes(seg: Segment, lo: int, hi: int, payload: int = PAYLOAD_BYTES) -> int:
    """Bytes carried by packets [lo, hi) of ``seg`` (only the last packet is short)."""
    n = hi - lo
    total = n * payload
    if hi == seg.first_seq + seg.n_packets:
        total -= seg.n_packets * payload - seg.size_bytes
    return total


def make_burst(tag, seg: Segment, lo: int, hi: int, sink, ctx=None) -> Burst:
    return Burst(tag, lo, hi, burst_bytes(seg, lo, hi), sink, ctx)


class LinkQueue:
    """FIFO of bursts drained by the scheduler; releases whole packets to sinks."""

    _EPS = 1e-6

    def __init__(self, name: str = ""):
        self.name = name
        self.queue: deque[Burst] = deque()
        self.backlog_bits = 0.0
        self.sent_bits = 0.0

    def __len__(self) -> int:
        return len(self.queue)

    def push(self, burst: Burst, front: bool = False) -> None:
        if front and self.queue and self.queue[0].done_bits > 0:
            self.queue.insert(1, burst)
        elif front:
            self.queue.appendleft(burst)
        else:
            self.queue.append(burst)
        self.backlog_bits += burst.remaining_bits

    def clear(self) -> list[Burst]:
        dropped = list(self.queue)
        self.queue.clear()
        self.backlog_bits = 0.0
        return dropped

    def remove(self, pred) -> None:
        keep = deque(b for b in self.queue if not pred(b))
        self.queue = keep
        self.backlog_bits = sum(b.remaining_bits for b in keep)

    def serve(self, bits: float, now: int) -> float:
        """Transmit up to ``bits``; return bits actually used."""
        used = 0.0
        q = self.queue
        eps = self._EPS
        while bits > eps and q:
            b = q[0]
            take = b.total_bits - b.done_bits
            if take > bits:
                take = bits
            b.done_bits += take
            bits -= take
            used += take
            finished = b.total_bits - b.done_bits <= eps
            n = b.hi - b.lo
            done = n if finished else min(n - 1, int(b.done_bits // (PAYLOAD_BYTES * 8)))
            if done > b.released:
                lo = b.lo + b.released
                b.released = done
                if finished:
                    q.popleft()
                b.sink(b, lo, b.lo + done, now)
            elif finished:
                q.popleft()
        self.backlog_bits -= used
        if self.backlog_bits < eps:
            self.backlog_bits = 0.0 if not q else sum(x.remaining_bits for x in q)
        self.sent_bits += used
        return used


class UnicastFlow(LinkQueue):
    """Per-UE unicast link; its PRB efficiency follows the UE's current SINR."""

    def __init__(self, ue: int, name: str = ""):
        super().__init__(name or f"ue{ue}")
        self.ue = ue
        self.bits_per_prb = 0.0
        self.cell = -1


class ResourceLog:
    """Per-TTI PRB usage for one cell (append-only in time)."""

    def __init__(self, horizon_ttis: int, prbs_total: int = 273):
        self.horizon = int(horizon_ttis)
        self.prbs_total = int(prbs_total)
        self.multicast = np.zeros(self.horizon, dtype=np.int32)
        self.unicast = np.zeros(self.horizon, dtype=np.int32)

    def set_multicast(self, start: int, stop: int, prbs: int) -> None:
        start, stop = max(0, start), min(self.horizon, stop)
        if stop > start:
            self.multicast[start:stop] = prbs

    def rows(self):
        for t in range(self.horizon):
            yield t, int(self.multicast[t]), int(self.unicast[t]), self.prbs_total

    @property
    def used(self) -> np.ndarray:
        return self.multicast + self.unicast


class MulticastChannel(LinkQueue):
    """One MBSFN bearer with a fixed MCS and a semi-static PRB reservation."""

    def __init__(self, content_id: str, mcs: McsEntry, stream_bps: float, layers: int = 4,
                 name: str = ""):
        super().__init__(name or f"mc:{content_id}")
        self.content_id = content_id
        self.mcs = mcs
        self.stream_bps = float(stream_bps)
        self.bits_per_prb = bits_per_prb(mcs, layers)
        self.needed_prbs = prbs_for_rate(stream_bps, self.bits_per_prb)
        self.reserved_prbs = 0
        self.active = False
        self.emitted_upto = 0  # first seq not yet emitted


def prbs_for_rate(bits_per_s: float, bits_per_prb_tti: float, tti_per_s: int = 1000) -> int:
    return int(math.ceil(bits_per_s / tti_per_s / bits_per_prb_tti - 1e-12))


def clamp_multicast_prbs(needed: int, n_prb: int = 273, share: float = DEFAULT_BROADCAST_SHARE) -> int:
    return min(needed, int(math.floor(n_prb * share)))


def allocate_round_robin(needs: Sequence[int], avail: int, start: int = 0) -> list[int]:
    """Equal-share PRB split among backlogged flows, work-conserving.

    Flows needing less than their share get exactly their need; the rest is split
    evenly with the indivisible remainder handed out in round-robin order starting
    at ``start``.
    """
    n = len(needs)
    alloc = [0] * n
    if n == 0 or avail <= 0:
        return alloc
    order = sorted(range(n), key=lambda i: needs[i])
    remaining = avail
    for pos, i in enumerate(order):
        share = remaining // (n - pos)
        if needs[i] > share:
            # everyone from here on needs more than the level: give each the level
            for j in order[pos:]:
                alloc[j] = share
            remaining -= share * (n - pos)
            break
        alloc[i] = needs[i]
        remaining -= needs[i]
    if remaining > 0:
        for k in range(n):
            i = (start + k) % n
            if remaining == 0:
                break
            if alloc[i] < needs[i]:
                alloc[i] += 1
                remaining -= 1
    return alloc


class CellScheduler:
    """Per-TTI PRB scheduler for every simulated cell.

    Multicast bearers take their reserved PRBs (identical across the MBSFN area,
    capped at the broadcast share); the remainder is split round-robin among
    backlogged unicast flows of each cell.
    """

    def __init__(self, n_cells: int, horizon_ttis: int, n_prb: int = 273,
                 broadcast_share: float = DEFAULT_BROADCAST_SHARE, watermark_bits: float = 200e6):
        self.n_cells = n_cells
        self.n_prb = n_prb
        self.broadcast_share = broadcast_share
        self.logs = [ResourceLog(horizon_ttis, n_prb) for _ in range(n_cells)]
        self.active: list[list[UnicastFlow]] = [[] for _ in range(n_cells)]
        self.channels: list[MulticastChannel] = []
        self.mc_reserved = 0
        self._mc_since = 0
        self._rr = [0] * n_cells
        self.watermark_bits = watermark_bits
        self.warnings: list[str] = []

    # --- multicast reservation --------------------------------------------------
    def _flush_mc(self, now: int) -> None:
        for log in self.logs:
            log.set_multicast(self._mc_since, now, self.mc_reserved)
        self._mc_since = now

    def reserve(self, ch: MulticastChannel, now: int) -> int:
        self._flush_mc(now)
        others = sum(c.reserved_prbs for c in self.channels if c is not ch and c.active)
        cap = int(math.floor(self.n_prb * self.broadcast_share))
        ch.reserved_prbs = max(0, min(ch.needed_prbs, cap - others))
        ch.active = True
        if ch not in self.channels:
            self.channels.append(ch)
        self.mc_reserved = sum(c.reserved_prbs for c in self.channels if c.active)
        return ch.reserved_prbs

    def release(self, ch: MulticastChannel, now: int) -> None:
        self._flush_mc(now)
        ch.active = False
        ch.reserved_prbs = 0
        self.mc_reserved = sum(c.reserved_prbs for c in self.channels if c.active)

    def finish(self, now: int) -> None:
        self._flush_mc(now)

    # --- unicast -----------------------------------------------------------------
    def activate(self, flow: UnicastFlow) -> None:
        if flow.cell >= 0 and flow not in self.active[flow.cell]:
            self.active[flow.cell].append(flow)

    def move(self, flow: UnicastFlow, new_cell: int) -> None:
        if flow.cell == new_cell:
            return
        if flow.cell >= 0 and flow in self.active[flow.cell]:
            self.active[flow.cell].remove(flow)
            flow.cell = new_cell
            self.active[new_cell].append(flow)
        else:
            flow.cell = new_cell

    def busy(self) -> bool:
        """True while some queue can make progress next TTI."""
        for flows in self.active:
            for f in flows:
                if f.bits_per_prb > 0 and f.backlog_bits > 0:
                    return True
        return any(c.active and c.backlog_bits > 0 for c in self.channels)

    def schedule_tti(self, now: int) -> list[tuple[int, int]]:
        """Serve one TTI. Returns per-cell (multicast PRBs, unicast PRBs)."""
        for ch in self.channels:
            if ch.active and ch.backlog_bits > 0:
                ch.serve(ch.reserved_prbs * ch.bits_per_prb, now)
                if ch.backlog_bits > self.watermark_bits:
                    msg = f"multicast queue of {ch.content_id} above watermark at t={now}"
                    if not self.warnings or self.warnings[-1] != msg:
                        self.warnings.append(msg)
                        warnings.warn(msg, RuntimeWarning)
        avail = self.n_prb - self.mc_reserved
        rows = []
        for c in range(self.n_cells):
            flows = self.active[c]
            used = 0
            if flows:
                live = [f for f in flows if f.backlog_bits > 0]
                if len(live) != len(flows):
                    self.active[c] = flows = live
                servable = [f for f in flows if f.bits_per_prb > 0]
                if servable:
                    needs = [int(math.ceil(f.backlog_bits / f.bits_per_prb - 1e-9)) for f in servable]
                    alloc = allocate_round_robin(needs, avail, self._rr[c] % len(servable))
                    self._rr[c] += 1
                    for f, prbs in zip(servable, alloc):
                        if prbs:
                            f.serve(prbs * f.bits_per_prb, now)
                            used += prbs
                    self.active[c] = [f for f in flows if f.backlog_bits > 0]
            if 0 <= now < self.logs[c].horizon:
                self.logs[c].unicast[now] = used
            rows.append((self.mc_reserved, used))
        return rows
