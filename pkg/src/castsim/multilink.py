"""Multi-link gateway (duplication/steering) and client middleware (merge, dedup, repair).

Packet identity is the per-session sequence number. The merge buffer works on
half-open seq ranges ``[lo, hi)`` so whole bursts can be ingested at once; the
result is the same as ingesting the packets one by one in ascending order.
"""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional


class Policy(enum.Enum):
    DUPLICATE = "duplicate"
    SPLIT = "split"  # reserved; not implemented


@dataclass
class MlConfig:
    sinr_threshold_db: float = 5.0
    hysteresis_margin_db: float = 1.0
    reorder_window: int = 256
    repair_timeout_ms: int = 100
    repair_enabled: bool = True
    policy: Policy = Policy.DUPLICATE

    def __post_init__(self):
        if self.reorder_window < 1:
            raise ValueError("reorder_window must be >= 1")
        if self.policy is not Policy.DUPLICATE:
            raise NotImplementedError("only duplicate mode is supported")


def ml_decide(sinr_db: float, currently_on: bool, cfg: MlConfig = MlConfig()) -> bool:
    """Duplication on below the threshold, off again at threshold + margin."""
    if currently_on:
        return sinr_db < cfg.sinr_threshold_db + cfg.hysteresis_margin_db
    return sinr_db < cfg.sinr_threshold_db


@dataclass(frozen=True)
class Emission:
    link: str           # "multicast" or "unicast-duplicate"
    ue: Optional[int]   # None for the multicast emission
    lo: int
    hi: int


def gw_process(lo: int, hi: int, flagged_ues: Iterable[int]) -> list[Emission]:
    """One multicast emission plus one unicast duplicate per flagged UE.

    The seq range is passed through untouched: the gateway never rewrites content.
    """
    out = [Emission("multicast", None, lo, hi)]
    out.extend(Emission("unicast-duplicate", ue, lo, hi) for ue in sorted(flagged_ues))
    return out


@dataclass
class MergeStats:
    received: int = 0
    duplicates_discarded: int = 0
    stale_dropped: int = 0
    repaired: int = 0
    declared_lost: int = 0
    released: int = 0


class MergeBuffer:
    """Reorder/dedup buffer releasing a strictly increasing, duplicate-free stream.

    Arrivals below ``next_expected`` are duplicates (or stale if more than a
    window behind). Arrivals that would stretch the held span past
    ``reorder_window`` force the oldest gap to be declared lost.
    """

    def __init__(self, start_seq: int = 0, window: int = 256):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.next_expected = int(start_seq)
        self.window = int(window)
        self._lo: list[int] = []
        self._hi: list[int] = []
        self.stats = MergeStats()
        self.lost_ranges: list[tuple[int, int]] = []

    @property
    def held(self) -> int:
        return sum(h - l for l, h in zip(self._lo, self._hi))

    def held_ranges(self) -> list[tuple[int, int]]:
        return list(zip(self._lo, self._hi))

    def gaps(self) -> list[tuple[int, int]]:
        """Missing ranges between next_expected and the highest held seq."""
        out = []
        cur = self.next_expected
        for l, h in zip(self._lo, self._hi):
            if l > cur:
                out.append((cur, l))
            cur = h
        return out

    def reset(self, start_seq: int) -> None:
        self.next_expected = int(start_seq)
        self._lo.clear()
        self._hi.clear()

    def ingest(self, lo: int, hi: Optional[int] = None, repaired: bool = False) -> list[tuple[int, int]]:
        """Ingest seqs ``[lo, hi)`` (a single packet when ``hi`` is None).

        Returns released ranges in ascending order.
        """
        if hi is None:
            hi = lo + 1
        if hi <= lo:
            return []
        st = self.stats
        st.received += hi - lo
        ne = self.next_expected
        if lo < ne:
            cut = min(hi, ne)
            stale_hi = min(cut, ne - self.window)
            if stale_hi > lo:
                st.stale_dropped += stale_hi - lo
            dup_lo = max(lo, ne - self.window)
            if cut > dup_lo:
                st.duplicates_discarded += cut - dup_lo
            lo = cut
            if lo >= hi:
                return []
        added = self._insert(lo, hi)
        st.duplicates_discarded += (hi - lo) - added
        if repaired:
            st.repaired += added
        return self._drain()

    def _insert(self, lo: int, hi: int) -> int:
        """Union [lo, hi) into the held set; return the number of new seqs."""
        los, his = self._lo, self._hi
        i = bisect.bisect_left(his, lo)  # first interval that may touch
        j = i
        covered = 0
        new_lo, new_hi = lo, hi
        while j < len(los) and los[j] <= hi:
            covered += max(0, min(his[j], hi) - max(los[j], lo))
            new_lo = min(new_lo, los[j])
            new_hi = max(new_hi, his[j])
            j += 1
        los[i:j] = [new_lo]
        his[i:j] = [new_hi]
        return (hi - lo) - covered

    def _drain(self) -> list[tuple[int, int]]:
        released = []
        los, his = self._lo, self._hi
        st = self.stats
        while los:
            if los[0] == self.next_expected:
                released.append((los[0], his[0]))
                st.released += his[0] - los[0]
                self.next_expected = his[0]
                del los[0], his[0]
                continue
            if his[-1] - 1 >= self.next_expected + self.window:
                gap = (self.next_expected, los[0])
                st.declared_lost += gap[1] - gap[0]
                self.lost_ranges.append(gap)
                self.next_expected = los[0]
                continue
            break
        return released


class RepairAgent:
    """Issues ranged retransmission requests for gaps older than the timeout.

    At most one request is outstanding per gap; an unanswered request is
    re-issued after a doubling backoff.
    """

    def __init__(self, cfg: MlConfig):
        self.cfg = cfg
        self._first_seen: dict[int, int] = {}
        self._outstanding: dict[int, tuple[int, int]] = {}  # gap lo -> (sent_at, backoff)
        self.requests: list[tuple[int, int, int]] = []     # (time, lo, hi)

    def has_pending(self) -> bool:
        return bool(self._first_seen)

    def check(self, now: int, buf: MergeBuffer) -> list[tuple[int, int]]:
        if not self.cfg.repair_enabled:
            return []
        gaps = buf.gaps()
        live = {lo for lo, _ in gaps}
        for stale in [k for k in self._first_seen if k not in live]:
            del self._first_seen[stale]
            self._outstanding.pop(stale, None)
        issued = []
        for lo, hi in gaps:
            first = self._first_seen.setdefault(lo, now)
            if now - first < self.cfg.repair_timeout_ms:
                continue
            out = self._outstanding.get(lo)
            if out is not None:
                sent_at, backoff = out
                if now - sent_at < backoff:
                    continue
                self._outstanding[lo] = (now, backoff * 2)
            else:
                self._outstanding[lo] = (now, 2 * self.cfg.repair_timeout_ms)
            issued.append((lo, hi))
            self.requests.append((now, lo, hi))
        return issued

    def next_deadline(self) -> Optional[int]:
        times = [t + self.cfg.repair_timeout_ms for lo, t in self._first_seen.items()
                 if lo not in self._outstanding]
        times += [sent + backoff for sent, backoff in self._outstanding.values()]
        return min(times) if times else None
