"""MCS ladder and the SINR -> bits-per-PRB mapping."""
from __future__ import annotations

import bisect
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

# 12 subcarriers x 14 symbols x 2 slots (30 kHz numerology) in one 1 ms TTI
RE_PER_PRB_TTI = 12 * 14 * 2


@dataclass(frozen=True)
class McsEntry:
    index: int
    spectral_eff: float  # bits per resource element per layer
    min_sinr_db: float


class McsTable:
    """Sorted link-adaptation ladder with a step BLER model.

    A transport block at MCS k is decoded error-free when SINR >= min_sinr(k)
    and lost completely below it.
    """

    def __init__(self, entries: Sequence[McsEntry]):
        entries = sorted(entries, key=lambda e: e.index)
        if not entries:
            raise ValueError("empty MCS table")
        for a, b in zip(entries, entries[1:]):
            if b.index != a.index + 1:
                raise ValueError(f"MCS indices not contiguous at {a.index}->{b.index}")
            if not b.spectral_eff > a.spectral_eff:
                raise ValueError(f"spectral efficiency not increasing at MCS {b.index}")
            if not b.min_sinr_db > a.min_sinr_db:
                raise ValueError(f"min SINR not increasing at MCS {b.index}")
        self.entries = list(entries)
        self._thresholds = [e.min_sinr_db for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> McsEntry:
        return self.entries[index]

    @property
    def lowest_threshold_db(self) -> float:
        return self._thresholds[0]

    def select(self, sinr_db: float) -> Optional[McsEntry]:
        """Highest MCS whose threshold is <= sinr (closed lower bound), or None."""
        i = bisect.bisect_right(self._thresholds, sinr_db) - 1
        return self.entries[i] if i >= 0 else None

    @classmethod
    def from_text(cls, text: str) -> "McsTable":
        entries = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'index eff min_sinr', got {line!r}")
            entries.append(McsEntry(int(parts[0]), float(parts[1]), float(parts[2])))
        return cls(entries)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "McsTable":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


_default: Optional[McsTable] = None


def default_table() -> McsTable:
    global _default
    if _default is None:
        text = resources.files("castsim.data").joinpath("mcs_table.txt").read_text(encoding="utf-8")
        _default = McsTable.from_text(text)
    return _default


def bits_per_prb(entry: McsEntry, layers: int = 4, re_per_prb: int = RE_PER_PRB_TTI) -> float:
    return entry.spectral_eff * re_per_prb * layers


def rate_bits_per_prb(sinr_db: float, mcs: Optional[McsEntry] = None, table: Optional[McsTable] = None,
                      layers: int = 4, re_per_prb: int = RE_PER_PRB_TTI) -> float:
    """Bits one PRB carries in one TTI.

    With ``mcs`` given (multicast) the rate is fixed by that entry whatever the
    SINR; whether the UE decodes it is a separate question (see ``decodes``).
    Without it (unicast) the best MCS for ``sinr_db`` is chosen and an SINR below
    the lowest threshold gives 0.
    """
    if mcs is not None:
        return bits_per_prb(mcs, layers, re_per_prb)
    entry = (table or default_table()).select(sinr_db)
    if entry is None:
        return 0.0
    return bits_per_prb(entry, layers, re_per_prb)


def decodes(sinr_db: float, mcs: McsEntry) -> bool:
    return sinr_db >= mcs.min_sinr_db
