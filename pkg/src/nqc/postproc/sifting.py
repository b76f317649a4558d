"""Sifting, shuffling, sampled error estimation and per-level gate statistics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._util import rng
from ..photonic_sim import ChannelConfig, DecoyLevel, DetectionRecords, TransmitRecords, armed_mask


class EstimationError(ValueError):
    """Sample too small to estimate an error rate."""


@dataclass
class SiftedBlock:
    client_bits: np.ndarray
    hub_bits: np.ndarray
    slot_map: np.ndarray
    decoy_levels: np.ndarray
    session_id: str = ""

    def __post_init__(self):
        n = len(self.client_bits)
        if not (len(self.hub_bits) == len(self.slot_map) == len(self.decoy_levels) == n):
            raise ValueError("SiftedBlock fields differ in length")

    def __len__(self) -> int:
        return len(self.client_bits)

    def take(self, idx) -> "SiftedBlock":
        return SiftedBlock(self.client_bits[idx], self.hub_bits[idx], self.slot_map[idx],
                           self.decoy_levels[idx], self.session_id)

    def level(self, lvl: DecoyLevel) -> "SiftedBlock":
        return self.take(np.flatnonzero(self.decoy_levels == lvl))

    @property
    def errors(self) -> int:
        return int(np.count_nonzero(self.client_bits != self.hub_bits))


@dataclass
class LevelCounts:
    sent: int = 0       # armed gates, i.e. pulses outside any blocking window
    clicked: int = 0
    sifted: int = 0
    errors: int = 0
    mu: float = 0.0


@dataclass
class DecoyStats:
    """Per-level counts; gain Q = clicked / sent, error rate E = errors / sifted."""
    vacuum: LevelCounts = field(default_factory=LevelCounts)
    decoy: LevelCounts = field(default_factory=LevelCounts)
    signal: LevelCounts = field(default_factory=LevelCounts)

    def __post_init__(self):
        if self.vacuum.mu != 0:
            raise ValueError("vacuum level must have mu = 0")
        for c in (self.vacuum, self.decoy, self.signal):
            if not (0 <= c.errors <= c.sifted <= c.clicked <= c.sent):
                raise ValueError(f"inconsistent level counts {c}")

    def gain(self, lvl: str) -> float:
        c = getattr(self, lvl)
        return c.clicked / c.sent if c.sent else 0.0

    def error_rate(self, lvl: str) -> float:
        c = getattr(self, lvl)
        return c.errors / c.sifted if c.sifted else 0.0


def _single_click_slots(det: DetectionRecords) -> np.ndarray:
    """Positions of records whose slot holds exactly one record."""
    if len(det) == 0:
        return np.empty(0, dtype=np.int64)
    slots = det.slot
    same_prev = np.r_[False, slots[1:] == slots[:-1]]
    same_next = np.r_[slots[:-1] == slots[1:], False]
    return np.flatnonzero(~(same_prev | same_next))


def sift(tx: TransmitRecords, det: DetectionRecords, cfg: ChannelConfig | None = None,
         session_id: str = "") -> SiftedBlock:
    """Keep detected slots whose announced bases agree.

    Slots carrying more than one record (strict-discard receivers report
    every fired detector) are dropped.
    """
    keep = _single_click_slots(det)
    slots = det.slot[keep]
    detector = det.detector[keep].astype(np.int64)
    pos = np.searchsorted(tx.slot, slots)
    ok = (pos < len(tx)) & (tx.slot[np.minimum(pos, len(tx) - 1)] == slots) if len(tx) else np.zeros(0, bool)
    pos, detector = pos[ok], detector[ok]
    match = tx.basis[pos] == detector // 2
    pos, detector = pos[match], detector[match]
    return SiftedBlock(client_bits=tx.bit[pos].astype(np.uint8),
                       hub_bits=(detector % 2).astype(np.uint8),
                       slot_map=tx.slot[pos].astype(np.int64),
                       decoy_levels=tx.level[pos].astype(np.uint8),
                       session_id=session_id)


def decoy_stats(tx: TransmitRecords, det: DetectionRecords, block: SiftedBlock, cfg: ChannelConfig,
                blocked_until: int = -1, signal_errors: tuple[int, int] | None = None,
                hub_clicks: np.ndarray | None = None) -> DecoyStats:
    """Per-level counts over armed gates.

    The hub announces its dead windows, so pulses it could not detect are
    left out of ``sent``. With a receiver shared between clients,
    ``hub_clicks`` lists every click slot (all clients); by default only
    this client's detections are assumed. ``signal_errors`` overrides the
    signal level's (errors, sifted) with a disclosed sample, since signal
    bits are key.
    """
    dead_from = det.slot if hub_clicks is None else hub_clicks
    armed = armed_mask(tx.slot, dead_from, cfg.blocking_slots, blocked_until)
    clicked_slots = np.unique(det.slot)
    clicked_pos = np.searchsorted(tx.slot, clicked_slots)
    levels = {}
    for lvl in DecoyLevel:
        name = lvl.name.lower()
        sub = block.decoy_levels == lvl
        c = LevelCounts(sent=int(np.count_nonzero(armed & (tx.level == lvl))),
                        clicked=int(np.count_nonzero(tx.level[clicked_pos] == lvl)),
                        sifted=int(np.count_nonzero(sub)),
                        errors=int(np.count_nonzero(block.client_bits[sub] != block.hub_bits[sub])),
                        mu=float(tx.mu_table[lvl]))
        levels[name] = c
    if signal_errors is not None:
        levels["signal"].errors, levels["signal"].sifted = map(int, signal_errors)
    return DecoyStats(**levels)


def permutation(n: int, seed: int) -> np.ndarray:
    return rng(seed).permutation(n)


def shuffle(block: SiftedBlock, seed: int) -> SiftedBlock:
    """Apply one seeded permutation to bits and annotations alike.

    The slot map travels with the bits, so it is no longer sorted; the
    original order is recovered with :func:`unshuffle`.
    """
    return block.take(permutation(len(block), seed))


def unshuffle(block: SiftedBlock, seed: int) -> SiftedBlock:
    inv = np.argsort(permutation(len(block), seed))
    return block.take(inv)


def estimate_qber(block: SiftedBlock, sample_fraction: float = 0.1, seed: int = 0):
    """Disclose a seeded random sample and drop it; return (qber, remaining block).

    The sample size is ``len(block) - len(remaining)``.
    """
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError("sample_fraction must be in (0, 1)")
    n = len(block)
    k = int(round(n * sample_fraction))
    if k == 0:
        raise EstimationError(f"sample of {n} bits at fraction {sample_fraction} is empty")
    chosen = np.zeros(n, dtype=bool)
    chosen[rng(seed).choice(n, size=k, replace=False)] = True
    sample = block.take(chosen)
    qber = sample.errors / k
    return qber, block.take(~chosen)
