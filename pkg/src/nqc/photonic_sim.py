"""Seeded simulation of decoy-state BB84 from a client transmitter to the hub receiver.

The receiver is the passive four-detector analyser: every arriving photon
picks a measurement basis 50/50 and lands on one of the H, V, D, A
detectors. A click on any detector blanks all four for the blocking window.

Per pulse, the photon number arriving at the receiver is Poisson(mu * T),
with T the link transmittance including detector efficiency. Poisson
thinning makes the per-detector photon counts independent Poisson variables,
so each detector is simulated independently: it fires from photons with
probability ``1 - exp(-mu * T * w)`` (``w`` its routing weight) or, failing
that, from a dark count. Pulses inside a blocking window can never produce a
record, so their outcomes are not materialised beyond a single uniform draw.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from itertools import product
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from ._util import ConfigurationError, rng


class Basis(IntEnum):
    RECTILINEAR = 0
    DIAGONAL = 1


class DecoyLevel(IntEnum):
    VACUUM = 0
    DECOY = 1
    SIGNAL = 2


class Detector(IntEnum):
    """Detector index is ``2 * basis + bit``."""
    H = 0
    V = 1
    D = 2
    A = 3


class Cause(IntEnum):
    PHOTON = 0
    DARK = 1


DOUBLE_CLICK_POLICIES = ("random", "discard")


@dataclass(frozen=True)
class ChannelConfig:
    fiber_length: float = 50.0          # km
    attenuation: float = 0.2            # dB/km
    intrinsic_error: float = 0.01       # polarisation misalignment flip probability
    detector_efficiency: float = 0.15
    dark_prob: float = 1e-5             # per detector per gate slot
    blocking_time: float = 50.0         # µs
    pulse_rate: float = 10e6            # Hz
    duty_cycle: float = 0.2
    slot_width: float = 1.0             # ns
    superframe: float = 1000.0          # µs
    mean_photons: tuple = (0.0, 0.1, 0.5)
    double_click: str = "random"

    def __post_init__(self):
        for name in ("intrinsic_error", "detector_efficiency", "dark_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must be a probability, got {v}")
        if self.fiber_length < 0:
            raise ConfigurationError("fiber_length must be >= 0")
        if self.attenuation < 0:
            raise ConfigurationError("attenuation must be >= 0")
        if self.pulse_rate <= 0:
            raise ConfigurationError("pulse_rate must be > 0")
        if not 0.0 < self.duty_cycle <= 1.0:
            raise ConfigurationError("duty_cycle must be in (0, 1]")
        if self.slot_width <= 0 or self.superframe <= 0 or self.blocking_time < 0:
            raise ConfigurationError("slot_width, superframe must be > 0 and blocking_time >= 0")
        mu = tuple(float(m) for m in self.mean_photons)
        if len(mu) != 3 or mu[0] != 0.0 or any(m < 0 for m in mu):
            raise ConfigurationError("mean_photons must be (0, mu_decoy, mu_signal) with mu >= 0")
        object.__setattr__(self, "mean_photons", mu)
        if self.double_click not in DOUBLE_CLICK_POLICIES:
            raise ConfigurationError(f"double_click must be one of {DOUBLE_CLICK_POLICIES}")
        if self.pulses_per_superframe < 1:
            raise ConfigurationError("duty window holds no pulse slot")

    @property
    def blocking_slots(self) -> int:
        return math.ceil(round(self.blocking_time * 1000.0 / self.slot_width, 9))

    @property
    def pulse_period_slots(self) -> int:
        return max(1, int(round(1e9 / self.pulse_rate / self.slot_width)))

    @property
    def superframe_slots(self) -> int:
        return int(round(self.superframe * 1000.0 / self.slot_width))

    @property
    def pulses_per_superframe(self) -> int:
        active = int(self.superframe_slots * self.duty_cycle)
        return -(-active // self.pulse_period_slots)


def link_transmittance(cfg: ChannelConfig) -> float:
    """Fiber loss times detector efficiency."""
    return 10.0 ** (-cfg.attenuation * cfg.fiber_length / 10.0) * cfg.detector_efficiency


def pulse_slots(cfg: ChannelConfig, n: int, start_pulse: int = 0) -> np.ndarray:
    """Slot indices of pulses ``start_pulse .. start_pulse + n`` in the duty-cycle windows."""
    k = np.arange(start_pulse, start_pulse + n, dtype=np.int64)
    per = cfg.pulses_per_superframe
    return (k // per) * cfg.superframe_slots + (k % per) * cfg.pulse_period_slots


class TransmitRecord(NamedTuple):
    slot: int
    basis: Basis
    bit: int
    decoy_level: DecoyLevel
    mean_photons: float


class DetectionRecord(NamedTuple):
    slot: int
    detector: Detector
    cause: Cause


@dataclass
class TransmitRecords:
    """Column store of TransmitRecord values."""
    slot: np.ndarray
    basis: np.ndarray
    bit: np.ndarray
    level: np.ndarray
    mu_table: tuple = (0.0, 0.1, 0.5)

    def __len__(self) -> int:
        return len(self.slot)

    @property
    def mean_photons(self) -> np.ndarray:
        return np.asarray(self.mu_table, dtype=np.float64)[self.level]

    def __getitem__(self, i) -> TransmitRecord:
        lvl = int(self.level[i])
        return TransmitRecord(int(self.slot[i]), Basis(int(self.basis[i])), int(self.bit[i]),
                              DecoyLevel(lvl), self.mu_table[lvl])

    def __iter__(self) -> Iterator[TransmitRecord]:
        return (self[i] for i in range(len(self)))

    def take(self, idx) -> "TransmitRecords":
        return TransmitRecords(self.slot[idx], self.basis[idx], self.bit[idx], self.level[idx],
                               self.mu_table)

    @classmethod
    def concat(cls, parts: Sequence["TransmitRecords"]) -> "TransmitRecords":
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("slot", "basis", "bit", "level")), parts[0].mu_table)


@dataclass
class DetectionRecords:
    slot: np.ndarray
    detector: np.ndarray
    cause: np.ndarray = field(repr=False)  # ground truth, for test oracles only

    def __len__(self) -> int:
        return len(self.slot)

    def __getitem__(self, i) -> DetectionRecord:
        return DetectionRecord(int(self.slot[i]), Detector(int(self.detector[i])),
                               Cause(int(self.cause[i])))

    def __iter__(self) -> Iterator[DetectionRecord]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def empty(cls) -> "DetectionRecords":
        return cls(np.empty(0, np.int64), np.empty(0, np.uint8), np.empty(0, np.uint8))

    @classmethod
    def concat(cls, parts: Sequence["DetectionRecords"]) -> "DetectionRecords":
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("slot", "detector", "cause")))


def transmit(n_pulses: int, decoy_weights, rng_seed: int, cfg: ChannelConfig | None = None,
             slots: np.ndarray | None = None) -> TransmitRecords:
    """Draw basis, bit and decoy level for each pulse.

    Pulses occupy ``slots`` when given (e.g. from the hub scheduler),
    otherwise consecutive pulse positions inside the duty-cycle windows.
    """
    cfg = cfg or ChannelConfig()
    w = np.asarray(decoy_weights, dtype=np.float64)
    if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"decoy weights must be 3 probabilities summing to 1, got {decoy_weights}")
    if n_pulses <= 0:
        raise ConfigurationError("n_pulses must be > 0")
    if slots is None:
        slots = pulse_slots(cfg, n_pulses)
    else:
        slots = np.asarray(slots, dtype=np.int64)
        if len(slots) != n_pulses:
            raise ConfigurationError("slot list length differs from n_pulses")
        if n_pulses > 1 and np.any(np.diff(slots) <= 0):
            raise ConfigurationError("slots must be strictly increasing")
    g = rng(rng_seed)
    basis = g.integers(0, 2, n_pulses, dtype=np.uint8)
    bit = g.integers(0, 2, n_pulses, dtype=np.uint8)
    level = np.searchsorted(np.cumsum(w)[:2], g.random(n_pulses), side="right").astype(np.uint8)
    return TransmitRecords(slots, basis, bit, level, cfg.mean_photons)


def routing_weights(intrinsic_error: float) -> np.ndarray:
    """w[s, d]: chance that a photon sent in state ``s`` reaches detector ``d``."""
    w = np.full((4, 4), 0.25)
    for s in range(4):
        b = s // 2
        w[s, 2 * b + (s % 2)] = 0.5 * (1.0 - intrinsic_error)
        w[s, 2 * b + 1 - (s % 2)] = 0.5 * intrinsic_error
    return w


# all 81 joint outcomes; per detector 0 = silent, 1 = photon, 2 = dark
_OUTCOMES = np.array(list(product(range(3), repeat=4)), dtype=np.uint8)


def _outcome_cdf(cfg: ChannelConfig) -> np.ndarray:
    """Conditional CDF over joint detector outcomes given at least one click.

    Indexed ``[level, sender_state, outcome]``.
    """
    t = link_transmittance(cfg)
    w = routing_weights(cfg.intrinsic_error)
    d = cfg.dark_prob
    cdf = np.zeros((3, 4, len(_OUTCOMES)))
    for lvl, mu in enumerate(cfg.mean_photons):
        for s in range(4):
            a = -np.expm1(-mu * t * w[s])
            per_state = np.stack([(1 - a) * (1 - d), a, (1 - a) * d], axis=1)  # (det, state)
            p = np.prod(per_state[np.arange(4), _OUTCOMES], axis=1)
            p[0] = 0.0  # all silent excluded
            total = p.sum()
            cdf[lvl, s] = np.cumsum(p) / total if total > 0 else np.r_[np.zeros(80), 1.0]
    return cdf


def click_probability(cfg: ChannelConfig, mu: float) -> float:
    """Chance that an armed gate with a pulse of mean ``mu`` produces any click."""
    return float(1.0 - (1.0 - cfg.dark_prob) ** 4 * math.exp(-mu * link_transmittance(cfg)))


def armed_mask(slots: np.ndarray, det_slots: np.ndarray, blocking_slots: int,
               blocked_until: int = -1) -> np.ndarray:
    """True where a gate at ``slots`` is outside every blocking window."""
    slots = np.asarray(slots, dtype=np.int64)
    det_slots = np.unique(np.asarray(det_slots, dtype=np.int64))
    armed = slots > blocked_until
    if len(det_slots) and blocking_slots > 0:
        idx = np.searchsorted(det_slots, slots, side="left") - 1
        prev = det_slots[np.maximum(idx, 0)]
        armed &= ~((idx >= 0) & (slots - prev <= blocking_slots))
    return armed


_CHUNK = 1 << 20


def propagate_detect(tx: TransmitRecords, cfg: ChannelConfig, rng_seed: int,
                     blocked_until: int = -1) -> DetectionRecords:
    """Receiver clicks for a slot-ordered pulse sequence.

    ``blocked_until`` carries a blocking window in from an earlier batch:
    gates at or before that slot are dead.
    """
    return propagate_shared([tx], [cfg], [rng_seed], blocked_until)[0]


def propagate_shared(txs: Sequence[TransmitRecords], cfgs: Sequence[ChannelConfig], rng_seeds: Sequence[int],
                     blocked_until: int = -1) -> list[DetectionRecords]:
    """One receiver shared by several time-multiplexed senders.

    Each sender has its own link and random stream; a click caused by any of
    them opens the blocking window for all. Slots must not overlap between
    senders. All configs must agree on ``blocking_slots``.
    """
    if len({c.blocking_slots for c in cfgs}) > 1:
        raise ConfigurationError("senders sharing a receiver need one blocking time")
    gens = [rng(s) for s in rng_seeds]
    cands = [_candidates(tx, cfg, g) for tx, cfg, g in zip(txs, cfgs, gens)]
    owner = np.concatenate([np.full(len(c), k, dtype=np.int64) for k, c in enumerate(cands)])
    idx = np.concatenate(cands) if cands else np.zeros(0, np.int64)
    slot = np.concatenate([tx.slot[c] for tx, c in zip(txs, cands)]) if cands else np.zeros(0, np.int64)
    order = np.argsort(slot, kind="stable")
    owner, idx, slot = owner[order], idx[order], slot[order]
    live = slot > blocked_until
    owner, idx, slot = owner[live], idx[live], slot[live]
    accepted = _apply_blocking(slot, cfgs[0].blocking_slots if cfgs else 0)
    owner, idx = owner[accepted], idx[accepted]
    return [_resolve(tx, idx[owner == k], cfg, g) for k, (tx, cfg, g) in enumerate(zip(txs, cfgs, gens))]


def _candidates(tx: TransmitRecords, cfg: ChannelConfig, g: np.random.Generator) -> np.ndarray:
    """Pulse indices that would click if their gate were armed."""
    n = len(tx)
    p_click = np.array([click_probability(cfg, mu) for mu in cfg.mean_photons])
    cand = [np.zeros(0, np.int64)]
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        u = g.random(hi - lo)
        cand.append(lo + np.flatnonzero(u < p_click[tx.level[lo:hi]]))
    return np.concatenate(cand)


def _resolve(tx: TransmitRecords, idx: np.ndarray, cfg: ChannelConfig, g: np.random.Generator) -> DetectionRecords:
    """Which detectors fired at accepted clicks, after the double-click policy."""
    if len(idx) == 0:
        return DetectionRecords.empty()
    state = 2 * tx.basis[idx].astype(np.int64) + tx.bit[idx]
    cdf = _outcome_cdf(cfg)[tx.level[idx], state]
    pick = np.minimum((cdf < g.random(len(idx))[:, None]).sum(axis=1), len(_OUTCOMES) - 1)
    outcome = _OUTCOMES[pick]                     # (n_acc, 4)
    fired = outcome > 0
    n_fired = fired.sum(axis=1)

    if cfg.double_click == "discard":
        rows, dets = np.nonzero(fired)
        return DetectionRecords(tx.slot[idx][rows], dets.astype(np.uint8),
                                (outcome[rows, dets] == 2).astype(np.uint8))

    u_res = g.random((len(idx), 2))
    det = np.argmax(fired, axis=1)
    multi = n_fired > 1
    if np.any(multi):
        f = fired[multi]
        rect, diag = f[:, :2].any(axis=1), f[:, 2:].any(axis=1)
        basis = np.where(rect & diag, (u_res[multi, 0] < 0.5).astype(np.int64), diag.astype(np.int64))
        det[multi] = 2 * basis + (u_res[multi, 1] < 0.5)
    cause = np.where((outcome == 1).any(axis=1), Cause.PHOTON, Cause.DARK).astype(np.uint8)
    return DetectionRecords(tx.slot[idx], det.astype(np.uint8), cause)


def _apply_blocking(slots: np.ndarray, blocking_slots: int) -> np.ndarray:
    """Indices of candidate clicks that survive earlier blocking windows."""
    if blocking_slots <= 0 or len(slots) == 0:
        return np.arange(len(slots))
    keep = []
    i, n = 0, len(slots)
    while i < n:
        keep.append(i)
        i = int(np.searchsorted(slots, slots[i] + blocking_slots, side="right"))
    return np.asarray(keep, dtype=np.int64)
