"""Simplified synchrophasor frames and a steady/fault traffic source.

Loosely shaped like C37.118 data frames but not bit-compatible. Layout,
big-endian: sync u16 (0xA501), station u16, soc u32, frac u32 (ticks of
1/TIME_BASE s), phasor count u8, (magnitude f32, angle f32) per phasor,
freq_dev f32, CRC-16/CCITT (poly 0x1021, init 0xFFFF) over everything before it.
"""
from __future__ import annotations

import binascii
import math
import struct
from dataclasses import dataclass
from typing import Iterator

import numpy as np

SYNC = 0xA501
TIME_BASE = 1_000_000
_HEAD = struct.Struct(">HHIIB")
_CRC = struct.Struct(">H")
MAX_PHASORS = 255
_F32_PI = float(np.float32(math.pi))


class PmuDecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def crc16_ccitt(data: bytes) -> int:
    return binascii.crc_hqx(data, 0xFFFF)


def f32(x: float) -> float:
    return float(np.float32(x))


def wrap_angle(a: float) -> float:
    """Map to (-pi, pi]."""
    a = math.remainder(a, 2 * math.pi)
    return math.pi if a <= -math.pi else a


def f32_angle(a: float) -> float:
    """Nearest single-precision angle, folded into (-pi, pi].

    Single precision cannot hold pi; the two representable values just past
    +-pi both stand for pi.
    """
    return _angle_from_wire(f32(wrap_angle(a)))


def _angle_from_wire(a: float) -> float:
    return math.pi if a >= _F32_PI or a <= -math.pi else a


def _angle_to_wire(a: float) -> float:
    return _F32_PI if a == math.pi else a


@dataclass(frozen=True)
class SynchrophasorFrame:
    station_id: int
    soc: int
    frac: int
    phasors: tuple[tuple[float, float], ...]
    freq_dev: float

    def __post_init__(self):
        if not 0 <= self.station_id <= 0xFFFF:
            raise ValueError("station_id out of u16 range")
        if not 0 <= self.soc <= 0xFFFF_FFFF:
            raise ValueError("soc out of u32 range")
        if not 0 <= self.frac < TIME_BASE:
            raise ValueError(f"frac must be in [0, {TIME_BASE})")
        if len(self.phasors) > MAX_PHASORS:
            raise ValueError("too many phasors")
        for _, ang in self.phasors:
            if not -math.pi < ang <= math.pi:
                raise ValueError(f"angle {ang} outside (-pi, pi]")

    @property
    def time(self) -> float:
        return self.soc + self.frac / TIME_BASE


def frame_length(n_phasors: int) -> int:
    return _HEAD.size + 8 * n_phasors + 4 + _CRC.size


def encode_pmu(frame: SynchrophasorFrame) -> bytes:
    body = bytearray(_HEAD.pack(SYNC, frame.station_id, frame.soc, frame.frac, len(frame.phasors)))
    for mag, ang in frame.phasors:
        body += struct.pack(">ff", mag, _angle_to_wire(ang))
    body += struct.pack(">f", frame.freq_dev)
    return bytes(body) + _CRC.pack(crc16_ccitt(body))


def decode_pmu(data: bytes) -> SynchrophasorFrame:
    if len(data) < _HEAD.size:
        raise PmuDecodeError("truncated header", len(data))
    sync, station, soc, frac, count = _HEAD.unpack_from(data)
    if sync != SYNC:
        raise PmuDecodeError(f"bad sync word {sync:#06x}", 0)
    need = frame_length(count)
    if len(data) < need:
        raise PmuDecodeError(f"truncated frame ({need} bytes expected)", len(data))
    if len(data) > need:
        raise PmuDecodeError("trailing bytes", need)
    crc_at = need - _CRC.size
    (crc,) = _CRC.unpack_from(data, crc_at)
    if crc != crc16_ccitt(data[:crc_at]):
        raise PmuDecodeError("crc mismatch", crc_at)
    vals = struct.unpack_from(f">{2 * count + 1}f", data, _HEAD.size)
    phasors = tuple((vals[2 * i], _angle_from_wire(vals[2 * i + 1])) for i in range(count))
    try:
        return SynchrophasorFrame(station, soc, frac, phasors, vals[-1])
    except ValueError as exc:
        raise PmuDecodeError(str(exc), _HEAD.size) from None


def peek_length(header: bytes) -> int:
    """Full frame size from the first 13 bytes; used to cut a byte stream into frames."""
    sync, _, _, _, count = _HEAD.unpack_from(header)
    if sync != SYNC:
        raise PmuDecodeError(f"bad sync word {sync:#06x}", 0)
    return frame_length(count)


HEADER_BYTES = _HEAD.size


@dataclass(frozen=True)
class Scenario:
    kind: str = "steady"            # or "fault"
    fault_time: float = 10.0        # seconds after stream start
    magnitude: float = 1.0          # per unit
    freq_dev: float = 0.02          # Hz
    fault_magnitude: float = 0.55
    fault_freq_dev: float = -0.35

    def __post_init__(self):
        if self.kind not in ("steady", "fault"):
            raise ValueError(f"unknown scenario {self.kind!r}")


def pmu_source(rate: int, scenario: Scenario | str = "steady", duration: float = 60.0, station_id: int = 1,
               start_soc: int = 1_700_000_000, n_phasors: int = 3) -> Iterator[SynchrophasorFrame]:
    """Deterministic frames at ``rate`` per second for ``duration`` seconds.

    Three-phase phasors rotate at the frequency deviation. Values are held in
    single precision so a decoded stream compares equal to the source.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if isinstance(scenario, str):
        scenario = Scenario(scenario)
    n_frames = int(round(duration * rate))
    for k in range(n_frames):
        ticks = (2 * k * TIME_BASE + rate) // (2 * rate)   # round(k * TIME_BASE / rate)
        t = ticks / TIME_BASE
        faulted = scenario.kind == "fault" and t >= scenario.fault_time
        mag = scenario.fault_magnitude if faulted else scenario.magnitude
        fdev = scenario.fault_freq_dev if faulted else scenario.freq_dev
        base = 2 * math.pi * fdev * t
        phasors = tuple((f32(mag), f32_angle(base - 2 * math.pi * i / 3))
                        for i in range(n_phasors))
        yield SynchrophasorFrame(station_id, start_soc + ticks // TIME_BASE, ticks % TIME_BASE,
                                 phasors, f32(fdev))
