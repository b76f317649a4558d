"""Binary trace files of simulated transmit and detection records.

Little-endian layout: magic "NQCT", u16 version, u16 reserved, u64 transmit
count, u64 detection count, then fixed-width transmit records (slot u64,
basis u8, bit u8, level u8, pad u8, mean_photons f64) followed by detection
records (slot u64, detector u8, cause u8).
"""
from __future__ import annotations

import struct

import numpy as np

from .photonic_sim import DetectionRecords, TransmitRecords

MAGIC = b"NQCT"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQ")
TX_DTYPE = np.dtype([("slot", "<u8"), ("basis", "u1"), ("bit", "u1"), ("level", "u1"), ("pad", "u1"),
                     ("mu", "<f8")])
DET_DTYPE = np.dtype([("slot", "<u8"), ("detector", "u1"), ("cause", "u1")])


class TraceFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def dump_trace(tx: TransmitRecords, det: DetectionRecords) -> bytes:
    t = np.zeros(len(tx), TX_DTYPE)
    t["slot"], t["basis"], t["bit"], t["level"], t["mu"] = tx.slot, tx.basis, tx.bit, tx.level, tx.mean_photons
    d = np.zeros(len(det), DET_DTYPE)
    d["slot"], d["detector"], d["cause"] = det.slot, det.detector, det.cause
    return _HEADER.pack(MAGIC, VERSION, 0, len(t), len(d)) + t.tobytes() + d.tobytes()


def load_trace(data: bytes) -> tuple[TransmitRecords, DetectionRecords]:
    if len(data) < _HEADER.size:
        raise TraceFormatError("truncated header", len(data))
    magic, version, _, n_tx, n_det = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise TraceFormatError("bad magic", 0)
    if version != VERSION:
        raise TraceFormatError(f"unsupported version {version}", 4)
    tx_end = _HEADER.size + n_tx * TX_DTYPE.itemsize
    end = tx_end + n_det * DET_DTYPE.itemsize
    if len(data) != end:
        raise TraceFormatError(f"expected {end} bytes, file has {len(data)}", min(len(data), end))
    t = np.frombuffer(data, TX_DTYPE, n_tx, _HEADER.size)
    d = np.frombuffer(data, DET_DTYPE, n_det, tx_end)
    mu_table = [0.0, 0.0, 0.0]
    for lvl in range(3):
        hit = np.flatnonzero(t["level"] == lvl)
        if len(hit):
            mu_table[lvl] = float(t["mu"][hit[0]])
    tx = TransmitRecords(t["slot"].astype(np.int64), t["basis"].copy(), t["bit"].copy(), t["level"].copy(),
                         tuple(mu_table))
    det = DetectionRecords(d["slot"].astype(np.int64), d["detector"].copy(), d["cause"].copy())
    return tx, det


def write_trace(path, tx: TransmitRecords, det: DetectionRecords) -> None:
    with open(path, "wb") as f:
        f.write(dump_trace(tx, det))


def read_trace(path) -> tuple[TransmitRecords, DetectionRecords]:
    with open(path, "rb") as f:
        return load_trace(f.read())
