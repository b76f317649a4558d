"""Bit-string helpers, deterministic randomness and seed derivation.

Bit strings are ``numpy.uint8`` arrays holding 0/1 values, MSB-first when
converted to and from bytes.
"""
from __future__ import annotations

import hashlib
import hmac
import math
import struct

import numpy as np


class ConfigurationError(ValueError):
    """Invalid parameters or configuration."""


def as_bits(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.uint8)
    if arr.ndim != 1:
        raise ValueError("bit strings must be one-dimensional")
    return arr


def bytes_to_bits(data: bytes, n_bits: int | None = None) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if n_bits is not None:
        bits = bits[:n_bits]
    return bits


def bits_to_bytes(bits) -> bytes:
    return np.packbits(as_bits(bits)).tobytes()


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def ct_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def binary_entropy(p: float) -> float:
    """H2(p) in bits; 0 at the endpoints and 1 for p >= 0.5."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    if p >= 0.5:
        return 1.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def derive_seed(master: int | bytes | str, *path) -> int:
    """Child seed from a master seed and a label path (hash tree).

    Adding a label at one branch never changes any other branch, so new
    clients or epochs leave existing random streams untouched.
    """
    h = hashlib.sha256()
    h.update(_encode_label(master))
    for label in path:
        h.update(b"/")
        h.update(_encode_label(label))
    return int.from_bytes(h.digest()[:8], "big")


def _encode_label(label) -> bytes:
    if isinstance(label, bytes):
        return b"b" + label
    if isinstance(label, (int, np.integer)):
        return b"i" + str(int(label)).encode()
    return b"s" + str(label).encode()


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class Drbg:
    """SHA-256 counter-mode byte stream; stands in for the hardware QRNG."""

    def __init__(self, seed: int | bytes):
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "big", signed=False) if seed >= 0 else str(seed).encode()
        self._key = hashlib.sha256(b"nqc-drbg" + seed).digest()
        self._counter = 0

    def read(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += hashlib.sha256(self._key + struct.pack(">Q", self._counter)).digest()
            self._counter += 1
        return bytes(out[:n])

    def bits(self, n: int) -> np.ndarray:
        return bytes_to_bits(self.read((n + 7) // 8), n)
