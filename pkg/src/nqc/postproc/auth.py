"""Division-based (CRC-style) hashing over GF(2).

Two users: the keyed, one-time-padded transcript MAC, where the first half
of the key selects a random irreducible degree-64 polynomial and the second
half pads the remainder; and the unkeyed CRC-64 used to confirm that
reconciled frames agree.
"""
from __future__ import annotations

import struct
from functools import lru_cache

from .._util import ct_equal

TAG_BITS = 64
AUTH_KEY_BYTES = 2 * TAG_BITS // 8
_MASK = (1 << 64) - 1
CRC64_ECMA = 0x42F0E1EBA9EA3693


class AuthenticationError(Exception):
    """Tag did not verify; the protocol epoch must be aborted."""


@lru_cache(maxsize=256)
def _table(poly_low: int) -> tuple[int, ...]:
    table = []
    for i in range(256):
        r = i << 56
        for _ in range(8):
            r = ((r << 1) & _MASK) ^ poly_low if r & (1 << 63) else (r << 1) & _MASK
        table.append(r)
    return tuple(table)


def poly_remainder(data: bytes, poly_low: int) -> int:
    """M(x) * x^64 mod (x^64 + poly_low), message bits MSB first."""
    table = _table(poly_low)
    r = 0
    for b in data:
        r = ((r << 8) & _MASK) ^ table[(r >> 56) ^ b]
    return r


def crc64(data: bytes) -> int:
    """Unkeyed CRC-64/ECMA-182 (zero init, no reflection, no final xor)."""
    return poly_remainder(data, CRC64_ECMA)


# --- GF(2)[x] arithmetic on Python ints for the irreducibility test ---

def _mulmod(a: int, b: int, poly: int) -> int:
    deg = poly.bit_length() - 1
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a >> deg & 1:
            a ^= poly
    return r


def _gcd(a: int, b: int) -> int:
    while b:
        while a and a.bit_length() >= b.bit_length():
            a ^= b << (a.bit_length() - b.bit_length())
        a, b = b, a
    return a


def is_irreducible(poly: int) -> bool:
    """Ben-Or test: no factor of degree <= deg/2 divides ``poly``."""
    deg = poly.bit_length() - 1
    if deg < 1:
        return False
    x_pow = 0b10
    for _ in range(deg // 2):
        x_pow = _mulmod(x_pow, x_pow, poly)
        if _gcd(poly, x_pow ^ 0b10) != 1:
            return False
    return True


@lru_cache(maxsize=1024)
def irreducible_from_key(key_half: int) -> int:
    """Low 64 bits of the first irreducible x^64 + c with c >= key_half (odd c only)."""
    c = key_half | 1
    while not is_irreducible((1 << 64) | c):
        c = (c + 2) & _MASK
    return c


def _split_key(auth_key: bytes) -> tuple[int, int]:
    if len(auth_key) != AUTH_KEY_BYTES:
        raise ValueError(f"auth key must be {AUTH_KEY_BYTES} bytes, got {len(auth_key)}")
    hash_half, pad_half = struct.unpack(">QQ", auth_key)
    return hash_half, pad_half


def keyed_hash(message: bytes, hash_half: int) -> int:
    poly = irreducible_from_key(hash_half)
    # length suffix keeps messages differing only in leading zeros apart
    return poly_remainder(message + struct.pack(">Q", len(message)), poly)


def authenticate(message: bytes, auth_key: bytes) -> bytes:
    """64-bit tag: keyed division hash XOR one-time pad."""
    hash_half, pad_half = _split_key(auth_key)
    return struct.pack(">Q", keyed_hash(message, hash_half) ^ pad_half)


def verify(message: bytes, tag: bytes, auth_key: bytes) -> bool:
    return ct_equal(authenticate(message, auth_key), tag)


def verify_or_raise(message: bytes, tag: bytes, auth_key: bytes) -> None:
    if not verify(message, tag, auth_key):
        raise AuthenticationError("transcript tag mismatch")
