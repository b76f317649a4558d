"""Toeplitz-hash privacy amplification over GF(2)."""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from .._util import as_bits


class ParameterError(ValueError):
    pass


def toeplitz_entry_index(i: int, j: int, out_len: int) -> int:
    """Seed position of T[i, j]: the first row is seed[out_len-1:], the first
    column is seed[:out_len] read upwards from the bottom row."""
    return j - i + out_len - 1


def privacy_amplify(key, out_len: int, toeplitz_seed) -> np.ndarray:
    """Return T @ key over GF(2), T the out_len x len(key) Toeplitz matrix of the seed."""
    key = as_bits(key)
    seed = as_bits(toeplitz_seed)
    n = len(key)
    if out_len < 0 or out_len > n:
        raise ParameterError(f"out_len {out_len} must be in [0, {n}]")
    if len(seed) != n + out_len - 1:
        raise ParameterError(f"seed length {len(seed)} != key length + out_len - 1 = {n + out_len - 1}")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    # y[i] = sum_j seed[j - i + m - 1] key[j] = (seed * reversed(key))[n + m - 2 - i]
    if n * out_len <= 1 << 22:
        conv = np.convolve(seed.astype(np.int64), key[::-1].astype(np.int64))
    else:
        conv = np.rint(fftconvolve(seed.astype(np.float64), key[::-1].astype(np.float64))).astype(np.int64)
    return (conv[n - 1:n + out_len - 1][::-1] & 1).astype(np.uint8)
