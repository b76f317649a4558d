"""Independent reference implementations used as test oracles.

Each oracle is written from the definitions, sharing no code with the
package beyond its public data types.
"""
from __future__ import annotations

import hashlib
import itertools
import math

import numpy as np


# --- channel -----------------------------------------------------------------

def transmittance(fiber_km: float, alpha_db: float, eta: float) -> float:
    return 10.0 ** (-alpha_db * fiber_km / 10.0) * eta


def click_fraction(mu: float, fiber_km: float, alpha_db: float, eta: float, dark: float) -> float:
    """Per armed gate click chance, four detectors, first order in dark counts."""
    return 1.0 - (1.0 - 4.0 * dark) * math.exp(-mu * transmittance(fiber_km, alpha_db, eta))


def _routing(e: float) -> np.ndarray:
    """Chance that a photon in state (basis, bit) reaches detector 2*basis + bit'."""
    w = np.zeros((4, 4))
    for basis, bit in itertools.product((0, 1), repeat=2):
        s = 2 * basis + bit
        w[s, 2 * basis + bit] = 0.5 * (1 - e)
        w[s, 2 * basis + 1 - bit] = 0.5 * e
        for other in (0, 1):
            w[s, 2 * (1 - basis) + other] = 0.25
    return w


def _sifted_outcomes(fire_prob: np.ndarray, state: int):
    """(P(click), P(sifted), P(sifted error)) with independent detectors.

    A single click keeps its detector. Several clicks pick a fired basis
    uniformly, then a uniformly random bit in it.
    """
    basis, bit = divmod(state, 2)
    click = sifted = err = 0.0
    for fired in itertools.product((0, 1), repeat=4):
        p = np.prod([fire_prob[j] if f else 1 - fire_prob[j] for j, f in enumerate(fired)])
        on = [j for j in range(4) if fired[j]]
        if not on:
            continue
        click += p
        if len(on) == 1:
            if on[0] // 2 == basis:
                sifted += p
                err += p * ((on[0] % 2) != bit)
            continue
        bases = {j // 2 for j in on}
        if basis in bases:
            q = p / len(bases)
            sifted += q
            err += q / 2
    return click, sifted, err


def sifted_qber(mu: float, T: float, e: float, dark: float) -> float:
    """Exact expected sifted error rate for coherent pulses of mean ``mu``."""
    w = _routing(e)
    tot_s = tot_e = 0.0
    for s in range(4):
        fire = 1 - np.exp(-mu * T * w[s]) * (1 - dark)
        _, si, er = _sifted_outcomes(fire, s)
        tot_s += si
        tot_e += er
    return tot_e / tot_s


def single_photon_truth(T: float, e: float, dark: float) -> tuple[float, float]:
    """True single-photon yield Y1 and error rate e1 of the channel."""
    w = _routing(e)
    y = si_tot = er_tot = 0.0
    for s in range(4):
        # exactly one photon: it reaches detector j with probability T * w[s, j]
        for hit in (None, 0, 1, 2, 3):
            p_hit = 1 - T if hit is None else T * w[s, hit]
            fire = np.full(4, dark)
            if hit is not None:
                fire[hit] = 1.0
            c, si, er = _sifted_outcomes(fire, s)
            y += p_hit * c / 4
            si_tot += p_hit * si / 4
            er_tot += p_hit * er / 4
    return y, er_tot / si_tot


# --- GF(2) ---------------------------------------------------------------------

def toeplitz_dense(seed: np.ndarray, out_len: int, n: int) -> np.ndarray:
    """Dense matrix with first column seed[:out_len] (bottom to top) and first row seed[out_len-1:]."""
    T = np.zeros((out_len, n), dtype=np.uint8)
    for i in range(out_len):
        for j in range(n):
            T[i, j] = seed[j - i + out_len - 1]
    return T


def gf2_matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(M.shape[0], dtype=np.uint8)
    for i in range(M.shape[0]):
        acc = 0
        for j in np.flatnonzero(M[i]):
            acc ^= int(v[j])
        out[i] = acc
    return out


def crc16_ccitt_false_bitwise(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


def crc64_ecma_bitwise(data: bytes) -> int:
    poly, crc = 0x42F0E1EBA9EA3693, 0
    for byte in data:
        for k in range(7, -1, -1):
            top = (crc >> 63) ^ ((byte >> k) & 1)
            crc = (crc << 1) & (2 ** 64 - 1)
            if top:
                crc ^= poly
    return crc


# --- Winternitz ------------------------------------------------------------------

def wots_naive(material: bytes, message: bytes, w_bits: int = 4):
    """(signature elements, verification root) straight from the definitions."""
    length = 256 // w_bits
    top = 2 ** w_bits - 1
    bits = bin(int(hashlib.sha256(message).hexdigest(), 16))[2:].zfill(256)
    digits = [int(bits[i * w_bits:(i + 1) * w_bits], 2) for i in range(length)]
    checksum = sum(top - d for d in digits)
    ck_len = math.ceil((length * top).bit_length() / w_bits)
    ck_bits = bin(checksum)[2:].zfill(ck_len * w_bits)
    digits += [int(ck_bits[i * w_bits:(i + 1) * w_bits], 2) for i in range(ck_len)]
    seeds = [hashlib.sha256(material + i.to_bytes(4, "big")).digest() for i in range(len(digits))]

    def chain(x, k):
        for _ in range(k):
            x = hashlib.sha256(x).digest()
        return x

    sig = [chain(s, d) for s, d in zip(seeds, digits)]
    root = hashlib.sha256(b"".join(chain(s, top) for s in seeds)).digest()
    return sig, root
