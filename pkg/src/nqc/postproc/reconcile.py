"""One-way syndrome reconciliation with a disclosed CRC-64 check."""
from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from .._util import bits_to_bytes
from . import ldpc
from .auth import crc64
from .sifting import SiftedBlock

log = logging.getLogger(__name__)

QBER_CEILING = 0.11
VERIFY_HASH_BITS = 64


class ReconciliationError(Exception):
    """Decoding failed or the check hash disagreed; the block is disclosed and dropped."""

    def __init__(self, message: str, leaked_bits: int):
        super().__init__(message)
        self.leaked_bits = leaked_bits


class Reconciled(NamedTuple):
    corrected: np.ndarray
    leaked_bits: int


class Disclosure(NamedTuple):
    """Messages the client puts on the public channel for one frame."""
    rate: float
    syndrome: np.ndarray
    check_hash: int


def client_disclosure(client_bits: np.ndarray, qber_hint: float) -> Disclosure:
    rate = ldpc.choose_rate(qber_hint, len(client_bits))
    code = ldpc.parity_check(len(client_bits), rate)
    f = ldpc.efficiency(code.n, code.m, qber_hint)
    if f > ldpc.MAX_EFFICIENCY:
        log.info("rate %.2f at qber %.4f discloses %.2fx the Shannon minimum", rate, qber_hint, f)
    return Disclosure(rate, code.syndrome(client_bits), crc64(bits_to_bytes(client_bits)))


def hub_correct(hub_bits: np.ndarray, msg: Disclosure, qber_hint: float) -> Reconciled:
    n = len(hub_bits)
    leaked = len(msg.syndrome) + VERIFY_HASH_BITS
    code = ldpc.parity_check(n, msg.rate)
    estimate, converged = ldpc.decode(code, hub_bits, msg.syndrome, qber_hint)
    if not converged:
        raise ReconciliationError("belief propagation did not converge", leaked_bits=n)
    if crc64(bits_to_bytes(estimate)) != msg.check_hash:
        raise ReconciliationError("verification hash mismatch", leaked_bits=n)
    return Reconciled(estimate, leaked)


def reconcile(block: SiftedBlock, qber_hint: float) -> Reconciled:
    """Correct the hub's bits to the client's; returns (corrected, leaked_bits).

    On failure raises :class:`ReconciliationError` whose ``leaked_bits``
    is the whole block, since it is then disclosed and discarded.
    """
    if not 0.0 <= qber_hint < QBER_CEILING:
        raise ValueError(f"qber_hint {qber_hint} outside [0, {QBER_CEILING})")
    msg = client_disclosure(block.client_bits, qber_hint)
    return hub_correct(block.hub_bits, msg, qber_hint)
