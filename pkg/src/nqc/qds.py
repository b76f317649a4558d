"""Winternitz one-time signatures keyed from fresh QKD material.

The signer and the hub both hold the QKD key the signing key is expanded
from, so the hub can compute the verification key itself and pass it to the
verifier under a tag keyed with verifier-hub material. Every message needs
a new signing key; there is no Merkle tree.
"""
from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ._util import bits_to_bytes
from .postproc import auth
from .qkm import KeyExhaustedError, KeyStore, OneTimeViolation

log = logging.getLogger(__name__)

DIGEST_BITS = 256
HASH_BYTES = 32


def _h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class WotsParams:
    w_bits: int = 4

    def __post_init__(self):
        if self.w_bits < 1 or DIGEST_BITS % self.w_bits:
            raise ValueError(f"w_bits must divide {DIGEST_BITS}")

    @property
    def chain_len(self) -> int:
        return 1 << self.w_bits

    @property
    def n_msg_chains(self) -> int:
        return DIGEST_BITS // self.w_bits

    @property
    def n_checksum_chains(self) -> int:
        max_checksum = self.n_msg_chains * (self.chain_len - 1)
        return math.ceil(max_checksum.bit_length() / self.w_bits)

    @property
    def n_chains(self) -> int:
        return self.n_msg_chains + self.n_checksum_chains


@dataclass
class SigningKey:
    chain_seeds: list[bytes]
    key_id: int
    params: WotsParams = WotsParams()
    used: bool = False


@dataclass(frozen=True)
class VerificationKey:
    root: bytes
    key_id: int
    params: WotsParams = WotsParams()


@dataclass(frozen=True)
class Signature:
    key_id: int
    params: WotsParams
    elements: tuple[bytes, ...]


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.accepted


def make_key_id(client_id: int, epoch: int) -> int:
    return (client_id << 32) | epoch


def keygen_from_qkd(key_material, params: WotsParams = WotsParams(), key_id: int = 0) -> SigningKey:
    """Expand >= 256 bits of QKD output into chain seeds H(material || i)."""
    if isinstance(key_material, (bytes, bytearray)):
        material = bytes(key_material)
        n_bits = 8 * len(material)
    else:
        bits = np.asarray(key_material, dtype=np.uint8)
        material, n_bits = bits_to_bytes(bits), len(bits)
    if n_bits < DIGEST_BITS:
        raise KeyExhaustedError(f"need {DIGEST_BITS} bits of fresh key material, got {n_bits}")
    seeds = [_h(material + struct.pack(">I", i)) for i in range(params.n_chains)]
    return SigningKey(seeds, key_id, params)


def chunks(message: bytes, params: WotsParams) -> list[int]:
    """Base-2^w digits of H(message) followed by the checksum digits."""
    digest = int.from_bytes(_h(message), "big")
    w, n = params.w_bits, params.n_msg_chains
    mask = params.chain_len - 1
    digits = [(digest >> (DIGEST_BITS - w * (i + 1))) & mask for i in range(n)]
    checksum = sum(mask - c for c in digits)
    k = params.n_checksum_chains
    digits += [(checksum >> (w * (k - 1 - i))) & mask for i in range(k)]
    return digits


def _advance(x: bytes, steps: int) -> bytes:
    sha = hashlib.sha256
    for _ in range(steps):
        x = sha(x).digest()
    return x


def compute_verification(S: SigningKey) -> VerificationKey:
    """Run every chain to its end and compress the ends into one root."""
    if S.used:
        raise OneTimeViolation("verification key requested for a used signing key")
    steps = S.params.chain_len - 1
    ends = b"".join(_advance(seed, steps) for seed in S.chain_seeds)
    return VerificationKey(_h(ends), S.key_id, S.params)


def sign(message: bytes, S: SigningKey) -> Signature:
    if S.used:
        log.error("one-time violation: signing key %#x reused", S.key_id)
        raise OneTimeViolation(f"signing key {S.key_id:#x} already used")
    S.used = True
    digits = chunks(message, S.params)
    return Signature(S.key_id, S.params, tuple(_advance(s, c) for s, c in zip(S.chain_seeds, digits)))


def verify(message: bytes, sig: Signature, V: VerificationKey) -> Verdict:
    if sig.params != V.params:
        return Verdict(False, "parameter mismatch")
    if sig.key_id != V.key_id:
        return Verdict(False, "key id mismatch")
    if len(sig.elements) != V.params.n_chains or any(len(e) != HASH_BYTES for e in sig.elements):
        return Verdict(False, "wrong element count or size")
    top = V.params.chain_len - 1
    digits = chunks(message, V.params)
    ends = b"".join(_advance(e, top - c) for e, c in zip(sig.elements, digits))
    if _h(ends) != V.root:
        return Verdict(False, "root mismatch")
    return Verdict(True)


# --- wire format -----------------------------------------------------------

SIG_MAGIC = b"NQCS"
SIG_VERSION = 1
_SIG_HEADER = struct.Struct(">4sHQBHH")


class SignatureFormatError(ValueError):
    pass


def encode_signature(sig: Signature) -> bytes:
    p = sig.params
    head = _SIG_HEADER.pack(SIG_MAGIC, SIG_VERSION, sig.key_id, p.w_bits, p.n_msg_chains, p.n_checksum_chains)
    return head + b"".join(sig.elements)


def decode_signature(data: bytes) -> Signature:
    if len(data) < _SIG_HEADER.size:
        raise SignatureFormatError(f"truncated header at byte offset {len(data)}")
    magic, version, key_id, w, n_msg, n_ck = _SIG_HEADER.unpack_from(data)
    if magic != SIG_MAGIC or version != SIG_VERSION:
        raise SignatureFormatError("not an NQCS signature")
    params = WotsParams(w)
    if (n_msg, n_ck) != (params.n_msg_chains, params.n_checksum_chains):
        raise SignatureFormatError("chain counts disagree with w_bits")
    body = data[_SIG_HEADER.size:]
    if len(body) != HASH_BYTES * params.n_chains:
        raise SignatureFormatError(f"element block is {len(body)} bytes, expected {HASH_BYTES * params.n_chains}")
    elements = tuple(body[i:i + HASH_BYTES] for i in range(0, len(body), HASH_BYTES))
    return Signature(key_id, params, elements)


# --- QKD-keyed signing and hub-mediated distribution -------------------------

def signer_key(client_store: KeyStore, client_id: int, params: WotsParams = WotsParams()) -> SigningKey:
    """Signer side: take the lowest unused K as signing material."""
    t = client_store.lowest(client_id, "K")
    material = client_store.consume(t, "K", "qds signing key")
    return keygen_from_qkd(material, params, make_key_id(client_id, t.epoch))


def hub_verification_key(hub_store: KeyStore, key_id: int, params: WotsParams = WotsParams()) -> VerificationKey:
    """Hub side: rebuild S from the shared K named by ``key_id`` and compute V."""
    t = hub_store.triple(key_id >> 32, key_id & 0xFFFF_FFFF)
    material = hub_store.consume(t, "K", "qds signing key")
    return compute_verification(keygen_from_qkd(material, params, key_id))


@dataclass(frozen=True)
class VerificationMessage:
    signer: int
    verifier: int
    auth_epoch: int
    key: VerificationKey
    tag: bytes

    def body(self) -> bytes:
        return _vm_body(self.signer, self.verifier, self.auth_epoch, self.key)


def _vm_body(signer: int, verifier: int, auth_epoch: int, V: VerificationKey) -> bytes:
    return struct.pack(">IIQQB", signer, verifier, auth_epoch, V.key_id, V.params.w_bits) + V.root


def _auth_key(component: bytes) -> bytes:
    return component[:auth.AUTH_KEY_BYTES]


def distribute_verification(hub_store: KeyStore, signer: int, verifier: int,
                            V: VerificationKey) -> VerificationMessage:
    """Tag V with fresh verifier-hub material (the verifier's lowest unused M)."""
    t = hub_store.lowest(verifier, "M")
    key = _auth_key(hub_store.consume(t, "M", f"qds V auth for {signer}"))
    return VerificationMessage(signer, verifier, t.epoch, V, auth.authenticate(_vm_body(signer, verifier, t.epoch, V), key))


@dataclass
class Verifier:
    """Verifier-side state: its own key store and the V keys it has accepted."""
    client_id: int
    store: KeyStore
    accepted: dict = field(default_factory=dict)   # key_id -> VerificationKey

    def receive(self, msg: VerificationMessage, expected_key_id: int | None = None) -> VerificationKey:
        if msg.verifier != self.client_id:
            raise auth.AuthenticationError("verification key addressed to another client")
        if expected_key_id is not None and msg.key.key_id != expected_key_id:
            raise auth.AuthenticationError("stale verification key (key id mismatch)")
        if msg.key.key_id in self.accepted:
            raise auth.AuthenticationError("verification key replayed")
        t = self.store.triple(self.client_id, msg.auth_epoch)
        if not t.available("M"):
            raise auth.AuthenticationError("authentication material already used")
        key = _auth_key(self.store.consume(t, "M", f"qds V auth for {msg.signer}"))
        auth.verify_or_raise(msg.body(), msg.tag, key)
        self.accepted[msg.key.key_id] = msg.key
        return msg.key

    def check(self, message: bytes, sig: Signature) -> Verdict:
        V = self.accepted.get(sig.key_id)
        if V is None:
            return Verdict(False, "no verification key for this key id")
        return verify(message, sig, V)
