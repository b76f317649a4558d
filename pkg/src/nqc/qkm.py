"""Quantum key management: key triples, hub-brokered pair and group keys.

Every client shares QKD output with the hub (Trent). Both sides cut it into
(K, L, M) triples of 256 bits. For a directed pair a -> b the hub publishes

    P = L_a xor K_b        A = H(K_b || M_a)

and a recovers K_b = P xor L_a, accepting it only if H(K_b || M_a) == A.
Published records are not secret, so the hub may hand out a whole lookup
table and go offline.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from ._util import Drbg, bits_to_bytes, bytes_to_bits, ct_equal, xor_bytes

KEY_BYTES = 32
KEY_BITS = 8 * KEY_BYTES
TRIPLE_BITS = 3 * KEY_BITS
COMPONENTS = ("K", "L", "M")
GROUP_ID_BASE = 0x8000_0000

HASHES: dict[str, Callable[[bytes], bytes]] = {
    "sha256": lambda data: hashlib.sha256(data).digest(),
    "sha3_256": lambda data: hashlib.sha3_256(data).digest(),
}
DEFAULT_HASH = "sha256"


def H(data: bytes, name: str = DEFAULT_HASH) -> bytes:
    return HASHES[name](data)


class KeyExhaustedError(Exception):
    """No unconsumed material of the requested kind; schedule more QKD."""


class ConfirmationError(Exception):
    """Derived key failed its confirmation hash; it must not be used."""


class OneTimeViolation(Exception):
    """A triple component was requested a second time."""


class TableFormatError(ValueError):
    def __init__(self, message: str, offset: int | None = None, index: int | None = None):
        where = []
        if index is not None:
            where.append(f"record {index}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.index = index


class StoreFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SecretKeyBlock:
    bits: np.ndarray
    session_id: str
    epoch: int
    provenance: str = "qkd"

    def __post_init__(self):
        if self.provenance not in ("qkd", "split-share"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if len(self.bits) % KEY_BITS:
            raise ValueError(f"secret key block of {len(self.bits)} bits is not a multiple of {KEY_BITS}")


@dataclass
class KeyTriple:
    client_id: int
    epoch: int
    K: bytes
    L: bytes
    M: bytes
    source_epoch: int = 0
    consumed: dict = field(default_factory=lambda: dict.fromkeys(COMPONENTS, False))

    def __post_init__(self):
        for c in COMPONENTS:
            if len(getattr(self, c)) != KEY_BYTES:
                raise ValueError(f"component {c} must be {KEY_BYTES} bytes")

    def available(self, *components: str) -> bool:
        return not any(self.consumed[c] for c in components)


class ParseResult(NamedTuple):
    triples: list[KeyTriple]
    residual: np.ndarray


def parse_session(bits, client_id: int, first_epoch: int = 0, source_epoch: int = 0) -> ParseResult:
    """Cut consecutive 768-bit windows into (K, L, M); the tail is carried over."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = len(bits) // TRIPLE_BITS
    triples = []
    for i in range(n):
        w = bits[i * TRIPLE_BITS:(i + 1) * TRIPLE_BITS]
        k, l, m = (bits_to_bytes(w[j * KEY_BITS:(j + 1) * KEY_BITS]) for j in range(3))
        triples.append(KeyTriple(client_id, first_epoch + i, k, l, m, source_epoch))
    return ParseResult(triples, bits[n * TRIPLE_BITS:].copy())


class AuditEvent(NamedTuple):
    client_id: int
    epoch: int
    component: str
    purpose: str


class KeyStore:
    """Triples by (client_id, epoch) with one-time consumption and an audit log.

    Single-writer: callers serialise mutations.
    """

    def __init__(self, owner: str = "hub"):
        self.owner = owner
        self.triples: dict[tuple[int, int], KeyTriple] = {}
        self.residual: dict[int, np.ndarray] = {}
        self.next_epoch: dict[int, int] = {}
        self.last_source_epoch: dict[int, int] = {}
        self.audit: list[AuditEvent] = []
        self.next_group_id = GROUP_ID_BASE

    def ingest(self, block: SecretKeyBlock, client_id: int) -> list[KeyTriple]:
        """Append fresh QKD output for ``client_id``; returns the new triples."""
        last = self.last_source_epoch.get(client_id)
        if last is not None and block.epoch <= last:
            raise ValueError(f"epoch {block.epoch} for client {client_id} is not newer than {last}")
        self.last_source_epoch[client_id] = block.epoch
        carried = self.residual.get(client_id, np.zeros(0, np.uint8))
        res = parse_session(np.concatenate([carried, np.asarray(block.bits, np.uint8)]), client_id,
                            self.next_epoch.get(client_id, 0), block.epoch)
        for t in res.triples:
            self.triples[(client_id, t.epoch)] = t
        self.next_epoch[client_id] = self.next_epoch.get(client_id, 0) + len(res.triples)
        self.residual[client_id] = res.residual
        return res.triples

    def clients(self) -> list[int]:
        return sorted({c for c, _ in self.triples})

    def triple(self, client_id: int, epoch: int) -> KeyTriple:
        try:
            return self.triples[(client_id, epoch)]
        except KeyError:
            raise KeyExhaustedError(f"no triple for client {client_id} epoch {epoch}") from None

    def lowest(self, client_id: int, *components: str) -> KeyTriple:
        """Lowest-epoch triple of ``client_id`` with all ``components`` unconsumed."""
        epochs = sorted(e for c, e in self.triples if c == client_id)
        for e in epochs:
            t = self.triples[(client_id, e)]
            if t.available(*components):
                return t
        raise KeyExhaustedError(f"client {client_id} has no unconsumed {'/'.join(components)}")

    def consume(self, t: KeyTriple, component: str, purpose: str) -> bytes:
        if t.consumed[component]:
            raise OneTimeViolation(f"{component} of client {t.client_id} epoch {t.epoch} already used")
        t.consumed[component] = True
        self.audit.append(AuditEvent(t.client_id, t.epoch, component, purpose))
        return getattr(t, component)

    def remaining(self, client_id: int, component: str) -> int:
        return sum(1 for (c, _), t in self.triples.items() if c == client_id and not t.consumed[component])

    # --- persistence -------------------------------------------------------

    def to_json(self) -> bytes:
        body = {
            "owner": self.owner,
            "next_group_id": self.next_group_id,
            "triples": [
                {"client_id": t.client_id, "epoch": t.epoch, "source_epoch": t.source_epoch,
                 "K": t.K.hex(), "L": t.L.hex(), "M": t.M.hex(), "consumed": t.consumed}
                for _, t in sorted(self.triples.items())
            ],
            "residual": {str(c): [len(r), bits_to_bytes(r).hex()] for c, r in sorted(self.residual.items())},
            "next_epoch": {str(c): e for c, e in sorted(self.next_epoch.items())},
            "last_source_epoch": {str(c): e for c, e in sorted(self.last_source_epoch.items())},
            "audit": [list(a) for a in self.audit],
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_json(cls, raw: bytes) -> "KeyStore":
        body = json.loads(raw)
        s = cls(body["owner"])
        s.next_group_id = body["next_group_id"]
        for d in body["triples"]:
            t = KeyTriple(d["client_id"], d["epoch"], bytes.fromhex(d["K"]), bytes.fromhex(d["L"]),
                          bytes.fromhex(d["M"]), d["source_epoch"], dict(d["consumed"]))
            s.triples[(t.client_id, t.epoch)] = t
        s.residual = {int(c): bytes_to_bits(bytes.fromhex(h), n) for c, (n, h) in body["residual"].items()}
        s.next_epoch = {int(c): e for c, e in body["next_epoch"].items()}
        s.last_source_epoch = {int(c): e for c, e in body["last_source_epoch"].items()}
        s.audit = [AuditEvent(*a) for a in body["audit"]]
        return s

    def save(self, path, passphrase: str) -> None:
        with open(path, "wb") as f:
            f.write(encrypt_store(self.to_json(), passphrase, self.owner))

    @classmethod
    def load(cls, path, passphrase: str) -> "KeyStore":
        with open(path, "rb") as f:
            return cls.from_json(decrypt_store(f.read(), passphrase))


STORE_MAGIC = b"NQCK"
STORE_VERSION = 1


def _store_key(passphrase: str, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=2 ** 14, r=8, p=1).derive(passphrase.encode())


def encrypt_store(plaintext: bytes, passphrase: str, owner: str) -> bytes:
    """NQCK framing: magic, u16 version, 16-byte salt, 12-byte nonce, u32 length, AES-GCM body.

    Salt and nonce are derived deterministically (synthetic IV), so identical
    stores produce identical files.
    """
    salt = hashlib.sha256(b"nqck-salt" + owner.encode()).digest()[:16]
    key = _store_key(passphrase, salt)
    nonce = hmac.new(key, plaintext, hashlib.sha256).digest()[:12]
    header = STORE_MAGIC + struct.pack("<H", STORE_VERSION) + salt + nonce
    body = AESGCM(key).encrypt(nonce, plaintext, header)
    return header + struct.pack("<I", len(body)) + body


def decrypt_store(data: bytes, passphrase: str) -> bytes:
    if len(data) < 38 or data[:4] != STORE_MAGIC:
        raise StoreFormatError("not a key store file")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != STORE_VERSION:
        raise StoreFormatError(f"unsupported key store version {version}")
    header, salt, nonce = data[:34], data[6:22], data[22:34]
    (length,) = struct.unpack_from("<I", data, 34)
    body = data[38:]
    if len(body) != length:
        raise StoreFormatError(f"key store body truncated at byte offset {38 + len(body)}")
    try:
        return AESGCM(_store_key(passphrase, salt)).decrypt(nonce, body, header)
    except InvalidTag:
        raise StoreFormatError("wrong passphrase or corrupted key store") from None


# --- QAKE ---------------------------------------------------------------------

@dataclass(frozen=True)
class PairKeyRecord:
    from_id: int
    to_id: int
    epoch: int        # deriving side's triple epoch
    to_epoch: int     # target side's K epoch (group records: 0)
    P: bytes
    A: bytes


def confirmation(key: bytes, m: bytes, hash_name: str = DEFAULT_HASH) -> bytes:
    return H(key + m, hash_name)


def publish_pair_key(store: KeyStore, a: int, b: int, hash_name: str = DEFAULT_HASH) -> PairKeyRecord:
    """Hub side: wrap K_b for a under L_a and bind it to M_a."""
    if a == b:
        raise ValueError("pair key needs two distinct clients")
    ta = store.lowest(a, "L", "M")
    tb = store.lowest(b, "K")
    l_a = store.consume(ta, "L", f"pair {a}->{b} mask")
    m_a = store.consume(ta, "M", f"pair {a}->{b} confirm")
    k_b = store.consume(tb, "K", f"pair {a}->{b} key")
    return PairKeyRecord(a, b, ta.epoch, tb.epoch, xor_bytes(l_a, k_b), confirmation(k_b, m_a, hash_name))


def derive_pair_key(rec: PairKeyRecord, L_own: bytes, M_own: bytes, hash_name: str = DEFAULT_HASH) -> bytes:
    """Client side: unwrap and confirm. Raises ConfirmationError on any mismatch."""
    key = xor_bytes(rec.P, L_own)
    if not ct_equal(confirmation(key, M_own, hash_name), rec.A):
        raise ConfirmationError(f"key {rec.from_id}->{rec.to_id} epoch {rec.epoch} does not match its confirmation hash")
    return key


def derive_from_store(client_store: KeyStore, rec: PairKeyRecord, hash_name: str = DEFAULT_HASH) -> bytes:
    """Derive with the client's own stored L and M, consuming them."""
    t = client_store.triple(rec.from_id, rec.epoch)
    if not t.available("L", "M"):
        raise OneTimeViolation(f"L/M of epoch {rec.epoch} already used")
    key = derive_pair_key(rec, t.L, t.M, hash_name)
    client_store.consume(t, "L", f"derive {rec.from_id}->{rec.to_id}")
    client_store.consume(t, "M", f"derive {rec.from_id}->{rec.to_id}")
    return key


def receive_key(client_store: KeyStore, rec: PairKeyRecord) -> bytes:
    """Target side of a pair record: its own K at ``rec.to_epoch``."""
    t = client_store.triple(rec.to_id, rec.to_epoch)
    return client_store.consume(t, "K", f"receive {rec.from_id}->{rec.to_id}")


def publish_group_key(store: KeyStore, members: Iterable[int], entropy: Drbg,
                      hash_name: str = DEFAULT_HASH) -> tuple[list[PairKeyRecord], int]:
    """Hub draws a group key G and wraps it for every member: P_i = L_i xor G, A_i = H(G || M_i).

    All-or-nothing: material is checked for every member before any is consumed.
    """
    members = sorted(set(members))
    if len(members) < 2:
        raise ValueError("a group needs at least two members")
    picks = {c: store.lowest(c, "L", "M") for c in members}
    group_id = store.next_group_id
    store.next_group_id += 1
    g = entropy.read(KEY_BYTES)
    records = []
    for c in members:
        t = picks[c]
        l = store.consume(t, "L", f"group {group_id:#x} mask")
        m = store.consume(t, "M", f"group {group_id:#x} confirm")
        records.append(PairKeyRecord(c, group_id, t.epoch, 0, xor_bytes(l, g), confirmation(g, m, hash_name)))
    return records, group_id


def split_hub_key(component: bytes, seed: int) -> tuple[bytes, bytes]:
    """Two XOR shares; either one alone is uniformly random."""
    share1 = Drbg(seed).read(len(component))
    return share1, xor_bytes(component, share1)


def recombine(share1: bytes, share2: bytes) -> bytes:
    return xor_bytes(share1, share2)


# --- published lookup table ----------------------------------------------------

TABLE_MAGIC = b"NQCP"
TABLE_VERSION = 1
_RECORD = struct.Struct("<IIQ32s32s")
_HEADER = struct.Struct("<4sHI")


def _pack_epoch(rec: PairKeyRecord) -> int:
    return (rec.epoch << 32) | rec.to_epoch


def export_lookup_table(records: Sequence[PairKeyRecord]) -> bytes:
    """NQCP table: header, fixed 80-byte records, SHA-256 of everything before it.

    The u64 epoch field carries the deriving side's epoch in its high half
    and the target's K epoch in its low half.
    """
    body = bytearray(_HEADER.pack(TABLE_MAGIC, TABLE_VERSION, len(records)))
    for r in records:
        body += _RECORD.pack(r.from_id, r.to_id, _pack_epoch(r), r.P, r.A)
    return bytes(body) + hashlib.sha256(body).digest()


def import_lookup_table(data: bytes) -> list[PairKeyRecord]:
    if len(data) < _HEADER.size:
        raise TableFormatError("truncated header", offset=len(data))
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != TABLE_MAGIC:
        raise TableFormatError("bad magic", offset=0)
    if version != TABLE_VERSION:
        raise TableFormatError(f"unsupported version {version}", offset=4)
    end = _HEADER.size + count * _RECORD.size
    if len(data) < end:
        idx = (len(data) - _HEADER.size) // _RECORD.size
        raise TableFormatError("truncated record", offset=len(data), index=idx)
    if len(data) != end + 32:
        raise TableFormatError("missing or oversized integrity hash", offset=min(len(data), end))
    if not ct_equal(hashlib.sha256(data[:end]).digest(), data[end:]):
        raise TableFormatError("integrity hash mismatch", offset=end)
    records = []
    last: dict[tuple[int, int], int] = {}
    for i in range(count):
        off = _HEADER.size + i * _RECORD.size
        f, t, ep, p, a = _RECORD.unpack_from(data, off)
        if f == t:
            raise TableFormatError("record pairs a client with itself", offset=off, index=i)
        if (f, t) in last and ep <= last[(f, t)]:
            raise TableFormatError("epoch not increasing for pair", offset=off + 8, index=i)
        last[(f, t)] = ep
        records.append(PairKeyRecord(f, t, ep >> 32, ep & 0xFFFF_FFFF, p, a))
    return records
