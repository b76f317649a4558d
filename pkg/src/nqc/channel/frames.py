"""Encrypt-then-MAC frames keyed per direction and per key epoch.

Default primitives are AES-256 in counter mode and HMAC-SHA256 truncated to
128 bits. The counter block is direction (u32) || seq (u64) || block (u32),
so a (direction, seq) pair must never repeat under one key epoch; the
:class:`Sealer` enforces that.
"""
from __future__ import annotations

import hmac
import logging
import struct
from dataclasses import dataclass
from typing import Callable

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

log = logging.getLogger(__name__)

MAGIC = 0xA5C1
VERSION = 1
TAG_BYTES = 16
KEY_BYTES = 32
MAX_PAYLOAD = 1 << 24
HEADER = struct.Struct(">HBIQQI")


class ChannelError(Exception):
    pass


class FrameFormatError(ChannelError):
    pass


class TagError(ChannelError):
    """Authentication failed; the frame is dropped."""


class ReplayError(ChannelError):
    """Sequence or epoch went backwards: replay alarm."""


class NonceReuseError(ChannelError):
    """Refusing to seal twice under one (epoch, direction, seq)."""


class KeyUnavailableError(ChannelError):
    """Frame names a key epoch this side does not hold."""


def _aes_ctr(key: bytes, nonce: bytes, data: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(data) + enc.finalize()


def _hmac(name: str) -> Callable[[bytes, bytes], bytes]:
    return lambda key, data: hmac.new(key, data, name).digest()[:TAG_BYTES]


CIPHERS: dict[str, Callable[[bytes, bytes, bytes], bytes]] = {"aes-256-ctr": _aes_ctr}
MACS: dict[str, Callable[[bytes, bytes], bytes]] = {
    "hmac-sha256": _hmac("sha256"),
    "hmac-sha3-256": _hmac("sha3_256"),
}


def counter_block(direction: int, seq: int) -> bytes:
    return struct.pack(">IQI", direction, seq, 0)


@dataclass(frozen=True)
class EpochKeys:
    epoch: int
    enc_key: bytes
    mac_key: bytes


def split_key(key: bytes, epoch: int, direction: int) -> EpochKeys:
    """Expand one 256-bit pair key into independent encryption and MAC keys."""
    if len(key) != KEY_BYTES:
        raise ValueError(f"pair key must be {KEY_BYTES} bytes")
    okm = HKDF(hashes.SHA256(), 2 * KEY_BYTES, salt=None,
               info=b"nqc channel" + struct.pack(">IQ", direction, epoch)).derive(key)
    return EpochKeys(epoch, okm[:KEY_BYTES], okm[KEY_BYTES:])


@dataclass(frozen=True)
class SecuredFrame:
    direction: int
    epoch: int
    seq: int
    ciphertext: bytes
    tag: bytes
    version: int = VERSION

    def header(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.direction, self.epoch, self.seq, len(self.ciphertext))

    def to_bytes(self) -> bytes:
        return self.header() + self.ciphertext + self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "SecuredFrame":
        if len(data) < HEADER.size:
            raise FrameFormatError(f"truncated header at byte offset {len(data)}")
        magic, version, direction, epoch, seq, length = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FrameFormatError("bad magic at byte offset 0")
        if version != VERSION:
            raise FrameFormatError(f"unsupported version {version} at byte offset 2")
        end = HEADER.size + length
        if len(data) != end + TAG_BYTES:
            raise FrameFormatError(f"frame length mismatch at byte offset {min(len(data), end)}")
        return cls(direction, epoch, seq, data[HEADER.size:end], data[end:], version)

    @staticmethod
    def wire_length(header: bytes) -> int:
        """Total frame size given at least the fixed header."""
        magic, _, _, _, _, length = HEADER.unpack_from(header)
        if magic != MAGIC:
            raise FrameFormatError("bad magic at byte offset 0")
        return HEADER.size + length + TAG_BYTES


def seal(plaintext: bytes, enc_key: bytes, mac_key: bytes, seq: int, direction: int = 0, epoch: int = 0,
         cipher: str = "aes-256-ctr", mac: str = "hmac-sha256") -> SecuredFrame:
    """Stateless seal; callers own (direction, seq) uniqueness. See :class:`Sealer`."""
    if len(plaintext) > MAX_PAYLOAD:
        raise ValueError("payload too large")
    ct = CIPHERS[cipher](enc_key, counter_block(direction, seq), plaintext)
    unsigned = SecuredFrame(direction, epoch, seq, ct, b"")
    return SecuredFrame(direction, epoch, seq, ct, MACS[mac](mac_key, unsigned.header() + ct))


def open_frame(frame: SecuredFrame, enc_key: bytes, mac_key: bytes,
               cipher: str = "aes-256-ctr", mac: str = "hmac-sha256") -> bytes:
    """Check the tag and decrypt. No replay state; see :class:`Opener`."""
    expect = MACS[mac](mac_key, frame.header() + frame.ciphertext)
    if not hmac.compare_digest(expect, frame.tag):
        raise TagError(f"tag mismatch on direction {frame.direction} seq {frame.seq}")
    return CIPHERS[cipher](enc_key, counter_block(frame.direction, frame.seq), frame.ciphertext)


class KeyFeed:
    """Ordered per-direction epoch keys, handed over without blocking the data path.

    Both ends build their feed from the same QAKE records in the same order,
    so epoch numbers agree.
    """

    def __init__(self, direction: int, keys=()):
        self.direction = direction
        self._keys: dict[int, EpochKeys] = {}
        self._next = 0
        for k in keys:
            self.add(k)

    def add(self, pair_key: bytes) -> int:
        epoch = self._next
        self._keys[epoch] = split_key(pair_key, epoch, self.direction)
        self._next += 1
        return epoch

    def get(self, epoch: int) -> EpochKeys:
        try:
            return self._keys[epoch]
        except KeyError:
            raise KeyUnavailableError(f"no key for epoch {epoch} on direction {self.direction}") from None

    def has(self, epoch: int) -> bool:
        return epoch in self._keys

    def retire(self, epoch: int) -> None:
        """Forget every key up to and including ``epoch``."""
        for e in [e for e in self._keys if e <= epoch]:
            del self._keys[e]

    @property
    def available(self) -> int:
        return len(self._keys)


REKEY_FRAMES = 1 << 16


class Sealer:
    """Sending end of one direction: sequence numbers, rekeying, nonce-reuse guard."""

    def __init__(self, feed: KeyFeed, rekey_frames: int = REKEY_FRAMES,
                 cipher: str = "aes-256-ctr", mac: str = "hmac-sha256"):
        if rekey_frames < 1:
            raise ValueError("rekey_frames must be positive")
        self.feed = feed
        self.rekey_frames = rekey_frames
        self.cipher, self.mac = cipher, mac
        self.epoch = 0
        self.next_seq = 0
        self.sealed_in_epoch = 0

    def ready(self) -> bool:
        """Whether the next frame can be sealed right now."""
        if self.sealed_in_epoch < self.rekey_frames:
            return self.feed.has(self.epoch)
        return self.feed.has(self.epoch + 1)

    def seal(self, plaintext: bytes, seq: int | None = None) -> SecuredFrame:
        if seq is None:
            seq = self.next_seq
        if seq < self.next_seq:
            raise NonceReuseError(f"seq {seq} already used on direction {self.feed.direction}")
        if self.sealed_in_epoch >= self.rekey_frames:
            keys = self.feed.get(self.epoch + 1)
            self.feed.retire(self.epoch)
            self.epoch, self.sealed_in_epoch = keys.epoch, 0
            log.info("direction %d rekeyed to epoch %d", self.feed.direction, self.epoch)
        else:
            keys = self.feed.get(self.epoch)
        frame = seal(plaintext, keys.enc_key, keys.mac_key, seq, self.feed.direction, self.epoch,
                     self.cipher, self.mac)
        self.next_seq = seq + 1
        self.sealed_in_epoch += 1
        return frame


class Opener:
    """Receiving end of one direction: tag check plus replay and regression alarms."""

    def __init__(self, feed: KeyFeed, cipher: str = "aes-256-ctr", mac: str = "hmac-sha256"):
        self.feed = feed
        self.cipher, self.mac = cipher, mac
        self.last_seq = -1
        self.epoch = 0
        self.tag_failures = 0
        self.replay_alarms = 0

    def open(self, data: bytes | SecuredFrame) -> bytes:
        frame = data if isinstance(data, SecuredFrame) else SecuredFrame.from_bytes(data)
        if frame.direction != self.feed.direction:
            raise FrameFormatError(f"frame for direction {frame.direction}, expected {self.feed.direction}")
        if frame.seq <= self.last_seq or frame.epoch < self.epoch:
            self.replay_alarms += 1
            log.warning("replay alarm: direction %d seq %d epoch %d", frame.direction, frame.seq, frame.epoch)
            raise ReplayError(f"seq {frame.seq} / epoch {frame.epoch} not newer than {self.last_seq} / {self.epoch}")
        keys = self.feed.get(frame.epoch)
        try:
            plaintext = open_frame(frame, keys.enc_key, keys.mac_key, self.cipher, self.mac)
        except TagError:
            self.tag_failures += 1
            raise
        if frame.epoch > self.epoch:
            self.feed.retire(frame.epoch - 1)
            self.epoch = frame.epoch
        self.last_seq = frame.seq
        return plaintext

