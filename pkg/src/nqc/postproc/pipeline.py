"""Client/hub post-processing of one QKD session, with transcript accounting."""
from __future__ import annotations

import csv
import io
import logging
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .._util import Drbg, bits_to_bytes, derive_seed
from ..photonic_sim import ChannelConfig, DecoyLevel, DetectionRecords, TransmitRecords
from . import auth
from .decoy import EPS_MARGIN_BITS, decoy_bounds, final_key_length
from .privacy import privacy_amplify
from .reconcile import QBER_CEILING, ReconciliationError, client_disclosure, hub_correct
from .sifting import EstimationError, decoy_stats, estimate_qber, shuffle, sift

log = logging.getLogger(__name__)

# shorter high-rate codes show error floors, so tails below 5000 bits are dropped
FRAME_LENGTHS = (10000, 5000)
SAMPLE_FRACTION = 0.1
KEY_UNIT = 256
# codes are picked for the sampled QBER plus this many standard errors
RATE_MARGIN_SIGMA = 2.0


@dataclass
class Message:
    sender: str          # "client" or "hub"
    label: str
    payload: bytes
    bits: int
    key_leak: bool       # reveals information about retained key bits


@dataclass
class Transcript:
    messages: list[Message] = field(default_factory=list)

    def send(self, sender: str, label: str, payload: bytes, bits: int | None = None,
             key_leak: bool = False) -> None:
        self.messages.append(Message(sender, label, payload, 8 * len(payload) if bits is None else bits,
                                     key_leak))

    def leaked_bits(self) -> int:
        return sum(m.bits for m in self.messages if m.key_leak)

    def disclosed_bits(self) -> int:
        return sum(m.bits for m in self.messages)

    def serialize(self, sender: str) -> bytes:
        out = bytearray()
        for m in self.messages:
            if m.sender == sender:
                label = m.label.encode()
                out += struct.pack(">H", len(label)) + label + struct.pack(">I", len(m.payload)) + m.payload
        return bytes(out)


@dataclass
class SessionMetrics:
    session_id: str = ""
    pulses: int = 0
    armed: int = 0
    clicks: int = 0
    sifted: int = 0
    qber: float = float("nan")
    y1_lower: float = 0.0
    e1_upper: float = 0.5
    q1_lower: float = 0.0
    leaked_bits: int = 0
    final_bits: int = 0
    status: str = "ok"

    FIELDS = ("session_id", "pulses", "armed", "clicks", "sifted", "qber", "y1_lower", "e1_upper",
              "q1_lower", "leaked_bits", "final_bits", "status")

    def csv_row(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(_fmt(getattr(self, f)) for f in self.FIELDS)
        return buf.getvalue()

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.FIELDS) + "\n"


def _fmt(v):
    return f"{v:.9g}" if isinstance(v, float) else v


@dataclass
class SessionResult:
    metrics: SessionMetrics
    client_key: np.ndarray
    hub_key: np.ndarray
    transcript: Transcript
    n_sig: int = 0


def design_qber(qber: float, n_sample: int) -> float:
    """Upper confidence value of a sampled error rate, used to pick the code rate."""
    p = max(qber, 1.0 / n_sample)
    return qber + RATE_MARGIN_SIGMA * math.sqrt(p * (1.0 - p) / n_sample)


def split_frames(n: int) -> list[int]:
    """Greedy cut of ``n`` bits into standard frame lengths; the tail is dropped."""
    frames = []
    for length in FRAME_LENGTHS:
        while n >= length:
            frames.append(length)
            n -= length
    return frames


def run_session(tx: TransmitRecords, det: DetectionRecords, cfg: ChannelConfig, seed: int,
                auth_keys: tuple[bytes, bytes], session_id: str = "", blocked_until: int = -1,
                eps_exponent: int = EPS_MARGIN_BITS, hub_clicks: np.ndarray | None = None) -> SessionResult:
    """Sift, estimate, bound, reconcile, amplify and authenticate one session.

    ``auth_keys`` are the fresh (client->hub, hub->client) tag keys. Both
    parties' final keys are returned; they match unless a step failed.
    ``hub_clicks`` are all click slots of a receiver shared with other
    clients, from which the hub's dead windows are announced.
    """
    t = Transcript()
    empty = np.zeros(0, dtype=np.uint8)
    m = SessionMetrics(session_id=session_id, pulses=len(tx))

    t.send("hub", "detected_slots", det.slot.astype(">i8").tobytes())
    t.send("hub", "detector_bases", np.packbits(det.detector // 2).tobytes())
    block = sift(tx, det, cfg, session_id)
    t.send("client", "basis_match", np.packbits(np.ones(len(block), np.uint8)).tobytes())
    t.send("client", "decoy_levels", block.decoy_levels.tobytes())
    m.clicks = int(len(np.unique(det.slot)))
    m.sifted = len(block)

    def finish(status: str) -> SessionResult:
        m.status = status
        m.leaked_bits = t.leaked_bits()
        _tag_transcript(t, auth_keys)
        return SessionResult(m, empty, empty, t)

    if len(block) == 0:
        return finish("no_detections")
    block = shuffle(block, derive_seed(seed, "shuffle"))
    t.send("client", "shuffle_seed", struct.pack(">Q", derive_seed(seed, "shuffle")))
    # decoy and vacuum bits never become key: disclose them in full
    for lvl in (DecoyLevel.VACUUM, DecoyLevel.DECOY):
        t.send("client", f"bits_{lvl.name.lower()}", bits_to_bytes(block.level(lvl).client_bits))
    signal = block.level(DecoyLevel.SIGNAL)
    n_sig = len(signal)
    try:
        qber, remaining = estimate_qber(signal, SAMPLE_FRACTION, derive_seed(seed, "sample"))
    except EstimationError:
        return finish("too_few_bits")
    n_sample = n_sig - len(remaining)
    sampled = ~np.isin(signal.slot_map, remaining.slot_map)
    t.send("client", "sample_bits", bits_to_bytes(signal.client_bits[sampled]), bits=n_sample, key_leak=True)
    m.qber = qber

    stats = decoy_stats(tx, det, block, cfg, blocked_until,
                        signal_errors=(int(round(qber * n_sample)), n_sample), hub_clicks=hub_clicks)
    m.armed = stats.vacuum.sent + stats.decoy.sent + stats.signal.sent
    try:
        bounds = decoy_bounds(stats)
    except ValueError:
        return finish("insufficient_decoy_statistics")
    m.y1_lower, m.e1_upper, m.q1_lower = bounds.y1_lower, bounds.e1_upper, bounds.q1_lower
    if qber >= QBER_CEILING:
        return finish("qber_abort")

    q_design = design_qber(qber, n_sample)
    client_parts, hub_parts = [], []
    pos = 0
    for length in split_frames(len(remaining)):
        cbits = remaining.client_bits[pos:pos + length]
        hbits = remaining.hub_bits[pos:pos + length]
        pos += length
        msg = client_disclosure(cbits, q_design)
        t.send("client", "syndrome", bits_to_bytes(msg.syndrome), bits=len(msg.syndrome), key_leak=True)
        t.send("client", "check_hash", struct.pack(">Q", msg.check_hash), key_leak=True)
        try:
            corrected, _ = hub_correct(hbits, msg, q_design)
        except ReconciliationError as exc:
            log.info("%s: frame of %d bits dropped (%s)", session_id, length, exc)
            t.send("hub", "frame_failed", b"\x00")
            # the frame goes out in full; syndrome and hash were already counted
            t.send("client", "frame_disclosed", bits_to_bytes(cbits),
                   bits=length - len(msg.syndrome) - 64, key_leak=True)
            continue
        t.send("hub", "frame_ok", b"\x01")
        client_parts.append(cbits)
        hub_parts.append(corrected)

    usable = sum(len(p) for p in client_parts)
    q_signal = stats.gain("signal")
    length = final_key_length(n_sig, bounds.q1_lower, bounds.e1_upper, t.leaked_bits(),
                              eps_exponent, q_signal)
    out_len = min(length, usable) // KEY_UNIT * KEY_UNIT
    if out_len == 0:
        res = finish("no_key")
        res.n_sig = n_sig
        return res
    client_raw = np.concatenate(client_parts)
    hub_raw = np.concatenate(hub_parts)
    seed_bits = Drbg(derive_seed(seed, "toeplitz")).bits(usable + out_len - 1)
    t.send("client", "toeplitz_seed", bits_to_bytes(seed_bits))
    client_key = privacy_amplify(client_raw, out_len, seed_bits)
    hub_key = privacy_amplify(hub_raw, out_len, seed_bits)
    m.final_bits = out_len
    m.leaked_bits = t.leaked_bits()
    _tag_transcript(t, auth_keys)
    return SessionResult(m, client_key, hub_key, t, n_sig)


def _tag_transcript(t: Transcript, auth_keys: tuple[bytes, bytes]) -> None:
    """Each side tags what it sent; the peer verifies before accepting the epoch."""
    for sender, key in zip(("client", "hub"), auth_keys):
        body = t.serialize(sender)
        tag = auth.authenticate(body, key)
        auth.verify_or_raise(body, tag, key)
        t.send(sender, "tag", tag)


def metrics_csv(rows: list[SessionMetrics]) -> str:
    return SessionMetrics.csv_header() + "".join(r.csv_row() for r in rows)


def metrics_dict(m: SessionMetrics) -> dict:
    return asdict(m)
