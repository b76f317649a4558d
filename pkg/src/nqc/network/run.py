"""Hub-and-spoke epochs: schedule, shared-receiver simulation, post-processing, key stores."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .. import trace
from .._util import Drbg, bits_to_bytes, derive_seed
from ..photonic_sim import ChannelConfig, propagate_shared, transmit
from ..postproc.auth import AUTH_KEY_BYTES
from ..postproc.pipeline import KEY_UNIT, run_session
from ..qkm import KeyExhaustedError, KeyStore, SecretKeyBlock
from .config import NetworkConfig

log = logging.getLogger(__name__)

PRESHARED_AUTH_KEYS = 8


def schedule(clients, cfg: ChannelConfig, order=()) -> np.ndarray:
    """Client id for every active pulse position of one superframe.

    Round-robin over ``order`` (client ids, repeats allowed) or over
    ``clients`` when no order is given.
    """
    clients = list(clients)
    if not clients:
        raise ValueError("schedule needs at least one client")
    seq = [c for c in order if c in clients] or clients
    n = cfg.pulses_per_superframe
    return np.asarray(seq, dtype=np.int64)[np.arange(n) % len(seq)]


def client_slots(assignment: np.ndarray, client_id: int, n_pulses: int, cfg: ChannelConfig,
                 first_superframe: int = 0) -> np.ndarray:
    """Slot indices of a client's next ``n_pulses`` pulses under ``assignment``."""
    pos = np.flatnonzero(assignment == client_id)
    if len(pos) == 0:
        raise ValueError(f"client {client_id} has no slot in the schedule")
    k = np.arange(n_pulses, dtype=np.int64)
    frame = first_superframe + k // len(pos)
    return frame * cfg.superframe_slots + pos[k % len(pos)] * cfg.pulse_period_slots


def superframes_needed(assignment: np.ndarray, clients, n_pulses: int) -> int:
    return max(math.ceil(n_pulses / np.count_nonzero(assignment == c)) for c in clients)


class AuthPool:
    """Tag keys a client shares with the hub: pre-placed, then refilled from QKD output."""

    def __init__(self, keys=()):
        self._keys = deque(keys)

    @classmethod
    def preshared(cls, master_seed: int, client_id: int, n: int = PRESHARED_AUTH_KEYS) -> "AuthPool":
        d = Drbg(derive_seed(master_seed, "preshared-auth", client_id))
        return cls(d.read(AUTH_KEY_BYTES) for _ in range(n))

    def take_pair(self) -> tuple[bytes, bytes]:
        if len(self._keys) < 2:
            raise KeyExhaustedError("authentication key pool exhausted")
        return self._keys.popleft(), self._keys.popleft()

    def refill(self, key_bytes: bytes) -> None:
        for i in range(0, len(key_bytes), AUTH_KEY_BYTES):
            self._keys.append(key_bytes[i:i + AUTH_KEY_BYTES])

    def __len__(self) -> int:
        return len(self._keys)


@dataclass
class EpochReport:
    epoch: int
    client_id: int
    rounds: int = 0
    pulses: int = 0
    armed: int = 0
    clicks: int = 0
    sifted: int = 0
    qber: float = float("nan")
    y1_lower: float = float("nan")
    e1_upper: float = float("nan")
    leaked_bits: int = 0
    final_bits: int = 0
    stored_bits: int = 0
    status: str = ""
    wall_time: float = field(default=0.0, compare=False)

    FIELDS = ("epoch", "client_id", "rounds", "pulses", "armed", "clicks", "sifted", "qber", "y1_lower",
              "e1_upper", "leaked_bits", "final_bits", "stored_bits", "status")

    def as_dict(self, timing: bool = False) -> dict:
        d = {f: getattr(self, f) for f in self.FIELDS}
        if timing:
            d["wall_time"] = self.wall_time
        return d


def _num(v):
    if isinstance(v, float):
        return None if math.isnan(v) else float(f"{v:.9g}")
    return v


def reports_csv(reports, timing: bool = False) -> str:
    cols = EpochReport.FIELDS + (("wall_time",) if timing else ())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        d = r.as_dict(timing)
        w.writerow("" if _num(d[c]) is None else _num(d[c]) for c in cols)
    return buf.getvalue()


def reports_json(reports, timing: bool = False) -> str:
    return json.dumps([{k: _num(v) for k, v in r.as_dict(timing).items()} for r in reports],
                      indent=2, sort_keys=False) + "\n"


@dataclass
class NetworkState:
    hub: KeyStore
    clients: dict          # client id -> KeyStore
    auth: dict             # client id -> AuthPool
    reports: list = field(default_factory=list)
    next_session: dict = field(default_factory=dict)
    next_superframe: int = 0


def new_state(cfg: NetworkConfig) -> NetworkState:
    return NetworkState(
        hub=KeyStore("hub"),
        clients={c: KeyStore(f"client-{c}") for c in cfg.client_ids},
        auth={c: AuthPool.preshared(cfg.master_seed, c) for c in cfg.client_ids},
    )


def run_epoch(cfg: NetworkConfig, state: NetworkState, epoch: int, trace_dir=None) -> list[EpochReport]:
    hub_ch = cfg.hub_channel
    reports = {c: EpochReport(epoch, c) for c in cfg.client_ids}
    t_start = time.perf_counter()
    for rnd in range(cfg.max_rounds):
        active = [c for c in cfg.client_ids if rnd == 0 or reports[c].stored_bits < cfg.epoch_target_bits]
        if not active:
            break
        assignment = schedule(active, hub_ch, cfg.schedule)
        first = state.next_superframe
        txs, chans, seeds = [], [], []
        for c in active:
            ch = cfg.client(c).channel
            slots = client_slots(assignment, c, cfg.pulses_per_client, ch, first)
            txs.append(transmit(cfg.pulses_per_client, cfg.decoy_weights,
                                derive_seed(cfg.master_seed, "tx", c, epoch, rnd), ch, slots))
            chans.append(ch)
            seeds.append(derive_seed(cfg.master_seed, "channel", c, epoch, rnd))
        dets = propagate_shared(txs, chans, seeds)
        state.next_superframe = first + superframes_needed(assignment, active, cfg.pulses_per_client)
        hub_clicks = np.unique(np.concatenate([d.slot for d in dets]))
        for c, tx, det, ch in zip(active, txs, dets, chans):
            if trace_dir is not None:
                trace.write_trace(os.path.join(trace_dir, f"trace-c{c}-e{epoch}-r{rnd}.nqct"), tx, det)
            _post_process(cfg, state, reports[c], c, tx, det, ch, hub_clicks, epoch, rnd)
    wall = time.perf_counter() - t_start
    out = []
    for c in cfg.client_ids:
        r = reports[c]
        r.wall_time = wall
        if r.stored_bits == 0:
            log.warning("client %d produced no key in epoch %d (%s)", c, epoch, r.status)
        out.append(r)
    state.reports.extend(out)
    return out


def _post_process(cfg, state, rep: EpochReport, c: int, tx, det, ch, hub_clicks, epoch: int, rnd: int) -> None:
    session = state.next_session.get(c, 0)
    state.next_session[c] = session + 1
    res = run_session(tx, det, ch, derive_seed(cfg.master_seed, "postproc", c, epoch, rnd),
                      state.auth[c].take_pair(), session_id=f"c{c}-e{epoch}-r{rnd}", hub_clicks=hub_clicks)
    m = res.metrics
    prev_sifted = rep.sifted
    rep.rounds += 1
    rep.pulses += m.pulses
    rep.armed += m.armed
    rep.clicks += m.clicks
    rep.sifted += m.sifted
    rep.leaked_bits += m.leaked_bits
    rep.final_bits += m.final_bits
    rep.status = m.status
    if not math.isnan(m.qber):
        rep.qber = m.qber if math.isnan(rep.qber) else \
            (rep.qber * prev_sifted + m.qber * m.sifted) / max(1, prev_sifted + m.sifted)
    if m.status not in ("too_few_bits", "no_detections", "insufficient_decoy_statistics"):
        rep.y1_lower = m.y1_lower if math.isnan(rep.y1_lower) else min(rep.y1_lower, m.y1_lower)
        rep.e1_upper = m.e1_upper if math.isnan(rep.e1_upper) else max(rep.e1_upper, m.e1_upper)
    if m.final_bits == 0:
        return
    if not np.array_equal(res.client_key, res.hub_key):
        raise RuntimeError(f"session c{c}-e{epoch}-r{rnd}: client and hub keys differ after verification")
    # the first key unit refills the tag-key pool; the rest becomes triples
    state.auth[c].refill(bits_to_bytes(res.hub_key[:KEY_UNIT]))
    rest = res.hub_key[KEY_UNIT:]
    if len(rest):
        block = SecretKeyBlock(rest, f"c{c}-e{epoch}-r{rnd}", session)
        state.hub.ingest(block, c)
        state.clients[c].ingest(SecretKeyBlock(res.client_key[KEY_UNIT:], block.session_id, session), c)
        rep.stored_bits += len(rest)


def run_network(cfg: NetworkConfig, epochs: int = 1, state: NetworkState | None = None,
                trace_dir=None) -> tuple[list[EpochReport], NetworkState]:
    """Run ``epochs`` epochs for every client; a pure function of (cfg, master seed)."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    state = state or new_state(cfg)
    first = len({r.epoch for r in state.reports})
    reports = []
    for e in range(first, first + epochs):
        reports.extend(run_epoch(cfg, state, e, trace_dir))
    return reports, state


def save_state(cfg: NetworkConfig, state: NetworkState, out_dir: str) -> dict:
    """Write encrypted key stores; returns the file names by owner."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"hub": hub_store_path(out_dir)}
    state.hub.save(paths["hub"], cfg.store_passphrase)
    for c, store in state.clients.items():
        paths[f"client-{c}"] = client_store_path(out_dir, c)
        store.save(paths[f"client-{c}"], cfg.store_passphrase)
    return paths


def hub_store_path(out_dir: str) -> str:
    return os.path.join(out_dir, "hub.nqck")


def client_store_path(out_dir: str, client_id: int) -> str:
    return os.path.join(out_dir, f"client-{client_id}.nqck")

