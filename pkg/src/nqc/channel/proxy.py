"""Bump-in-the-wire TCP proxy: seal or open every frame, fail closed.

A seal proxy cuts its plaintext ingress stream into PMU frames and forwards
:class:`SecuredFrame` bytes; an open proxy does the reverse. Nothing is ever
forwarded unprotected: without a key, frames wait in a bounded buffer and
the oldest are dropped with an alarm once it fills.
"""
from __future__ import annotations

import asyncio
import csv
import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import pmu
from .frames import (HEADER, ChannelError, KeyFeed, KeyUnavailableError, Opener, ReplayError, SecuredFrame,
                     Sealer, TagError)

log = logging.getLogger(__name__)

BUFFER_FRAMES = 256
REPORT_INTERVAL = 10.0
KEY_POLL = 0.005


@dataclass
class LatencyReport:
    count: int
    p50_us: float
    p95_us: float
    p99_us: float

    @classmethod
    def from_samples(cls, added_us) -> "LatencyReport":
        a = np.asarray(added_us, dtype=float)
        if a.size == 0:
            return cls(0, 0.0, 0.0, 0.0)
        p50, p95, p99 = np.percentile(a, [50, 95, 99])
        return cls(int(a.size), float(p50), float(p95), float(p99))


@dataclass
class ProxyStats:
    mode: str
    forwarded: int = 0
    tag_failures: int = 0
    replay_alarms: int = 0
    format_errors: int = 0
    dropped_no_key: int = 0
    epochs: list = field(default_factory=list)
    ingress_ns: list = field(default_factory=list)
    egress_ns: list = field(default_factory=list)

    @property
    def added_us(self) -> list[float]:
        return [(e - i) / 1000.0 for i, e in zip(self.ingress_ns, self.egress_ns)]

    def report(self) -> LatencyReport:
        return LatencyReport.from_samples(self.added_us)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame_idx", "ingress_ns", "egress_ns", "added_us"])
            for k, (i, e) in enumerate(zip(self.ingress_ns, self.egress_ns)):
                w.writerow([k, i, e, f"{(e - i) / 1000.0:.3f}"])


async def _read_pmu(reader: asyncio.StreamReader) -> bytes:
    head = await reader.readexactly(pmu.HEADER_BYTES)
    return head + await reader.readexactly(pmu.peek_length(head) - len(head))


async def _read_secured(reader: asyncio.StreamReader) -> bytes:
    head = await reader.readexactly(HEADER.size)
    return head + await reader.readexactly(SecuredFrame.wire_length(head) - len(head))


class _Codec:
    """Seal or open one frame; ``ready`` says whether a key is in hand."""

    def __init__(self, mode: str, feed: KeyFeed, rekey_frames: int):
        if mode not in ("seal", "open"):
            raise ValueError(f"mode must be seal or open, not {mode!r}")
        self.mode = mode
        self.sealer = Sealer(feed, rekey_frames) if mode == "seal" else None
        self.opener = Opener(feed) if mode == "open" else None

    def ready(self, raw: bytes) -> bool:
        if self.sealer:
            return self.sealer.ready()
        epoch = SecuredFrame.from_bytes(raw).epoch
        return epoch < self.opener.epoch or self.opener.feed.has(epoch)

    def apply(self, raw: bytes) -> tuple[bytes, int]:
        if self.sealer:
            frame = self.sealer.seal(raw)
            return frame.to_bytes(), frame.epoch
        frame = SecuredFrame.from_bytes(raw)
        return self.opener.open(frame), frame.epoch


class Proxy:
    """One ordered pipeline from an ingress stream to an egress stream."""

    def __init__(self, mode: str, feed: KeyFeed, rekey_frames: int = 1 << 16,
                 buffer_frames: int = BUFFER_FRAMES, report_interval: float = REPORT_INTERVAL):
        self.codec = _Codec(mode, feed, rekey_frames)
        self.stats = ProxyStats(mode)
        self.buffer_frames = buffer_frames
        self.report_interval = report_interval
        self._pending: deque = deque()

    async def pump(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        read = _read_pmu if self.codec.mode == "seal" else _read_secured
        last_report = time.monotonic()
        while True:
            try:
                raw = await read(reader)
            except asyncio.IncompleteReadError:
                break
            except (pmu.PmuDecodeError, ChannelError) as exc:
                # the stream can no longer be framed; stop rather than guess
                self.stats.format_errors += 1
                log.error("%s proxy: unframeable ingress (%s); closing", self.codec.mode, exc)
                break
            self._pending.append((raw, time.monotonic_ns()))
            if len(self._pending) > self.buffer_frames:
                self._pending.popleft()
                self.stats.dropped_no_key += 1
                log.error("%s proxy: key exhausted, buffer full, frame dropped", self.codec.mode)
            await self._flush(writer)
            if time.monotonic() - last_report >= self.report_interval:
                last_report = time.monotonic()
                log.info("%s proxy: %s", self.codec.mode, self.stats.report())
        while self._pending and await self._wait_for_key():
            await self._flush(writer)
        self.stats.dropped_no_key += len(self._pending)
        self._pending.clear()

    async def _wait_for_key(self, timeout: float = 1.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.codec.ready(self._pending[0][0]):
                return True
            await asyncio.sleep(KEY_POLL)
        return False

    async def _flush(self, writer: asyncio.StreamWriter) -> None:
        while self._pending:
            raw, t_in = self._pending[0]
            try:
                if not self.codec.ready(raw):
                    return
            except ChannelError:
                pass  # malformed; apply() below classifies it
            self._pending.popleft()
            try:
                out, epoch = self.codec.apply(raw)
            except TagError:
                self.stats.tag_failures += 1
                continue
            except ReplayError:
                self.stats.replay_alarms += 1
                continue
            except KeyUnavailableError:
                self.stats.dropped_no_key += 1
                continue
            except ChannelError:
                self.stats.format_errors += 1
                continue
            writer.write(out)
            await writer.drain()
            self.stats.egress_ns.append(time.monotonic_ns())
            self.stats.ingress_ns.append(t_in)
            self.stats.forwarded += 1
            if not self.stats.epochs or self.stats.epochs[-1] != epoch:
                self.stats.epochs.append(epoch)


async def proxy_run(listen: tuple[str, int], egress: tuple[str, int], feed: KeyFeed, mode: str,
                    rekey_frames: int = 1 << 16, stop: asyncio.Event | None = None,
                    started: asyncio.Future | None = None, connections: int | None = 1,
                    metrics_path=None, buffer_frames: int = BUFFER_FRAMES) -> ProxyStats:
    """Serve until ``stop`` is set or ``connections`` ingress streams have ended.

    ``started`` (if given) receives the bound listen port.
    """
    proxy = Proxy(mode, feed, rekey_frames, buffer_frames)
    stop = stop or asyncio.Event()
    served = 0

    async def on_connect(reader, writer):
        nonlocal served
        out_reader, out_writer = await asyncio.open_connection(*egress)
        try:
            await proxy.pump(reader, out_writer)
        finally:
            out_writer.close()
            await out_writer.wait_closed()
            writer.close()
            served += 1
            if connections is not None and served >= connections:
                stop.set()

    server = await asyncio.start_server(on_connect, *listen)
    if started is not None:
        started.set_result(server.sockets[0].getsockname()[1])
    async with server:
        await stop.wait()
    report = proxy.stats.report()
    log.info("%s proxy done: %d forwarded, %s", mode, proxy.stats.forwarded, report)
    if metrics_path is not None:
        proxy.stats.write_csv(metrics_path)
    return proxy.stats


@dataclass
class LoopbackResult:
    delivered: bytes
    seal: ProxyStats
    open: ProxyStats

    def added_us(self) -> list[float]:
        """Per-frame latency added by both proxies together."""
        return [a + b for a, b in zip(self.seal.added_us, self.open.added_us)]

    def report(self) -> LatencyReport:
        return LatencyReport.from_samples(self.added_us())


async def _loopback(frames: list[bytes], seal_feed: KeyFeed, open_feed: KeyFeed, rate: float | None,
                    rekey_frames: int, host: str, tap=None) -> LoopbackResult:
    loop = asyncio.get_running_loop()
    received = bytearray()
    sink_done = asyncio.Event()

    async def sink(reader, writer):
        while chunk := await reader.read(1 << 16):
            received.extend(chunk)
        writer.close()
        sink_done.set()

    sink_server = await asyncio.start_server(sink, host, 0)
    sink_port = sink_server.sockets[0].getsockname()[1]
    open_port, seal_port = loop.create_future(), loop.create_future()
    open_task = asyncio.create_task(proxy_run((host, 0), (host, sink_port), open_feed, "open",
                                              started=open_port))
    await open_port
    egress = (host, open_port.result())
    if tap is not None:
        egress = await tap(egress)
    seal_task = asyncio.create_task(proxy_run((host, 0), egress, seal_feed, "seal",
                                              rekey_frames=rekey_frames, started=seal_port))
    await seal_port
    _, writer = await asyncio.open_connection(host, seal_port.result())
    t0 = time.monotonic()
    for k, f in enumerate(frames):
        if rate:
            delay = t0 + k / rate - time.monotonic()
            if delay > 0:
                await asyncio.sleep(delay)
        writer.write(f)
        await writer.drain()
    writer.close()
    await writer.wait_closed()
    seal_stats = await seal_task
    open_stats = await open_task
    await sink_done.wait()
    sink_server.close()
    return LoopbackResult(bytes(received), seal_stats, open_stats)


def run_loopback(frames: list[bytes], seal_feed: KeyFeed, open_feed: KeyFeed, rate: float | None = None,
                 rekey_frames: int = 1 << 16, host: str = "127.0.0.1", tap=None) -> LoopbackResult:
    """Source -> seal proxy -> open proxy -> sink on loopback TCP.

    With ``rate`` the source is paced in real time; otherwise it sends as
    fast as the pipeline accepts.
    """
    return asyncio.run(_loopback(frames, seal_feed, open_feed, rate, rekey_frames, host, tap))
