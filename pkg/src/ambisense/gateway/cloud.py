"""Cloud side: per-device session buffers, reasoning, reminders, NDJSON/TCP service."""

from __future__ import annotations

import asyncio
import logging
import os
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from ..llm import CompletionClient, verify_with_llm
from ..reasoner import Finding, RuleSet, check_sequence
from .protocol import Ack, AtomicActivityEvent, ErrorReply, ProtocolError, Reminder, decode, encode
from .store import EventStore, store_replay

logger = logging.getLogger(__name__)

DEFAULT_BUFFER_SIZE = 16
DEFAULT_HORIZON_S = 1800.0
MAX_LINE_BYTES = 64 * 1024

Analyzer = Callable[[Sequence[str]], Sequence[Finding]]


@dataclass
class DeviceSession:
    buffer: deque = field(default_factory=deque)  # AtomicActivityEvent, seq_no order
    last_seq: int = -1
    open_labels: set[str] = field(default_factory=set)

    def snapshot(self) -> dict:
        return {
            "buffer": [e.to_wire() for e in self.buffer],
            "last_seq": self.last_seq,
            "open_labels": sorted(self.open_labels),
        }


class CloudState:
    """All per-device state. Pure bookkeeping, no I/O."""

    def __init__(self, buffer_size: int = DEFAULT_BUFFER_SIZE, horizon_s: float = DEFAULT_HORIZON_S) -> None:
        self.buffer_size = buffer_size
        self.horizon_s = horizon_s
        self.sessions: dict[str, DeviceSession] = {}

    def session(self, device_id: str) -> DeviceSession:
        return self.sessions.setdefault(device_id, DeviceSession())

    def accept(self, event: AtomicActivityEvent) -> bool:
        """Buffer ``event``; False for a duplicate or stale ``seq_no``."""
        s = self.session(event.device_id)
        if event.seq_no <= s.last_seq:
            return False
        s.last_seq = event.seq_no
        s.buffer.append(event)
        while len(s.buffer) > self.buffer_size:
            s.buffer.popleft()
        while s.buffer and s.buffer[0].ts < event.ts - self.horizon_s:
            s.buffer.popleft()
        return True

    def labels(self, device_id: str) -> list[str]:
        return [e.label for e in self.session(device_id).buffer]

    def settle(self, event: AtomicActivityEvent, findings: Sequence[Finding]) -> list[Reminder]:
        """Open newly seen complex labels (one reminder each) and clear resolved ones."""
        s = self.session(event.device_id)
        current = {f.complex_label for f in findings}
        reminders = [
            Reminder(event.device_id, event.ts, f.complex_label, f.message, f.severity, f.corrected)
            for f in findings
            if f.complex_label not in s.open_labels
        ]
        s.open_labels = current
        return reminders

    def mark_open(self, reminder: Reminder) -> None:
        self.session(reminder.device_id).open_labels.add(reminder.complex_label)

    def snapshot(self) -> dict:
        return {dev: s.snapshot() for dev, s in sorted(self.sessions.items())}


def rule_analyzer(rules: RuleSet) -> Analyzer:
    return lambda labels: check_sequence(labels, rules).findings


def llm_analyzer(rules: RuleSet, client: CompletionClient) -> Analyzer:
    return lambda labels: verify_with_llm(labels, rules, client).findings


def replay_state(
    path: str | os.PathLike,
    rules: RuleSet,
    buffer_size: int = DEFAULT_BUFFER_SIZE,
    horizon_s: float = DEFAULT_HORIZON_S,
) -> CloudState:
    """Rebuild session state from a store file.

    Open labels are re-derived with the rule engine; reminders in the log
    re-open labels that only the language model had produced.
    """
    state = CloudState(buffer_size, horizon_s)
    analyze = rule_analyzer(rules)
    for rec in store_replay(path).records:
        if isinstance(rec, AtomicActivityEvent):
            if state.accept(rec):
                state.settle(rec, analyze(state.labels(rec.device_id)))
        else:
            state.mark_open(rec)
    return state


class CloudService:
    """Asyncio NDJSON-over-TCP ingest service."""

    def __init__(
        self,
        rules: RuleSet,
        store: EventStore,
        client: CompletionClient | None = None,
        buffer_size: int = DEFAULT_BUFFER_SIZE,
        horizon_s: float = DEFAULT_HORIZON_S,
    ) -> None:
        self.rules = rules
        self.store = store
        self.client = client
        self.state = replay_state(store.path, rules, buffer_size, horizon_s)
        self._analyze = llm_analyzer(rules, client) if client is not None else rule_analyzer(rules)
        self._device_locks: dict[str, asyncio.Lock] = {}
        self._server: asyncio.base_events.Server | None = None
        self._handlers: set[asyncio.Task] = set()
        self.failed: str | None = None
        self.reminders_sent: list[Reminder] = []

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._server = await asyncio.start_server(self._handle, host, port, limit=MAX_LINE_BYTES)
        addr = self._server.sockets[0].getsockname()
        logger.info("cloud service listening on %s:%d", addr[0], addr[1])
        return addr[0], addr[1]

    async def serve_forever(self) -> None:
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for task in list(self._handlers):
            task.cancel()
        await asyncio.gather(*self._handlers, return_exceptions=True)
        self.store.close()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        task = asyncio.current_task()
        self._handlers.add(task)
        try:
            while True:
                try:
                    line = await reader.readline()
                except (asyncio.LimitOverrunError, ValueError):
                    writer.write(encode(ErrorReply("line too long")))
                    await writer.drain()
                    break
                if not line:
                    break
                if not line.strip():
                    continue
                for reply in await self.handle_line(line):
                    writer.write(encode(reply))
                await writer.drain()
        except ConnectionError:
            logger.info("connection from %s dropped", peer)
        finally:
            self._handlers.discard(task)
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, asyncio.CancelledError):
                pass

    async def handle_line(self, line: bytes) -> list:
        try:
            msg = decode(line)
        except ProtocolError as exc:
            return [ErrorReply(f"protocol error: {exc}")]
        if not isinstance(msg, AtomicActivityEvent):
            return [ErrorReply(f"protocol error: cannot accept {type(msg).__name__} from a device")]
        return await self.ingest(msg)

    async def ingest(self, event: AtomicActivityEvent) -> list:
        if self.failed:
            return [ErrorReply(f"store unavailable, refusing events: {self.failed}")]
        lock = self._device_locks.setdefault(event.device_id, asyncio.Lock())
        async with lock:
            if not self.state.accept(event):
                return [Ack(event.seq_no)]
            labels = self.state.labels(event.device_id)
            findings = await asyncio.to_thread(self._analyze, labels)
            reminders = self.state.settle(event, findings)
            try:
                self.store.append([event, *reminders])
            except OSError as exc:
                # fail-stop: silently losing care events is worse than refusing them
                self.failed = str(exc) or type(exc).__name__
                logger.error("store write failed, refusing further events: %s", exc)
                return [ErrorReply(f"store unavailable, refusing events: {self.failed}")]
        for r in reminders:
            logger.info("reminder for %s: %s (%s)", r.device_id, r.complex_label, r.message)
        self.reminders_sent.extend(reminders)
        return [*reminders, Ack(event.seq_no)]


class BackgroundCloud:
    """Runs a CloudService on its own event-loop thread (tests, e2e, CLI helpers)."""

    def __init__(self, service: CloudService, host: str = "127.0.0.1", port: int = 0) -> None:
        self.service = service
        self._host, self._port = host, port
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._loop.run_forever, name="cloud-service", daemon=True)
        self.address: tuple[str, int] | None = None

    def start(self) -> tuple[str, int]:
        self._thread.start()
        fut = asyncio.run_coroutine_threadsafe(self.service.start(self._host, self._port), self._loop)
        self.address = fut.result(timeout=10)
        return self.address

    def stop(self) -> None:
        if not self._thread.is_alive():
            return
        asyncio.run_coroutine_threadsafe(self.service.stop(), self._loop).result(timeout=10)
        self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join(timeout=10)
        self._loop.close()

    def __enter__(self) -> "BackgroundCloud":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
