"""Edge agent: classify windows locally, debounce, ship events, spill when offline."""

from __future__ import annotations

import logging
import os
import socket
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np

from ..encoder import ModelParams, predict
from ..labels import IDLE, SENSED_LABELS
from ..trace import BINARY_MASK, DEFAULT_HOP, DEFAULT_WINDOW, SensorTrace, TraceTooShortError
from .protocol import Ack, AtomicActivityEvent, ErrorReply, ProtocolError, Reminder, decode, encode

logger = logging.getLogger(__name__)

VOTE_WINDOWS = 3
CONFIDENCE_THRESHOLD = 0.6
IDLE_STD_RATIO = 0.1


def is_idle(values: np.ndarray, channel_std: np.ndarray, ratio: float = IDLE_STD_RATIO) -> bool:
    """No motion and every continuous channel nearly flat relative to its training spread."""
    if np.any(values[BINARY_MASK] != 0.0):
        return False
    spread = values[~BINARY_MASK].std(axis=-1)
    return bool(np.all(spread < ratio * np.asarray(channel_std)[~BINARY_MASK]))


class Debouncer:
    """Emit a label once it holds a majority of the last few windows with enough confidence."""

    def __init__(self, votes: int = VOTE_WINDOWS, threshold: float = CONFIDENCE_THRESHOLD) -> None:
        self.history: deque[tuple[str, float]] = deque(maxlen=votes)
        self.threshold = threshold
        self.last_emitted: str | None = None

    def push(self, label: str, confidence: float) -> tuple[str, float] | None:
        self.history.append((label, confidence))
        if len(self.history) < self.history.maxlen:
            return None
        labels = [lbl for lbl, _ in self.history]
        best = max(set(labels), key=lambda lbl: (labels.count(lbl), -labels.index(lbl)))
        if labels.count(best) * 2 <= len(labels):
            return None
        if best == IDLE:
            self.last_emitted = IDLE
            return None
        if best == self.last_emitted:
            return None
        conf = float(np.mean([c for lbl, c in self.history if lbl == best]))
        if conf < self.threshold:
            return None
        self.last_emitted = best
        return best, conf


class Sink(Protocol):
    def send(self, event: AtomicActivityEvent) -> list[Reminder]: ...


class ListSink:
    """In-memory sink; optionally forwards to a callable standing in for the cloud."""

    def __init__(self, responder=None) -> None:
        self.events: list[AtomicActivityEvent] = []
        self._responder = responder

    def send(self, event: AtomicActivityEvent) -> list[Reminder]:
        self.events.append(event)
        return list(self._responder(event)) if self._responder else []


@dataclass
class EdgeRunResult:
    events: list[AtomicActivityEvent] = field(default_factory=list)
    reminders: list[Reminder] = field(default_factory=list)
    window_labels: list[str] = field(default_factory=list)


class EdgeAgent:
    def __init__(
        self,
        params: ModelParams,
        device_id: str = "d1",
        window_len: int = DEFAULT_WINDOW,
        hop: int = DEFAULT_HOP,
        votes: int = VOTE_WINDOWS,
        threshold: float = CONFIDENCE_THRESHOLD,
        idle_ratio: float = IDLE_STD_RATIO,
        first_seq_no: int = 1,
    ) -> None:
        self.params = params
        self.device_id = device_id
        self.window_len = window_len
        self.hop = hop
        self.idle_ratio = idle_ratio
        self.debouncer = Debouncer(votes, threshold)
        self.next_seq = first_seq_no

    def classify(self, values: np.ndarray) -> tuple[str, float]:
        if is_idle(values, self.params.std, self.idle_ratio):
            return IDLE, 1.0
        idx, conf = predict(values[None], self.params)
        return SENSED_LABELS[int(idx[0])], float(conf[0])

    def observe(self, values: np.ndarray, ts: float) -> tuple[str, AtomicActivityEvent | None]:
        label, conf = self.classify(values)
        hit = self.debouncer.push(label, conf)
        if hit is None:
            return label, None
        event = AtomicActivityEvent(self.device_id, self.next_seq, round(ts, 6), hit[0], round(hit[1], 6))
        self.next_seq += 1
        return label, event

    def run(self, trace: SensorTrace, sink: Sink) -> EdgeRunResult:
        """Stream ``trace`` window by window through the classifier into ``sink``."""
        n = len(trace)
        if n < self.window_len:
            raise TraceTooShortError(f"trace has {n} samples, window needs {self.window_len}")
        result = EdgeRunResult()
        for start in range(0, n - self.window_len + 1, self.hop):
            values = trace.values[:, start : start + self.window_len]
            ts = trace.start_time + (start + self.window_len) / trace.sample_rate_hz
            label, event = self.observe(values, ts)
            result.window_labels.append(label)
            if event is not None:
                logger.info("event #%d %s (%.2f)", event.seq_no, event.label, event.confidence)
                result.events.append(event)
                result.reminders.extend(sink.send(event))
        return result


def edge_run(trace: SensorTrace, params: ModelParams, sink: Sink, device_id: str = "d1", **kwargs) -> EdgeRunResult:
    return EdgeAgent(params, device_id, **kwargs).run(trace, sink)


# -- network sink -------------------------------------------------------------------------


class SinkUnavailable(ConnectionError):
    pass


class TcpSink:
    """Persistent NDJSON connection to the cloud with retry and local spill.

    A send that fails ``attempts`` times (sleeping ``backoff_s``, 2x, 4x ...
    between tries) is appended to ``spill_path``; spilled events are replayed
    ahead of the next event once the cloud answers again.
    """

    def __init__(
        self,
        host: str,
        port: int,
        spill_path: str | os.PathLike,
        attempts: int = 3,
        backoff_s: float = 1.0,
        timeout_s: float = 10.0,
    ) -> None:
        self.host, self.port = host, port
        self.spill_path = os.fspath(spill_path)
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._sock: socket.socket | None = None
        self._rfile = None
        self.reminders: list[Reminder] = []
        self.spilled = 0

    def _connect(self) -> None:
        if self._sock is None:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
            self._rfile = self._sock.makefile("rb")

    def close(self) -> None:
        if self._rfile is not None:
            self._rfile.close()
        if self._sock is not None:
            self._sock.close()
        self._sock = self._rfile = None

    def __enter__(self) -> "TcpSink":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _exchange(self, event: AtomicActivityEvent) -> list[Reminder]:
        self._connect()
        self._sock.sendall(encode(event))
        got: list[Reminder] = []
        while True:
            line = self._rfile.readline()
            if not line:
                raise ConnectionError("cloud closed the connection")
            try:
                msg = decode(line)
            except ProtocolError as exc:
                raise ConnectionError(f"garbled reply: {exc}") from None
            if isinstance(msg, Reminder):
                got.append(msg)
            elif isinstance(msg, Ack) and msg.seq_no == event.seq_no:
                return got
            elif isinstance(msg, ErrorReply):
                raise SinkUnavailable(msg.message)

    def _send_with_retry(self, event: AtomicActivityEvent) -> list[Reminder]:
        last: Exception | None = None
        for attempt in range(self.attempts):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                return self._exchange(event)
            except (OSError, ConnectionError) as exc:
                last = exc
                self.close()
                logger.warning("send of event #%d failed (attempt %d/%d): %s", event.seq_no, attempt + 1, self.attempts, exc)
        raise SinkUnavailable(str(last))

    def _spill(self, events: Iterable[AtomicActivityEvent]) -> None:
        with open(self.spill_path, "ab") as fh:
            for e in events:
                fh.write(encode(e))
                self.spilled += 1
            fh.flush()
            os.fsync(fh.fileno())

    def pending(self) -> list[AtomicActivityEvent]:
        if not os.path.exists(self.spill_path):
            return []
        with open(self.spill_path, "rb") as fh:
            out = []
            for line in fh:
                try:
                    msg = decode(line)
                except ProtocolError:
                    logger.warning("skipping damaged spill line")
                    continue
                if isinstance(msg, AtomicActivityEvent):
                    out.append(msg)
            return out

    def flush_spill(self) -> list[Reminder]:
        """Replay spilled events in order; stops (keeping the rest) at the first failure."""
        backlog = self.pending()
        got: list[Reminder] = []
        for i, e in enumerate(backlog):
            try:
                got.extend(self._send_with_retry(e))
            except SinkUnavailable:
                self._rewrite_spill(backlog[i:])
                raise
        self._rewrite_spill([])
        return got

    def _rewrite_spill(self, events: list[AtomicActivityEvent]) -> None:
        tmp = self.spill_path + ".tmp"
        with open(tmp, "wb") as fh:
            for e in events:
                fh.write(encode(e))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.spill_path)

    def send(self, event: AtomicActivityEvent) -> list[Reminder]:
        got: list[Reminder] = []
        try:
            if self.pending():
                got.extend(self.flush_spill())
            got.extend(self._send_with_retry(event))
        except SinkUnavailable as exc:
            logger.warning("cloud unreachable (%s); spilling event #%d to %s", exc, event.seq_no, self.spill_path)
            self._spill([event])
        self.reminders.extend(got)
        return got

