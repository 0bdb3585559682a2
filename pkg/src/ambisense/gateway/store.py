"""Append-only NDJSON log of accepted events and emitted reminders."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Iterable

from .protocol import AtomicActivityEvent, Message, ProtocolError, Reminder, encode, from_wire

logger = logging.getLogger(__name__)


class StoreCorruptError(RuntimeError):
    pass


@dataclass
class ReplayResult:
    records: list[Message]
    warnings: list[str] = field(default_factory=list)
    truncated_at: int | None = None  # byte offset of a dropped partial tail

    @property
    def events(self) -> list[AtomicActivityEvent]:
        return [r for r in self.records if isinstance(r, AtomicActivityEvent)]

    @property
    def reminders(self) -> list[Reminder]:
        return [r for r in self.records if isinstance(r, Reminder)]


def _parse_record(line: bytes) -> Message:
    msg = from_wire(json.loads(line.decode("utf-8")))
    if not isinstance(msg, (AtomicActivityEvent, Reminder)):
        raise ProtocolError(f"unexpected {type(msg).__name__} record")
    return msg


def store_replay(path: str | os.PathLike, repair: bool = False) -> ReplayResult:
    """Read every record back.

    A damaged final line (a write cut short by a crash) is dropped with a
    warning, and removed from the file when ``repair`` is set. Damage anywhere
    else raises StoreCorruptError.
    """
    if not os.path.exists(path):
        return ReplayResult([])
    with open(path, "rb") as fh:
        data = fh.read()
    records: list[Message] = []
    result = ReplayResult(records)
    lines = data.split(b"\n")
    offset = 0
    for i, line in enumerate(lines):
        is_last = i == len(lines) - 1
        if is_last and line == b"":
            break
        try:
            records.append(_parse_record(line))
        except (ValueError, UnicodeDecodeError, ProtocolError) as exc:
            trailing = is_last or (i == len(lines) - 2 and lines[-1] == b"")
            if not trailing:
                raise StoreCorruptError(f"{path}: corrupt record on line {i + 1}: {exc}") from None
            msg = f"{path}: dropped damaged final record on line {i + 1}"
            logger.warning(msg)
            result.warnings.append(msg)
            result.truncated_at = offset
            if repair:
                with open(path, "r+b") as fh:
                    fh.truncate(offset)
                    fh.flush()
                    os.fsync(fh.fileno())
            break
        if is_last:
            # complete JSON but no newline: keep it and terminate it on repair
            if repair:
                with open(path, "ab") as fh:
                    fh.write(b"\n")
            break
        offset += len(line) + 1
    return result


class EventStore:
    """Single-writer append-only log; each ``append`` call is one fsync'd batch."""

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = os.fspath(path)
        self._lock = threading.Lock()
        self.recovered = store_replay(self.path, repair=True)
        self._fh = open(self.path, "ab")

    def append(self, records: Iterable[Message]) -> None:
        payload = b"".join(encode(r) for r in records)
        if not payload:
            return
        with self._lock:
            if self._fh is None:
                raise OSError("store is closed")
            self._fh.write(payload)
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.flush()
                os.fsync(self._fh.fileno())
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "EventStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def store_append(path: str | os.PathLike, records: Iterable[Message]) -> None:
    with EventStore(path) as store:
        store.append(records)
