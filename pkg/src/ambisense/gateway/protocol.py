"""NDJSON wire records shared by the edge agent, the cloud service and the store."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Union

from ..labels import SENSED_LABELS


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class AtomicActivityEvent:
    device_id: str
    seq_no: int
    ts: float
    label: str
    confidence: float

    def to_wire(self) -> dict:
        return {
            "type": "event",
            "device_id": self.device_id,
            "seq_no": self.seq_no,
            "ts": self.ts,
            "label": self.label,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class Reminder:
    device_id: str
    ts: float
    complex_label: str
    message: str
    severity: str
    corrected: tuple[str, ...]

    def to_wire(self) -> dict:
        return {
            "type": "reminder",
            "device_id": self.device_id,
            "ts": self.ts,
            "complex_label": self.complex_label,
            "message": self.message,
            "severity": self.severity,
            "corrected": list(self.corrected),
        }


@dataclass(frozen=True)
class Ack:
    seq_no: int

    def to_wire(self) -> dict:
        return {"type": "ack", "seq_no": self.seq_no}


@dataclass(frozen=True)
class ErrorReply:
    message: str

    def to_wire(self) -> dict:
        return {"type": "error", "message": self.message}


Message = Union[AtomicActivityEvent, Reminder, Ack, ErrorReply]


def encode(msg: Message) -> bytes:
    return (json.dumps(msg.to_wire(), separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def _field(doc: dict, name: str, kind, what: str):
    if name not in doc:
        raise ProtocolError(f"{doc.get('type', 'message')} lacks field {name!r}")
    value = doc[name]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ProtocolError(f"field {name!r} must be {what}")
    return value


def from_wire(doc: dict) -> Message:
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object")
    kind = doc.get("type")
    if kind == "event":
        device = _field(doc, "device_id", str, "a string")
        seq_no = _field(doc, "seq_no", int, "an integer")
        ts = float(_field(doc, "ts", (int, float), "a number"))
        label = _field(doc, "label", str, "a string")
        conf = float(_field(doc, "confidence", (int, float), "a number"))
        if not device:
            raise ProtocolError("empty device_id")
        if seq_no < 0:
            raise ProtocolError("seq_no must be >= 0")
        if not math.isfinite(ts):
            raise ProtocolError("ts must be finite")
        if label not in SENSED_LABELS:
            raise ProtocolError(f"unknown activity label {label!r}")
        if not 0.0 <= conf <= 1.0:
            raise ProtocolError("confidence must lie in [0, 1]")
        return AtomicActivityEvent(device, seq_no, ts, label, conf)
    if kind == "reminder":
        corrected = _field(doc, "corrected", list, "a list")
        return Reminder(
            _field(doc, "device_id", str, "a string"),
            float(_field(doc, "ts", (int, float), "a number")),
            _field(doc, "complex_label", str, "a string"),
            _field(doc, "message", str, "a string"),
            _field(doc, "severity", str, "a string"),
            tuple(str(x) for x in corrected),
        )
    if kind == "ack":
        return Ack(_field(doc, "seq_no", int, "an integer"))
    if kind == "error":
        return ErrorReply(str(doc.get("message", "")))
    raise ProtocolError(f"unknown message type {kind!r}")


def decode(line: bytes | str) -> Message:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("message is not UTF-8") from None
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc.msg}") from None
    return from_wire(doc)
