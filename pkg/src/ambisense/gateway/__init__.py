"""Edge agent, cloud service and the NDJSON event protocol between them."""

from .cloud import BackgroundCloud, CloudService, CloudState, replay_state
from .edge import EdgeAgent, ListSink, TcpSink, edge_run, is_idle
from .protocol import Ack, AtomicActivityEvent, ErrorReply, ProtocolError, Reminder, decode, encode
from .store import EventStore, StoreCorruptError, store_append, store_replay

__all__ = [
    "Ack",
    "AtomicActivityEvent",
    "BackgroundCloud",
    "CloudService",
    "CloudState",
    "EdgeAgent",
    "ErrorReply",
    "EventStore",
    "ListSink",
    "ProtocolError",
    "Reminder",
    "StoreCorruptError",
    "TcpSink",
    "decode",
    "edge_run",
    "encode",
    "is_idle",
    "replay_state",
    "store_append",
    "store_replay",
]
