"""Online classification of devices from their first seconds of DNS traffic.

A `SessionStore` consumes anchors and queries in time order.  Each DHCP
anchor opens a window of the bundle's time delta; the first event (or clock
tick) past the window closes it and yields one prediction.  Clock ticks are
supplied by the caller so the store never reads wall time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .bundle import ModelBundle
from .capture import BootTrace, DnsEvent, parse_record
from .featurize import window

log = logging.getLogger(__name__)

COLLECTING = "collecting"
DECIDED = "decided"


class OutOfOrderEvent(Exception):
    pass


@dataclass(frozen=True)
class DhcpAnchor:
    device_id: str
    t: float
    boot_id: str = ""


@dataclass(frozen=True)
class Prediction:
    device_id: str
    label: str
    confidence: float
    window_event_count: int
    emitted_at: float

    def to_dict(self) -> dict:
        return {"device_id": self.device_id, "label": self.label, "confidence": self.confidence,
                "events": self.window_event_count, "t": self.emitted_at}


@dataclass
class DeviceSession:
    device_id: str
    dhcp_t: float
    events: list[DnsEvent] = field(default_factory=list)
    state: str = COLLECTING
    boot_id: str = ""


def _predict(bundle: ModelBundle, trace: BootTrace, n_events: int) -> Prediction:
    probs = bundle.predict_trace(trace)
    k = int(np.argmax(probs))
    return Prediction(trace.device_id, bundle.labels.classes[k], float(probs[k]), n_events,
                      trace.dhcp_t + bundle.t_delta)


def classify_trace(bundle: ModelBundle, trace: BootTrace) -> Prediction:
    """Batch path: same arithmetic as streaming the trace through a SessionStore."""
    return _predict(bundle, trace, len(window(trace, bundle.t_delta)))


class SessionStore:
    def __init__(self, bundle: ModelBundle, min_confidence: float | None = None):
        self.bundle = bundle
        self.min_confidence = min_confidence
        self.sessions: dict[str, DeviceSession] = {}
        self._last_t: dict[str, float] = {}
        self.aborted = 0
        self.suppressed = 0
        self.restarted = 0

    def _deadline(self, s: DeviceSession) -> float:
        return s.dhcp_t + self.bundle.t_delta

    def _close(self, s: DeviceSession) -> Prediction | None:
        s.state = DECIDED
        trace = BootTrace(label="", dhcp_t=s.dhcp_t, events=tuple(s.events),
                          boot_id=s.boot_id, device_id=s.device_id)
        pred = _predict(self.bundle, trace, len(s.events))
        if self.min_confidence is not None and pred.confidence < self.min_confidence:
            self.suppressed += 1
            return None
        return pred

    def ingest(self, event: DhcpAnchor | DnsEvent) -> Prediction | None:
        dev = event.device_id
        last = self._last_t.get(dev)
        if last is not None and event.t < last:
            if self.sessions.pop(dev, None) is not None:
                self.aborted += 1
            raise OutOfOrderEvent(f"{dev}: t={event.t} after t={last}")
        self._last_t[dev] = event.t

        s = self.sessions.get(dev)
        out = None
        if s is not None and s.state == COLLECTING and event.t > self._deadline(s):
            out = self._close(s)

        if isinstance(event, DhcpAnchor):
            if s is not None and s.state == COLLECTING:
                self.restarted += 1   # rebooted mid-window
            self.sessions[dev] = DeviceSession(dev, event.t, boot_id=event.boot_id)
        elif s is not None and s.state == COLLECTING and s.dhcp_t < event.t:
            s.events.append(event)
        return out

    def tick(self, now: float) -> list[Prediction]:
        """Close every window that ended before `now`."""
        out = []
        for s in list(self.sessions.values()):
            if s.state == COLLECTING and now > self._deadline(s):
                pred = self._close(s)
                if pred is not None:
                    out.append(pred)
        return out

    def flush(self) -> list[Prediction]:
        """End of stream: close all open windows regardless of time."""
        return self.tick(float("inf"))


def ingest(store: SessionStore, event: DhcpAnchor | DnsEvent) -> Prediction | None:
    return store.ingest(event)


def replay_trace(store: SessionStore, trace: BootTrace) -> list[Prediction]:
    """Stream one trace through the store and close its window."""
    out = []
    for ev in [DhcpAnchor(trace.device_id, trace.dhcp_t, trace.boot_id), *trace.events]:
        pred = store.ingest(ev)
        if pred is not None:
            out.append(pred)
    out.extend(store.tick(trace.dhcp_t + store.bundle.t_delta + 1.0))
    return out


def events_from_jsonl(lines: Iterable[str]) -> Iterator[DhcpAnchor | DnsEvent]:
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = parse_record(line, lineno)
        if rec["kind"] == "dhcp":
            yield DhcpAnchor(rec["device_id"], rec["t"], rec["boot_id"])
        else:
            yield DnsEvent(rec["device_id"], rec["qname"], rec["t"])


def stream(store: SessionStore, events: Iterable[DhcpAnchor | DnsEvent]) -> Iterator[Prediction]:
    """Feed events in order, yield predictions as windows close, flush at the end."""
    for ev in events:
        try:
            pred = store.ingest(ev)
        except OutOfOrderEvent as exc:
            log.warning("session aborted: %s", exc)
            continue
        if pred is not None:
            yield pred
    yield from store.flush()
