import io
import json

import pytest

from iotdns.capture import BootTrace, DnsEvent, write_jsonl
from iotdns.runtime import (DhcpAnchor, OutOfOrderEvent, Prediction, SessionStore, classify_trace,
                            events_from_jsonl, replay_trace, stream)


def burst_trace(dev="02:00:00:00:00:01", t0=100.0, names=("a.iot00a.com",) * 3):
    return BootTrace("x", t0, tuple(DnsEvent(dev, n, t0 + 0.5 * (i + 1)) for i, n in enumerate(names)),
                     device_id=dev)


def test_window_close_on_tick(trained):
    bundle = trained[0]
    store = SessionStore(bundle)
    tr = burst_trace()
    assert store.ingest(DhcpAnchor(tr.device_id, 100.0)) is None
    for ev in tr.events:
        assert store.ingest(ev) is None
    assert store.tick(129.99) == []
    (pred,) = store.tick(130.01)
    assert pred.emitted_at == 130.0 and pred.window_event_count == 3
    assert pred == classify_trace(bundle, tr)
    assert store.tick(200.0) == []       # decided sessions stay quiet


def test_empty_window_still_predicts(trained):
    bundle = trained[0]
    store = SessionStore(bundle)
    store.ingest(DhcpAnchor("d", 0.0))
    (pred,) = store.flush()
    assert pred.window_event_count == 0
    assert pred.label in bundle.labels.classes and 0 < pred.confidence <= 1
    assert pred == classify_trace(bundle, BootTrace("", 0.0, (), device_id="d"))


def test_late_events_match_empty_trace(trained):
    bundle = trained[0]
    late = BootTrace("x", 0.0, (DnsEvent("d", "a.iot00a.com", 45.0),), device_id="d")
    empty = BootTrace("x", 0.0, (), device_id="d")
    assert classify_trace(bundle, late) == classify_trace(bundle, empty)
    store = SessionStore(bundle)
    store.ingest(DhcpAnchor("d", 0.0))
    (pred,) = [p for p in [store.ingest(late.events[0])] if p is not None]
    assert pred == classify_trace(bundle, empty)


def test_replayed_device_predicted_correctly(trained, small_corpus):
    bundle, _, _ = trained
    _, traces = small_corpus
    by_id = {tr.boot_id: tr for tr in traces}
    store = SessionStore(bundle)
    test_ids = trained[1].test.boot_ids
    right = 0
    for bid in test_ids:
        (pred,) = replay_trace(store, by_id[bid])
        right += pred.label == by_id[bid].label
    assert right / len(test_ids) == trained[2].accuracy


def test_out_of_order_aborts_session(trained):
    store = SessionStore(trained[0])
    store.ingest(DhcpAnchor("d", 10.0))
    store.ingest(DnsEvent("d", "a.b.com", 12.0))
    with pytest.raises(OutOfOrderEvent):
        store.ingest(DnsEvent("d", "a.b.com", 11.0))
    assert store.aborted == 1 and "d" not in store.sessions
    assert store.flush() == []


def test_reanchor_restarts(trained):
    store = SessionStore(trained[0])
    store.ingest(DhcpAnchor("d", 0.0))
    store.ingest(DnsEvent("d", "a.b.com", 1.0))
    store.ingest(DhcpAnchor("d", 5.0))
    assert store.restarted == 1
    (pred,) = store.flush()
    assert pred.window_event_count == 0 and pred.emitted_at == 35.0


def test_min_confidence_suppresses(trained):
    store = SessionStore(trained[0], min_confidence=1.01)
    store.ingest(DhcpAnchor("d", 0.0))
    assert store.flush() == [] and store.suppressed == 1


def test_events_without_session_ignored(trained):
    store = SessionStore(trained[0])
    assert store.ingest(DnsEvent("d", "a.b.com", 1.0)) is None
    assert store.flush() == []


def test_interleaved_devices_stream(trained, small_corpus):
    bundle = trained[0]
    _, traces = small_corpus
    # six devices booting at the same instant, events merged by time
    group = [tr for tr in traces if tr.boot_id.endswith("/b0")]
    evs = [ev for tr in group for ev in [DhcpAnchor(tr.device_id, tr.dhcp_t, tr.boot_id), *tr.events]]
    evs.sort(key=lambda e: (e.t, isinstance(e, DnsEvent)))
    preds = list(stream(SessionStore(bundle), evs))
    assert sorted(preds, key=lambda p: p.device_id) == sorted(
        (classify_trace(bundle, tr) for tr in group), key=lambda p: p.device_id)


def test_jsonl_stream(trained, small_corpus):
    bundle = trained[0]
    _, traces = small_corpus
    lines = write_jsonl(traces[:10])
    preds = list(stream(SessionStore(bundle), events_from_jsonl(io.StringIO("".join(lines)))))
    assert preds == [classify_trace(bundle, tr) for tr in traces[:10]]
    d = preds[0].to_dict()
    assert list(d) == ["device_id", "label", "confidence", "events", "t"]
    json.dumps(d)


def test_stream_survives_out_of_order(trained):
    evs = [DhcpAnchor("d", 10.0), DnsEvent("d", "a.b.com", 12.0), DnsEvent("d", "a.b.com", 11.0),
           DhcpAnchor("e", 20.0)]
    preds = list(stream(SessionStore(trained[0]), evs))
    assert [p.device_id for p in preds] == ["e"]


def test_prediction_is_value_object():
    p = Prediction("d", "x", 0.5, 2, 30.0)
    assert p == Prediction("d", "x", 0.5, 2, 30.0)
