import json
import threading

import pytest
from hypothesis import given, strategies as st

from osaas_guard import wire
from osaas_guard.closed_loop import run_closed_loop
from osaas_guard.errors import Disconnected, MalformedLine, UnknownRecordKind, VersionMismatch
from osaas_guard.scenario import AddOok, Scenario
from osaas_guard.simulator import LineSimulator
from osaas_guard.telemetry import (OcmSnapshot, Publisher, StreamServer, TelemetryRecord,
                                   decode_record, encode_record, read_replay, subscribe,
                                   write_replay)

finite = st.floats(allow_nan=False, allow_infinity=False)
timestamps = st.integers(0, 2 ** 53)

telemetry_records = st.builds(TelemetryRecord, timestamps, finite, finite, finite, finite, finite,
                              st.floats(0.0, 0.5), finite)
ocm_snapshots = st.builds(OcmSnapshot, timestamps, st.text(min_size=1, max_size=12), finite,
                          st.lists(st.floats(-40.0, 1e6), min_size=1, max_size=48).map(tuple))


def rec(t, ber=1e-4):
    return TelemetryRecord(t, 0.0, 4641.0, 1.0, -10.0, 20.0, ber, 0.5)


def snap(t, uid="user-1"):
    return OcmSnapshot(t, uid, 6.0, (-8.0, -40.0, -7.5))


@given(st.one_of(telemetry_records, ocm_snapshots))
def test_codec_round_trip_exact(r):
    line = encode_record(r)
    back = decode_record(line)
    assert back == r
    assert encode_record(back) == line
    assert "\n" not in line


def test_field_order_irrelevant():
    body = json.loads(encode_record(rec(3)))
    shuffled = json.dumps(dict(reversed(list(body.items()))))
    assert decode_record(shuffled) == rec(3)


def test_missing_field_rejected():
    body = json.loads(encode_record(rec(1)))
    del body["osnr"]
    with pytest.raises(MalformedLine):
        decode_record(json.dumps(body))


def test_ber_out_of_range_rejected_on_decode():
    body = json.loads(encode_record(rec(1)))
    body["prefec_ber"] = 0.6
    with pytest.raises(MalformedLine):
        decode_record(json.dumps(body))


@pytest.mark.parametrize("line,exc", [
    ('{"kind":"telemetry"}', MalformedLine),
    ('{"kind":"bogus","version":1}', UnknownRecordKind),
    ('{"kind":"telemetry","version":2}', VersionMismatch),
    ('[1,2]', MalformedLine),
    ('not json', MalformedLine),
    ('', MalformedLine),
    ('{"a":1}\n{"b":2}', MalformedLine),
    ('{"kind":"ocm","version":1,"timestamp":1,"user_id":"u","add_port_total":NaN,"slice_powers":[1]}',
     MalformedLine),
])
def test_malformed_lines(line, exc):
    with pytest.raises(exc):
        decode_record(line)


def test_ocm_floor_enforced():
    with pytest.raises(MalformedLine):
        OcmSnapshot(0, "u", 0.0, (-41.0,))


def test_bool_is_not_an_integer():
    body = json.loads(encode_record(rec(1)))
    body["timestamp"] = True
    with pytest.raises(MalformedLine):
        decode_record(json.dumps(body))


def test_stream_counts_for_60s_scenario():
    pub = Publisher()
    sub = pub.subscribe()
    sim = LineSimulator(Scenario(duration=60))
    for record, snaps in sim.run():
        pub.publish(record)
        for uid in sorted(snaps):
            pub.publish(snaps[uid])
    pub.close()
    msgs = list(sub)
    assert sum(isinstance(m, TelemetryRecord) for m in msgs) == 60
    assert sum(isinstance(m, OcmSnapshot) for m in msgs) == 180


def test_empty_stream_ends_cleanly():
    pub = Publisher()
    sub = pub.subscribe()
    pub.close()
    assert list(sub) == []
    assert sub.finished


def test_publisher_enforces_order_and_cadence():
    pub = Publisher()
    pub.publish(rec(0))
    pub.publish(snap(0))
    with pytest.raises(ValueError):
        pub.publish(snap(0))
    with pytest.raises(ValueError):
        pub.publish(rec(2))
    pub.publish(rec(1))
    with pytest.raises(ValueError):
        pub.publish(rec(0))


@given(st.lists(st.booleans(), min_size=1, max_size=40))
def test_delivery_is_ordered_and_fanned_out(with_snaps):
    pub = Publisher()
    a, b = pub.subscribe(), pub.subscribe()
    for t, has in enumerate(with_snaps):
        pub.publish(rec(t))
        if has:
            pub.publish(snap(t, "a"))
            pub.publish(snap(t, "b"))
    pub.close()
    got_a, got_b = list(a), list(b)
    assert got_a == got_b
    ts = [m.timestamp for m in got_a if isinstance(m, TelemetryRecord)]
    assert ts == list(range(len(with_snaps)))


def test_overflow_disconnects_without_blocking_producer():
    pub = Publisher(buffer_size=4)
    slow = pub.subscribe()
    fast = pub.subscribe(buffer_size=100)
    for t in range(10):
        pub.publish(rec(t))
    assert slow.disconnected
    with pytest.raises(Disconnected):
        slow.get(timeout=0.1)
    assert len(fast.drain()) == 10


def test_late_subscriber_starts_at_live_edge():
    pub = Publisher()
    pub.publish(rec(0))
    late = pub.subscribe()
    pub.publish(rec(1))
    pub.close()
    assert [m.timestamp for m in late] == [1]


def test_socket_stream_matches_in_process():
    pub = Publisher()
    local = pub.subscribe()
    server = StreamServer(pub).start()
    received = []
    reader = threading.Thread(target=lambda: received.extend(subscribe(server.endpoint)))
    reader.start()
    assert server.subscribed.wait(5)
    for t in range(20):
        pub.publish(rec(t))
        pub.publish(snap(t))
    pub.close()
    reader.join(10)
    server.stop()
    assert received == list(local)


def test_dead_endpoint():
    with pytest.raises(Disconnected):
        subscribe("/nonexistent/stream.ndjson")


def test_replay_file_equals_live_stream(tmp_path):
    log = run_closed_loop(Scenario(duration=15, events=(AddOok(5, "user-1", 75.0, 1.0),)))
    msgs = log.stream_messages()
    path = tmp_path / "stream.ndjson"
    assert write_replay(path, msgs) == len(msgs) == 15 * 4
    assert list(read_replay(path)) == msgs
    assert list(subscribe(path)) == msgs
    # byte-concatenation of wire lines
    assert path.read_text() == "".join(wire.encode(m) + "\n" for m in msgs)
