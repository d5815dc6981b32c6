"""Event model: records, streams, windows, and JSON-lines ingestion."""

import io
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgelab.events import (
    EventRecord,
    EventStream,
    GoalSpec,
    IngestError,
    Window,
    events_to_text,
    ingest_events,
    slice_window,
    write_events,
)


def rec(ts, name="click", user="u1", value=None):
    return EventRecord(user_id=user, timestamp=ts, event_name=name, value=value)


class TestEventRecord:
    def test_rejects_negative_timestamp(self):
        with pytest.raises(ValueError):
            rec(-1)

    def test_rejects_non_integer_timestamp(self):
        with pytest.raises(ValueError):
            EventRecord(user_id="u1", timestamp=1.5, event_name="x")

    def test_rejects_empty_event_name(self):
        with pytest.raises(ValueError):
            rec(0, name="")

    def test_rejects_negative_value(self):
        with pytest.raises(ValueError):
            rec(0, value=-0.1)

    def test_value_defaults_to_one_for_scoring(self):
        assert rec(0).effective_value == 1.0
        assert rec(0, value=2.5).effective_value == 2.5


class TestEventStream:
    def test_from_records_sorts_by_timestamp(self):
        s = EventStream.from_records("u1", [rec(3), rec(1), rec(2)])
        assert s.timestamps == (1, 2, 3)

    def test_sort_is_stable_for_ties(self):
        a = rec(5, name="a")
        b = rec(5, name="b")
        s = EventStream.from_records("u1", [a, b])
        assert [r.event_name for r in s] == ["a", "b"]

    def test_rejects_unsorted_records(self):
        with pytest.raises(ValueError):
            EventStream("u1", (rec(2), rec(1)))

    def test_rejects_foreign_user(self):
        with pytest.raises(ValueError):
            EventStream("u1", (rec(1, user="u2"),))


class TestWindow:
    def test_rejects_inverted_interval(self):
        with pytest.raises(ValueError):
            Window(5, 4)

    def test_half_open_contains(self):
        w = Window(2, 5)
        assert not w.contains(1)
        assert w.contains(2)
        assert w.contains(4)
        assert not w.contains(5)


class TestGoalSpec:
    def test_rejects_empty_goal_set(self):
        with pytest.raises(ValueError):
            GoalSpec(frozenset(), 100)

    def test_rejects_nonpositive_window(self):
        with pytest.raises(ValueError):
            GoalSpec(frozenset({"g"}), 0)

    def test_dict_round_trip(self):
        spec = GoalSpec(frozenset({"buy", "signup"}), 3_600_000)
        assert GoalSpec.from_dict(spec.to_dict()) == spec


def jsonl(*objs):
    return io.StringIO("\n".join(json.dumps(o) for o in objs) + "\n")


class TestIngest:
    def test_empty_input_is_empty_map_no_errors(self):
        streams, report = ingest_events(io.StringIO(""))
        assert streams == {}
        assert report.n_records == 0
        assert report.n_failed == 0

    def test_out_of_order_lines_are_sorted(self):
        streams, report = ingest_events(jsonl(
            {"user_id": "u1", "ts": 30, "event": "c"},
            {"user_id": "u1", "ts": 10, "event": "a"},
            {"user_id": "u1", "ts": 20, "event": "b"},
        ))
        assert report.n_failed == 0
        assert streams["u1"].timestamps == (10, 20, 30)

    def test_malformed_line_is_reported_not_dropped_silently(self):
        source = io.StringIO(
            json.dumps({"user_id": "u1", "ts": 1, "event": "a"}) + "\n"
            + json.dumps({"user_id": "u1", "ts": 2, "event": "b"}) + "\n"
            + '{"user_id": "u1", "ts": 3}\n'
        )
        streams, report = ingest_events(source)
        assert len(streams["u1"]) == 2
        assert report.n_records == 2
        assert report.n_failed == 1
        line_no, reason = report.failures[0]
        assert line_no == 3
        assert "event" in reason

    def test_majority_failure_aborts_ingestion(self):
        source = io.StringIO(
            "not json\n"
            "also not json\n"
            + json.dumps({"user_id": "u1", "ts": 1, "event": "a"}) + "\n"
        )
        with pytest.raises(IngestError) as excinfo:
            ingest_events(source)
        assert excinfo.value.report.n_failed == 2

    def test_exactly_half_failures_still_loads(self):
        source = io.StringIO(
            "broken\n" + json.dumps({"user_id": "u1", "ts": 1, "event": "a"}) + "\n"
        )
        streams, report = ingest_events(source)
        assert report.n_failed == 1
        assert len(streams["u1"]) == 1

    def test_missing_file_raises_io_error(self):
        with pytest.raises(OSError):
            ingest_events("/nonexistent/events.jsonl")

    def test_byte_stream_accepted(self):
        raw = io.BytesIO(b'{"user_id": "u1", "ts": 5, "event": "a", "value": 2}\n')
        streams, _ = ingest_events(raw)
        assert streams["u1"].records[0].value == 2.0

    def test_blank_lines_are_ignored(self):
        source = io.StringIO('\n{"user_id": "u1", "ts": 5, "event": "a"}\n\n')
        streams, report = ingest_events(source)
        assert report.n_records == 1
        assert report.n_failed == 0

    def test_bool_ts_rejected(self):
        _, report = ingest_events(jsonl(
            {"user_id": "u1", "ts": True, "event": "a"},
            {"user_id": "u1", "ts": 1, "event": "a"},
        ))
        assert report.n_failed == 1


record_strategy = st.builds(
    EventRecord,
    user_id=st.sampled_from(["u1", "u2", "u3"]),
    timestamp=st.integers(min_value=0, max_value=10**9),
    event_name=st.sampled_from(["view", "click", "buy"]),
    value=st.one_of(st.none(), st.floats(min_value=0, max_value=1e6, allow_nan=False)),
)


class TestRoundTrip:
    @given(st.lists(record_strategy, max_size=60))
    @settings(max_examples=50, deadline=None)
    def test_ingest_serialise_ingest_is_fixed_point(self, records):
        per_user = {}
        for r in records:
            per_user.setdefault(r.user_id, []).append(r)
        streams = {u: EventStream.from_records(u, rs) for u, rs in per_user.items()}
        text = events_to_text(streams)

        once, report = ingest_events(io.StringIO(text))
        assert report.n_failed == 0
        text_again = events_to_text(once)
        assert text_again == text
        twice, _ = ingest_events(io.StringIO(text_again))
        assert twice == once

    def test_write_events_to_path(self, tmp_path):
        streams = {"u1": EventStream.from_records("u1", [rec(1), rec(2)])}
        path = tmp_path / "events.jsonl"
        write_events(streams, path)
        loaded, report = ingest_events(str(path))
        assert report.n_failed == 0
        assert loaded == streams


class TestSliceWindow:
    def test_empty_interval_yields_empty_stream(self):
        s = EventStream.from_records("u1", [rec(1), rec(2)])
        assert len(slice_window(s, Window(2, 2))) == 0

    def test_half_open_boundary(self):
        s = EventStream.from_records("u1", [rec(1), rec(2), rec(3)])
        sliced = slice_window(s, Window(2, 3))
        assert sliced.timestamps == (2,)

    def test_matches_brute_force_filter(self):
        import random

        rand = random.Random(13)
        records = [rec(rand.randrange(0, 1000)) for _ in range(100)]
        s = EventStream.from_records("u1", records)
        for _ in range(20):
            a = rand.randrange(0, 1000)
            b = rand.randrange(a, 1001)
            w = Window(a, b)
            expected = tuple(r for r in s.records if a <= r.timestamp < b)
            assert slice_window(s, w).records == expected

    @given(
        st.lists(st.integers(min_value=0, max_value=500), max_size=40),
        st.integers(min_value=0, max_value=500),
        st.integers(min_value=0, max_value=500),
        st.integers(min_value=0, max_value=500),
    )
    @settings(max_examples=80, deadline=None)
    def test_adjacent_windows_partition(self, times, x, y, z):
        a, b, c = sorted((x, y, z))
        s = EventStream.from_records("u1", [rec(t) for t in times])
        left = slice_window(s, Window(a, b)).records
        right = slice_window(s, Window(b, c)).records
        whole = slice_window(s, Window(a, c)).records
        assert left + right == whole
