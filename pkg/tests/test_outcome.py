"""Outcome measurement: LLR event weights, decay, and the weighted event sum."""

import io
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgelab.events import EventRecord, EventStream, GoalSpec, Window
from nudgelab.outcome import (
    DecayConfig,
    EventWeightTable,
    fit_event_weights,
    outcome_score,
    temporal_weight,
)


def rec(ts, name, user="u1", value=None):
    return EventRecord(user_id=user, timestamp=ts, event_name=name, value=value)


def stream(*records, user="u1"):
    return EventStream.from_records(user, records)


# -- independent oracle: brute-force LLR fit ----------------------------------


def brute_force_weights(streams, goal, smoothing):
    """O(n^2) re-derivation of the weight fit, scanning all record pairs."""
    followed = {}
    unfollowed = {}
    for s in streams:
        for i, r in enumerate(s.records):
            is_followed = False
            for j, other in enumerate(s.records):
                if j == i or other.event_name not in goal.goal_event_names:
                    continue
                if r.timestamp <= other.timestamp < r.timestamp + goal.attribution_window:
                    is_followed = True
                    break
            bucket = followed if is_followed else unfollowed
            bucket[r.event_name] = bucket.get(r.event_name, 0) + 1
    n_goal = sum(followed.values())
    n_nogoal = sum(unfollowed.values())
    out = {}
    for name in set(followed) | set(unfollowed):
        p = (followed.get(name, 0) + smoothing) / (n_goal + 2 * smoothing)
        q = (unfollowed.get(name, 0) + smoothing) / (n_nogoal + 2 * smoothing)
        out[name] = math.log(p / q)
    return out


class TestTemporalWeight:
    def test_unit_weight_at_reference(self):
        assert temporal_weight(1000, DecayConfig(half_life=100, reference=1000)) == 1.0

    def test_half_weight_at_one_half_life(self):
        cfg = DecayConfig(half_life=100, reference=1000)
        assert temporal_weight(1100, cfg) == pytest.approx(0.5)
        assert temporal_weight(900, cfg) == pytest.approx(0.5)

    def test_quarter_weight_at_two_half_lives(self):
        cfg = DecayConfig(half_life=100, reference=1000)
        assert temporal_weight(1200, cfg) == pytest.approx(0.25)

    # time scales bounded so the exponent stays well inside float range;
    # at |t - ref| / half_life > ~1074 the weight underflows to exactly 0.0
    @given(
        st.integers(min_value=0, max_value=10**9),
        st.integers(min_value=0, max_value=10**9),
        st.integers(min_value=3_600_000, max_value=10**10),
    )
    @settings(max_examples=200, deadline=None)
    def test_bounded_and_monotone(self, t, ref, half_life):
        cfg = DecayConfig(half_life=half_life, reference=ref)
        w = temporal_weight(t, cfg)
        assert 0.0 < w <= 1.0
        further = ref + 2 * (t - ref) if t != ref else ref + half_life
        assert temporal_weight(further, cfg) <= w

    def test_rejects_nonpositive_half_life(self):
        with pytest.raises(ValueError):
            DecayConfig(half_life=0, reference=0)


def make_llr_fixture():
    """200 records with designed conditionals P(hot|Goal)=0.9, P(hot|notGoal)=0.1.

    Followed slots (event then goal 500 ms later): hot x45, cold x5, each
    adding one never-followed goal record; unfollowed singles: hot x15,
    cold x85. Totals: N_goal = 50, N_nogoal = 50 goals + 100 singles = 150.
    """
    records = []
    t = 0
    step = 10_000
    for name, n in (("hot", 45), ("cold", 5)):
        for _ in range(n):
            records.append(rec(t, name))
            records.append(rec(t + 500, "goal"))
            t += step
    for name, n in (("hot", 15), ("cold", 85)):
        for _ in range(n):
            records.append(rec(t, name))
            t += step
    return stream(*records), GoalSpec(frozenset({"goal"}), attribution_window=1000)


class TestFitEventWeights:
    def test_designed_conditionals_yield_ln9(self):
        s, goal = make_llr_fixture()
        table = fit_event_weights([s], goal, smoothing=0.001)
        assert table.weight("hot") == pytest.approx(math.log(9), abs=1e-2)
        # exact smoothed value, computed from the designed counts
        a = 0.001
        expected = math.log(((45 + a) / (50 + 2 * a)) / ((15 + a) / (150 + 2 * a)))
        assert table.weight("hot") == pytest.approx(expected, abs=1e-12)

    def test_equal_conditionals_yield_zero_weight(self):
        # followed: e x1, x x1 (plus 2 goal records, never followed);
        # unfollowed: e x3, x x1. With alpha=1: P(e|Goal) = 2/4,
        # P(e|notGoal) = 4/8, so w_e = ln 1 = 0.
        records = []
        t = 0
        for name in ("e", "x"):
            records.append(rec(t, name))
            records.append(rec(t + 10, "goal"))
            t += 10_000
        for name in ("e", "e", "e", "x"):
            records.append(rec(t, name))
            t += 10_000
        s = stream(*records)
        table = fit_event_weights([s], GoalSpec(frozenset({"goal"}), 100), smoothing=1.0)
        assert table.weight("e") == pytest.approx(0.0, abs=1e-12)

    def test_unseen_event_scores_zero(self):
        s, goal = make_llr_fixture()
        table = fit_event_weights([s], goal)
        assert "never_seen" not in table.weights
        assert table.weight("never_seen") == 0.0

    def test_goal_events_count_toward_subsequent_goals_not_themselves(self):
        # one isolated goal: unfollowed; two goals 10 ms apart: first followed
        goal = GoalSpec(frozenset({"g"}), attribution_window=100)
        s = stream(rec(0, "g"), rec(50_000, "g"), rec(50_010, "g"))
        table = fit_event_weights([s], goal, smoothing=1.0)
        # counts: followed g = 1, unfollowed g = 2
        expected = math.log(((1 + 1) / (1 + 2)) / ((2 + 1) / (2 + 2)))
        assert table.weight("g") == pytest.approx(expected, abs=1e-12)

    def test_matches_brute_force_on_random_streams(self):
        rand = random.Random(7)
        goal = GoalSpec(frozenset({"g"}), attribution_window=50)
        streams = []
        for u in range(8):
            records = [
                rec(rand.randrange(0, 2000), rand.choice(["a", "b", "g"]), user=f"u{u}")
                for _ in range(60)
            ]
            streams.append(EventStream.from_records(f"u{u}", records))
        table = fit_event_weights(streams, goal, smoothing=0.5)
        expected = brute_force_weights(streams, goal, smoothing=0.5)
        assert set(table.weights) == set(expected)
        for name, w in expected.items():
            assert table.weight(name) == pytest.approx(w, abs=1e-12)

    def test_order_invariance(self):
        s, goal = make_llr_fixture()
        parts = [
            stream(*s.records[:70]),
            stream(*s.records[70:150]),
            stream(*s.records[150:]),
        ]
        forward = fit_event_weights(parts, goal)
        backward = fit_event_weights(list(reversed(parts)), goal)
        assert forward.weights == backward.weights

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            fit_event_weights([], GoalSpec(frozenset({"g"}), 100))

    def test_nonpositive_smoothing_rejected(self):
        s, goal = make_llr_fixture()
        with pytest.raises(ValueError):
            fit_event_weights([s], goal, smoothing=0.0)


class TestOutcomeScore:
    def table(self, **weights):
        return EventWeightTable(
            weights=weights, smoothing=1.0, goal_spec=GoalSpec(frozenset({"g"}), 100)
        )

    def test_empty_window_scores_zero(self):
        s = stream(rec(10, "a"))
        score = outcome_score(s, Window(20, 30), self.table(a=1.0), DecayConfig(100, 0))
        assert score.value == 0.0

    def test_single_record_at_reference(self):
        s = stream(rec(1000, "a"))
        score = outcome_score(
            s, Window(0, 2000), self.table(a=2.0), DecayConfig(half_life=100, reference=1000)
        )
        assert score.value == pytest.approx(2.0)

    def test_two_record_hand_evaluation(self):
        # record at reference with weight 0.5, record one half-life earlier
        # with weight 1.0: Y = 0.5 * 1.0 + 1.0 * 0.5 = 1.0
        s = stream(rec(900, "b"), rec(1000, "a"))
        score = outcome_score(
            s,
            Window(0, 2000),
            self.table(a=0.5, b=1.0),
            DecayConfig(half_life=100, reference=1000),
        )
        assert score.value == pytest.approx(1.0)

    def test_value_enters_multiplicatively(self):
        s = stream(rec(1000, "a", value=3.0))
        score = outcome_score(
            s, Window(0, 2000), self.table(a=2.0), DecayConfig(half_life=100, reference=1000)
        )
        assert score.value == pytest.approx(6.0)

    def test_additive_over_window_partition(self):
        rand = random.Random(5)
        records = [rec(rand.randrange(0, 1000), rand.choice("ab")) for _ in range(200)]
        s = EventStream.from_records("u1", records)
        table = self.table(a=0.7, b=-1.3)
        decay = DecayConfig(half_life=250, reference=500)
        whole = outcome_score(s, Window(0, 1000), table, decay).value
        for split in (0, 137, 500, 999, 1000):
            left = outcome_score(s, Window(0, split), table, decay).value
            right = outcome_score(s, Window(split, 1000), table, decay).value
            assert left + right == pytest.approx(whole, abs=1e-9)

    def test_linear_in_weight_scaling(self):
        rand = random.Random(6)
        records = [rec(rand.randrange(0, 1000), rand.choice("ab")) for _ in range(100)]
        s = EventStream.from_records("u1", records)
        table = self.table(a=0.7, b=-1.3)
        decay = DecayConfig(half_life=100, reference=300)
        base = outcome_score(s, Window(0, 1000), table, decay).value
        scaled = outcome_score(s, Window(0, 1000), table.scaled(3.5), decay).value
        assert scaled == pytest.approx(3.5 * base, rel=1e-12)


class TestWeightTableSerialisation:
    def test_json_round_trip(self):
        s, goal = make_llr_fixture()
        table = fit_event_weights([s], goal, smoothing=0.25)
        buf = io.StringIO()
        table.save(buf)
        buf.seek(0)
        loaded = EventWeightTable.load(buf)
        assert loaded.weights == table.weights
        assert loaded.smoothing == table.smoothing
        assert loaded.goal_spec == table.goal_spec

    def test_rejects_non_finite_weight(self):
        with pytest.raises(ValueError):
            EventWeightTable(
                weights={"a": float("inf")},
                smoothing=1.0,
                goal_spec=GoalSpec(frozenset({"g"}), 100),
            )
