import dataclasses
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trucklane.identification import (
    MIN_TRIALS,
    IdentifiedParameters,
    InsufficientDataError,
    MalformedLogError,
    ManeuverTimings,
    StyleTable,
    build_style_table,
    build_style_tables_by_gap,
    detect_timings,
    extract_parameters,
    identify,
    nominal_gap,
    percentile,
)
from trucklane.kinematics import DEFAULT_DT, LaneGeometry, kmh
from trucklane.lane_change import StyleParameters, maneuver_profile
from trucklane.scenario import STATE_FIELDS, TrajectoryLog, build_design_condition, run

GEOM = LaneGeometry()
DT = DEFAULT_DT
STYLE = StyleParameters.from_lateral_accels("medium", 20.0, 15.0, 25.0, 0.10, 0.21, 0.28, GEOM)


def profile_log(style=STYLE, t1=10.0, smooth=False, total=25.0, shift=0.0, v0=kmh(80.0)):
    """Ego-only log: constant speed, then the maneuver profile starting at ``t1``."""
    profile = maneuver_profile(style, GEOM, v0, smooth=smooth)
    times = np.arange(int(round(total / DT)) + 1) * DT
    rows = []
    for t in times:
        if t < t1:
            x, y, vx, vy, ax, ay = v0 * t, 0.0, v0, 0.0, 0.0, 0.0
        else:
            s = profile.ego_state(t - t1, v0 * t1)
            x, y, vx, vy, ax, ay = s.x, s.y, s.vx, s.vy, s.ax, s.ay
        rows.append([x, y, vx, vy, ax, ay, np.arctan2(vy, vx)])
    states = np.asarray(rows).reshape(len(times), 1, len(STATE_FIELDS))
    return TrajectoryLog({"automated": "C0"}, ["C0"], times + shift, states)


def test_detects_profile_timings():
    got = detect_timings(profile_log(), GEOM)
    assert got.t1 == pytest.approx(10.0, abs=DT)
    assert got.t2 == pytest.approx(10.0 + STYLE.dt12, abs=DT)
    assert got.t3 == pytest.approx(10.0 + STYLE.dt13, abs=DT)


def test_smooth_profile_keeps_crossing_time():
    sharp = detect_timings(profile_log(), GEOM)
    smooth = detect_timings(profile_log(smooth=True), GEOM)
    assert smooth.t2 == pytest.approx(sharp.t2, abs=DT)
    assert smooth.t1 == pytest.approx(10.0, abs=2 * DT)
    assert smooth.t3 == pytest.approx(10.0 + STYLE.dt13, abs=2 * DT)


def test_no_maneuver_in_lane_keeping_log():
    log = profile_log(t1=1e9)
    assert detect_timings(log, GEOM) is None
    record = identify(log, trial_id="keep")
    assert not record.lane_changed and record.t1 is None and not record.usable


def test_time_shift_moves_all_timings():
    base = detect_timings(profile_log(), GEOM)
    shifted = detect_timings(profile_log(shift=37.25), GEOM)
    for a, b in zip(dataclasses.astuple(base), dataclasses.astuple(shifted)):
        assert b - a == pytest.approx(37.25, abs=1e-9)


@pytest.mark.parametrize("mutate, message", [
    (lambda log: dataclasses.replace(log, times=log.times[:1], states=log.states[:1]), "two samples"),
    (lambda log: dataclasses.replace(log, times=log.times[::-1].copy()), "increasing"),
    (lambda log: dataclasses.replace(log, states=log.states[:-1]), "shape"),
])
def test_malformed_logs(mutate, message):
    with pytest.raises(MalformedLogError, match=message):
        detect_timings(mutate(profile_log()), GEOM)


def test_timings_outside_log_rejected():
    with pytest.raises(MalformedLogError, match="outside"):
        extract_parameters(profile_log(), ManeuverTimings(10.0, 14.0, 99.0), GEOM)


def test_constant_speed_gives_zero_mean_ax():
    flat = StyleParameters.from_lateral_accels("flat", 20.0, 15.0, 25.0, 0.0, 0.21, 0.28, GEOM)
    log = profile_log(flat)
    record = extract_parameters(log, detect_timings(log, GEOM), GEOM, body_length=12.0)
    assert record.mean_ax == 0.0
    assert record.distances == (None, None, None)


@pytest.fixture(scope="module")
def simulated():
    log = run(build_design_condition(1, STYLE))
    return log, identify(log)


def test_round_trip_matches_decision_predictions(simulated):
    log, record = simulated
    predicted = log.event("decision").data["predicted"]
    assert record.d1_at_t2 == pytest.approx(predicted["d1"], abs=1e-3)
    assert record.d2_at_t3 == pytest.approx(predicted["d2"], abs=1e-3)
    assert record.d3_at_t3 == pytest.approx(predicted["d3"], abs=1e-3)


def test_round_trip_kinematics(simulated):
    log, record = simulated
    assert record.t1 == pytest.approx(log.event("t1").time, abs=2 * DT)
    assert record.dt12 == pytest.approx(STYLE.dt12, abs=2 * DT)
    assert record.dt13 == pytest.approx(STYLE.dt13, abs=2 * DT)
    assert record.mean_ax == pytest.approx(0.10, abs=1e-6)
    assert record.accepted_gap == pytest.approx(record.d2_at_t3 + record.d3_at_t3 + 12.0)
    assert nominal_gap(record) in (50.0, 60.0, 70.0)


@pytest.mark.parametrize("p, expected", [(0.25, 17.5), (0.50, 25.0)])
def test_percentile_examples(p, expected):
    assert percentile([40, 10, 30, 20], p) == expected


def test_percentile_single_and_empty():
    assert all(percentile([7.0], p) == 7.0 for p in (0.0, 0.3, 1.0))
    with pytest.raises(ValueError):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1.0], 1.5)


@settings(max_examples=200, deadline=None)
@given(values=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), p=st.floats(0.0, 1.0), q=st.floats(0.0, 1.0))
def test_percentile_monotone_in_p(values, p, q):
    p, q = sorted((p, q))
    assert percentile(values, p) <= percentile(values, q)


def record(i, d1, d2=18.0, d3=28.0, dt12=4.0, dt13=7.6, ax=0.1):
    return IdentifiedParameters(f"r{i}", True, 0.0, dt12, dt13, d1, d2, d3, dt12, dt13, ax, d2 + d3 + 12.0)


def test_style_table_from_spread_corpus():
    corpus = [record(i, 15.0 + i) for i in range(12)]
    table = build_style_table(corpus)
    assert (table.aggressive.s1, table.medium.s1, table.conservative.s1) == (17.75, 20.5, 23.25)
    assert table.provenance["usable_trials"] == 12
    for s in table.styles():
        s.check_geometry(GEOM)
        assert (s.dt12, s.dt13, s.ax_lc) == pytest.approx((4.0, 7.6, 0.1), abs=1e-12)


def test_identical_corpus_gives_identical_thresholds():
    table = build_style_table([record(i, 21.0) for i in range(5)])
    assert len({s.thresholds for s in table.styles()}) == 1


def test_too_few_usable_trials():
    corpus = [record(i, 20.0) for i in range(MIN_TRIALS - 1)]
    corpus.append(IdentifiedParameters("stay", False))
    with pytest.raises(InsufficientDataError) as info:
        build_style_table(corpus)
    assert info.value.usable == MIN_TRIALS - 1


def test_kinematics_override():
    table = build_style_table([record(i, 15.0 + i) for i in range(6)], kinematics=STYLE)
    assert table.medium.dt12 == STYLE.dt12 and table.medium.ay23 == pytest.approx(0.28)


def test_style_table_is_permutation_invariant():
    rng = random.Random(3)
    corpus = [record(i, rng.uniform(10, 40), rng.uniform(10, 40), rng.uniform(10, 40),
                     rng.uniform(3.5, 4.5), rng.uniform(7.0, 8.0), rng.uniform(0.0, 0.2)) for i in range(30)]
    reference = build_style_table(corpus).to_dict()
    for _ in range(10):
        rng.shuffle(corpus)
        assert build_style_table(corpus).to_dict() == reference


def test_style_table_ordering_enforced():
    table = build_style_table([record(i, 15.0 + i) for i in range(6)])
    with pytest.raises(ValueError, match="s1"):
        StyleTable(table.conservative, table.medium, table.aggressive)
    assert StyleTable.from_dict(table.to_dict()) == table


def test_tables_by_gap_skip_small_groups():
    corpus = [record(i, 15.0 + i, d2=18.0, d3=20.0) for i in range(5)]  # 50 m
    corpus += [record(i, 15.0 + i, d2=18.0, d3=40.0) for i in range(3)]  # 70 m
    tables = build_style_tables_by_gap(corpus)
    assert list(tables) == [50.0]
