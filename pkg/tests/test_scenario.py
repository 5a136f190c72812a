import dataclasses

import numpy as np
import pytest

from trucklane.calibration import default_style
from trucklane.car_following import CarFollowingConfig
from trucklane.kinematics import kmh
from trucklane.scenario import (
    DESIGN_CONDITIONS,
    EVALUATION_GAPS,
    ConfigError,
    EgoRole,
    ScenarioConfig,
    SpeedSchedule,
    build_design_condition,
    build_evaluation_trial,
    follow_config_for_style,
    matched_scenario_a,
    run,
)


@pytest.fixture(scope="module")
def medium():
    return default_style("medium")


def test_design_condition_gaps():
    assert DESIGN_CONDITIONS == {
        1: (50.0, 60.0, 70.0), 2: (50.0, 70.0, 60.0), 3: (60.0, 50.0, 70.0),
        4: (60.0, 70.0, 50.0), 5: (70.0, 50.0, 60.0), 6: (70.0, 60.0, 50.0),
    }


def test_conditions_differ_only_in_gaps(medium):
    a, b = build_design_condition(1, medium).to_dict(), build_design_condition(6, medium).to_dict()
    diff = {k for k in a if a[k] != b[k]}
    assert diff == {"gaps", "label"}
    assert b["gaps"] == [70.0, 60.0, 50.0]


@pytest.mark.parametrize("n", [0, 7, "1"])
def test_unknown_design_condition(medium, n):
    with pytest.raises(ConfigError):
        build_design_condition(n, medium)


def test_evaluation_trials():
    for name, gap in zip(("aggressive", "medium", "conservative"), EVALUATION_GAPS):
        cfg = build_evaluation_trial("A", default_style(name))
        assert cfg.gaps == (gap,) and cfg.ego_role is EgoRole.AUTOMATED_C0
    cfg = build_evaluation_trial("B", default_style("conservative"), 2)
    assert cfg.gaps == (55.0,) and cfg.ego_role is EgoRole.SURROUNDING_C3
    assert cfg.label == "eval-B3_2-conservative"
    assert cfg.observer_following.v_set == pytest.approx(kmh(80.0))


@pytest.mark.parametrize("scenario, trial", [("B", None), ("B", 4), ("A", 2), ("C", None)])
def test_evaluation_trial_errors(medium, scenario, trial):
    with pytest.raises(ConfigError):
        build_evaluation_trial(scenario, medium, trial)


def test_matched_a_keeps_everything_but_the_observer(medium):
    b = build_evaluation_trial("B", medium, 1)
    a = matched_scenario_a(b)
    assert a.gaps == b.gaps and a.ego_role is EgoRole.AUTOMATED_C0 and a.observer_following is None


def test_follow_config_margin(medium):
    cf = follow_config_for_style(medium)
    assert cf.s1 == pytest.approx(medium.s1 + 0.5 * medium.ax_lc * medium.dt12**2 + 0.1, abs=1e-12)


def test_speed_schedule_exact():
    sched = SpeedSchedule(0.0, 20.0, [(5.0, -2.0), (7.5, 0.0)])
    assert sched.pose_at(5.0).x == pytest.approx(100.0)
    p = sched.pose_at(7.5)
    assert p.vx == pytest.approx(15.0) and p.x == pytest.approx(100.0 + 20 * 2.5 - 6.25)
    assert sched.pose_at(10.0).x == pytest.approx(p.x + 15.0 * 2.5)


@pytest.mark.parametrize(
    "bad",
    [dict(gaps=()), dict(gaps=(50.0, -1.0)), dict(horizon=0.0), dict(dt=0.0), dict(lead_decel=0.0),
     dict(lead_target_speed=30.0), dict(body_length=0.0), dict(initial_gap=-3.0)],
)
def test_config_validation(medium, bad):
    with pytest.raises(ConfigError):
        ScenarioConfig(style=medium, car_following=CarFollowingConfig(), **bad)


def test_config_dict_roundtrip(medium):
    cfg = build_evaluation_trial("B", medium, 3)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg


def test_config_unknown_fields(medium):
    data = build_design_condition(1, medium).to_dict()
    with pytest.raises(ConfigError, match="car_following.bogus"):
        ScenarioConfig.from_dict({**data, "car_following": {**data["car_following"], "bogus": 1}})
    with pytest.raises(ConfigError, match="wheels"):
        ScenarioConfig.from_dict({**data, "wheels": 18})
    with pytest.raises(ConfigError, match="style"):
        ScenarioConfig.from_dict({k: v for k, v in data.items() if k != "style"})


@pytest.fixture(scope="module")
def design_log(medium):
    return run(build_design_condition(1, medium))


def test_run_is_deterministic(medium, design_log):
    again = run(build_design_condition(1, medium))
    assert np.array_equal(design_log.times, again.times)
    assert np.array_equal(design_log.states, again.states)
    assert [(e.time, e.tag) for e in design_log.events] == [(e.time, e.tag) for e in again.events]


def test_lead_follows_its_schedule(design_log):
    t = design_log.times
    vx = design_log.series("C1", "vx")
    expected = np.clip(kmh(80.0) - 5.0 * np.clip(t - 5.0, 0.0, None), kmh(70.0), None)
    assert np.max(np.abs(vx - expected)) < 1e-9


def test_target_lane_trucks_cruise(design_log):
    for vid in ("T1", "T2", "T3", "T4"):
        assert np.all(design_log.series(vid, "vx") == kmh(80.0))
        assert np.all(design_log.series(vid, "y") == 3.5)


def test_design_run_changes_lanes_and_settles(design_log):
    assert not design_log.fatal
    assert design_log.event("end").data["reason"] == "settled"
    assert design_log.series("C0", "y")[-1] == pytest.approx(3.5, abs=1e-9)
    tags = [e.tag for e in design_log.events]
    for tag in ("lead_decel_onset", "decision", "t1", "t2", "t3", "done", "end"):
        assert tag in tags


def test_closed_gaps_hold_the_ego_behind_the_lead(medium):
    cfg = build_design_condition(1, medium, horizon=40.0)
    cfg = dataclasses.replace(cfg, gaps=(1.0, 1.0, 1.0))
    log = run(cfg)
    assert log.event("end").data["reason"] == "horizon"
    assert log.event("decision") is None
    assert np.all(log.series("C0", "y") == 0.0)
    gap = log.series("C1", "x") - log.series("C0", "x") - 12.0
    assert gap.min() >= cfg.car_following.s1 - 1e-6


def test_scenario_b_observer_runs_acc(medium):
    log = run(build_evaluation_trial("B", medium, 3))
    assert log.metadata["observer"] == "C3"
    assert not log.fatal
    # scripted C2 never changes speed, the observer may
    assert np.all(log.series("C2", "vx") == kmh(80.0))


def test_collision_ends_run(medium):
    # wide bodies make the adjacent-lane platoon overlap the ego at t = 0
    cfg = dataclasses.replace(build_design_condition(1, medium, horizon=10.0), body_width=4.0, c2_to_c1_offset=20.0)
    log = run(cfg)
    assert log.fatal
    assert log.event("end").data["reason"] == "collision"
    hit = log.event("collision")
    assert any("C0" in pair for pair in hit.data["pairs"])
    assert set(hit.data["states"]) == set(log.vehicle_ids)
