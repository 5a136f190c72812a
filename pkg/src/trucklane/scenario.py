"""Highway scenarios and the deterministic simulation loop.

Layout (x grows in the driving direction, y toward the target lane)::

    target lane   ... T3 ]-g2-[ T2 ]-g1-[ T1 ]          (all at cruise speed)
    origin lane                 [ C0 ]-x1-[ C1 ]         (C1 brakes once)

The first target-lane truck's front bumper sits ``c2_to_c1_offset`` behind
C1's rear bumper, so the target-lane platoon starts behind the ego and the
gaps slide past it once C1 (and with it the ego) slows down. With a single
gap the target-lane trucks are named C2 and C3; with more they are T1, T2...
"""

from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

from .car_following import CarFollowingConfig, CollisionError, FollowingObservation, following_command
from .kinematics import DEFAULT_DT, LaneGeometry, VehicleState, kmh, step_constant_accel
from .lane_change import (
    GapObservation,
    LaneChangeSupervisor,
    ManeuverCommand,
    Mode,
    StyleParameters,
)

STATE_FIELDS = ("x", "y", "vx", "vy", "ax", "ay", "yaw")

DESIGN_CONDITIONS = {
    1: (50.0, 60.0, 70.0),
    2: (50.0, 70.0, 60.0),
    3: (60.0, 50.0, 70.0),
    4: (60.0, 70.0, 50.0),
    5: (70.0, 50.0, 60.0),
    6: (70.0, 60.0, 50.0),
}

# Scenario A/B C2-C3 gap per trial: aggressive/medium/conservative for A,
# trial index 1/2/3 for B
EVALUATION_GAPS = (45.0, 55.0, 65.0)
EVALUATION_STYLE_INDEX = {"aggressive": 0, "medium": 1, "conservative": 2}


class ConfigError(ValueError):
    """A scenario configuration is malformed."""


class EgoRole(str, Enum):
    AUTOMATED_C0 = "automated_c0"
    SURROUNDING_C3 = "surrounding_c3"


def follow_config_for_style(style: StyleParameters, base: CarFollowingConfig | None = None,
                            buffer: float = 0.1) -> CarFollowingConfig:
    """ACC tuning that keeps the boundary-crossing prediction above ``style.s1``.

    Starting the maneuver at the lead's speed costs ``ax_lc * dt12**2 / 2`` of
    gap before the boundary crossing, so the follower holds that much (plus
    ``buffer``) on top of the style threshold. A gap the follower accepts is
    then never blocked by the lead-distance criterion alone.
    """
    base = base or CarFollowingConfig()
    margin = max(0.5 * style.ax_lc * style.dt12**2, 0.0) + buffer
    return replace(base, s1=style.s1 + margin)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run depends on. ``run`` is a pure function of this."""

    style: StyleParameters
    car_following: CarFollowingConfig
    gaps: tuple[float, ...] = DESIGN_CONDITIONS[1]
    geometry: LaneGeometry = LaneGeometry()
    body_length: float = 12.0
    body_width: float = 2.5
    dt: float = DEFAULT_DT
    cruise_speed: float = kmh(80.0)
    lead_decel: float = 5.0
    lead_target_speed: float = kmh(70.0)
    lead_decel_trigger_time: float = 5.0
    c2_to_c1_offset: float = 55.0
    initial_gap: float | None = None  # ego -> C1; None = ACC equilibrium
    horizon: float = 120.0
    settle_time: float = 2.0
    ego_role: EgoRole = EgoRole.AUTOMATED_C0
    observer_following: CarFollowingConfig | None = None
    smooth_profile: bool = False
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gaps", tuple(float(g) for g in self.gaps))
        object.__setattr__(self, "ego_role", EgoRole(self.ego_role))
        if not self.gaps or min(self.gaps) <= 0.0:
            raise ConfigError(f"gaps must be non-empty and > 0, got {self.gaps}")
        if not self.horizon > 0.0:
            raise ConfigError(f"horizon must be > 0, got {self.horizon}")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if not self.lead_target_speed < self.cruise_speed:
            raise ConfigError("lead_target_speed must be below cruise_speed")
        if not self.lead_decel > 0.0:
            raise ConfigError(f"lead_decel must be > 0, got {self.lead_decel}")
        if self.body_length <= 0.0 or self.body_width <= 0.0:
            raise ConfigError("body dimensions must be > 0")
        if self.initial_gap is not None and self.initial_gap <= 0.0:
            raise ConfigError(f"initial_gap must be > 0, got {self.initial_gap}")
        if self.ego_role is EgoRole.SURROUNDING_C3 and self.observer_following is None:
            object.__setattr__(self, "observer_following", CarFollowingConfig(v_set=self.cruise_speed))
        self.style.check_geometry(self.geometry)

    @property
    def ramp_duration(self) -> float:
        return (self.cruise_speed - self.lead_target_speed) / self.lead_decel

    def ego_initial_gap(self) -> float:
        if self.initial_gap is not None:
            return self.initial_gap
        # equal speeds at t = 0: the threshold is s1 itself
        return self.car_following.s1 + self.car_following.hysteresis

    def to_dict(self) -> dict:
        data = asdict(self)
        data["gaps"] = list(self.gaps)
        data["ego_role"] = self.ego_role.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)

        def section(name, cls_, default=None):
            body = data.pop(name, default)
            if body is None:
                return None
            if not isinstance(body, dict):
                raise ConfigError(f"{name}: expected a table, got {body!r}")
            unknown = sorted(set(body) - set(cls_.__dataclass_fields__))
            if unknown:
                raise ConfigError(f"unknown config field(s): {', '.join(f'{name}.{k}' for k in unknown)}")
            try:
                return cls_.from_dict(body) if cls_ is StyleParameters else cls_(**body)
            except TypeError as exc:
                raise ConfigError(f"{name}: {exc}") from None

        if "style" not in data or "car_following" not in data:
            missing = [k for k in ("style", "car_following") if k not in data]
            raise ConfigError(f"missing config section: {', '.join(missing)}")
        style = section("style", StyleParameters)
        car_following = section("car_following", CarFollowingConfig)
        observer = section("observer_following", CarFollowingConfig)
        geometry = section("geometry", LaneGeometry, {})
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        if "gaps" in data:
            data["gaps"] = tuple(data["gaps"])
        return cls(style=style, car_following=car_following, geometry=geometry,
                   observer_following=observer, **data)


def build_design_condition(n: int, style: StyleParameters, **overrides) -> ScenarioConfig:
    """Design-experiment layout: four target-lane trucks, gaps in condition ``n`` order."""
    if n not in DESIGN_CONDITIONS:
        raise ConfigError(f"design condition must be 1..6, got {n!r}")
    cf = overrides.pop("car_following", None) or follow_config_for_style(style)
    label = overrides.pop("label", f"design-cond{n}-{style.name}")
    return ScenarioConfig(style=style, car_following=cf, gaps=DESIGN_CONDITIONS[n], label=label, **overrides)


def build_evaluation_trial(scenario: str, style: StyleParameters, trial_index: int | None = None,
                           **overrides) -> ScenarioConfig:
    """Evaluation layout: one C2-C3 gap.

    Scenario A has one trial per style, its gap keyed to the style name.
    Scenario B has trials 1..3 per style with gaps 45/55/65 m, and the
    observed truck C3 drives under ACC behind C2.
    """
    scenario = scenario.upper()
    cf = overrides.pop("car_following", None) or follow_config_for_style(style)
    if scenario == "A":
        if trial_index not in (None, 1):
            raise ConfigError("scenario A has a single trial per style")
        if style.name not in EVALUATION_STYLE_INDEX:
            raise ConfigError(f"scenario A needs a named style, got {style.name!r}")
        gap = EVALUATION_GAPS[EVALUATION_STYLE_INDEX[style.name]]
        role = EgoRole.AUTOMATED_C0
        label = f"eval-A{EVALUATION_STYLE_INDEX[style.name] + 1}-{style.name}"
        observer = None
    elif scenario == "B":
        if trial_index not in (1, 2, 3):
            raise ConfigError(f"scenario B trial index must be 1..3, got {trial_index!r}")
        gap = EVALUATION_GAPS[trial_index - 1]
        role = EgoRole.SURROUNDING_C3
        number = EVALUATION_STYLE_INDEX.get(style.name, -1) + 1
        label = f"eval-B{number}_{trial_index}-{style.name}"
        observer = overrides.pop("observer_following", None) or CarFollowingConfig(v_set=kmh(80.0))
    else:
        raise ConfigError(f"scenario must be 'A' or 'B', got {scenario!r}")
    gap = overrides.pop("gap", gap)
    label = overrides.pop("label", label)
    return ScenarioConfig(style=style, car_following=cf, gaps=(gap,), ego_role=role,
                          observer_following=observer, label=label, **overrides)


def matched_scenario_a(config: ScenarioConfig) -> ScenarioConfig:
    """Scenario A counterpart of a scenario B config (same gap, scripted C3)."""
    return replace(config, ego_role=EgoRole.AUTOMATED_C0, observer_following=None,
                   label=config.label + "-matchedA")


class Pose(NamedTuple):
    """Unvalidated state record for scripted trucks; same fields as VehicleState."""

    x: float
    y: float
    vx: float
    vy: float
    ax: float
    ay: float
    yaw: float


def _state_dict(s) -> dict:
    return {f: getattr(s, f) for f in STATE_FIELDS}


class SpeedSchedule:
    """Scripted longitudinal motion: piecewise-constant acceleration, exact."""

    def __init__(self, x0: float, v0: float, pieces: list[tuple[float, float]]):
        """``pieces`` are ``(t_start, accel)`` with increasing start times;
        motion before the first piece is at constant ``v0``."""
        self._t = [0.0]
        self._x = [x0]
        self._v = [v0]
        self._a = [0.0]
        for t_start, accel in pieces:
            h = t_start - self._t[-1]
            self._x.append(self._x[-1] + self._v[-1] * h + 0.5 * self._a[-1] * h * h)
            self._v.append(self._v[-1] + self._a[-1] * h)
            self._t.append(t_start)
            self._a.append(accel)

    def pose_at(self, t: float, y: float = 0.0) -> "Pose":
        i = bisect.bisect_right(self._t, t) - 1
        h = t - self._t[i]
        a = self._a[i]
        return Pose(self._x[i] + self._v[i] * h + 0.5 * a * h * h, y, self._v[i] + a * h, 0.0, a, 0.0, 0.0)

    def state_at(self, t: float, y: float = 0.0) -> VehicleState:
        p = self.pose_at(t, y)
        return VehicleState(x=p.x, y=p.y, vx=p.vx, ax=p.ax)


def lead_schedule(config: ScenarioConfig, x0: float) -> SpeedSchedule:
    t0 = config.lead_decel_trigger_time
    return SpeedSchedule(x0, config.cruise_speed,
                         [(t0, -config.lead_decel), (t0 + config.ramp_duration, 0.0)])


@dataclass
class Event:
    time: float
    tag: str
    data: dict = field(default_factory=dict)


@dataclass
class TrajectoryLog:
    """Per-tick states of every vehicle plus tagged events.

    ``states[k, i]`` holds ``STATE_FIELDS`` of vehicle ``vehicle_ids[i]`` at
    ``times[k]``.
    """

    metadata: dict
    vehicle_ids: list[str]
    times: np.ndarray
    states: np.ndarray
    events: list[Event] = field(default_factory=list)

    @property
    def fatal(self) -> bool:
        return any(e.tag == "collision" for e in self.events)

    @property
    def automated_id(self) -> str:
        return self.metadata.get("automated", "C0")

    def index(self, vehicle_id: str) -> int:
        try:
            return self.vehicle_ids.index(vehicle_id)
        except ValueError:
            raise KeyError(f"no vehicle {vehicle_id!r} in log") from None

    def series(self, vehicle_id: str, name: str) -> np.ndarray:
        return self.states[:, self.index(vehicle_id), STATE_FIELDS.index(name)]

    def event(self, tag: str) -> Event | None:
        for e in self.events:
            if e.tag == tag:
                return e
        return None

    def geometry(self) -> LaneGeometry:
        cfg = self.metadata.get("config", {})
        return LaneGeometry(**cfg.get("geometry", {}))

    def body_length(self) -> float:
        return float(self.metadata.get("config", {}).get("body_length", 12.0))


def _initial_layout(config: ScenarioConfig):
    L = config.body_length
    lane_y = config.geometry.target_lane_center_y
    v = config.cruise_speed
    c1_rear = 0.0
    vehicles = {"C1": VehicleState(x=c1_rear + L / 2.0, y=0.0, vx=v),
                "C0": VehicleState(x=c1_rear - config.ego_initial_gap() - L / 2.0, y=0.0, vx=v)}
    n = len(config.gaps) + 1
    names = ["C2", "C3"] if n == 2 else [f"T{i + 1}" for i in range(n)]
    front = c1_rear - config.c2_to_c1_offset
    for i, name in enumerate(names):
        vehicles[name] = VehicleState(x=front - L / 2.0, y=lane_y, vx=v)
        if i < len(config.gaps):
            front = front - L - config.gaps[i]
    return vehicles, names


class _World:
    """Mutable per-run bookkeeping; never shared between runs."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        states, self.target_names = _initial_layout(config)
        self.advance(states)
        self.ids = list(self.states)
        self.lead = lead_schedule(config, self.states["C1"].x)
        self.observer = None
        if config.ego_role is EgoRole.SURROUNDING_C3:
            self.observer = self.target_names[1]
        self.scripted_target = {
            name: SpeedSchedule(s.x, s.vx, []) for name, s in self.states.items()
            if name in self.target_names and name != self.observer
        }
        self.supervisor = LaneChangeSupervisor(
            config.style, config.geometry, config.car_following,
            armed_at=config.lead_decel_trigger_time, smooth=config.smooth_profile,
        )

    def advance(self, states: dict[str, VehicleState]) -> None:
        self.states = states
        lane_of = self.config.geometry.lane_of
        self._lanes = {vid: lane_of(s.y) for vid, s in states.items()}

    def lane(self, vid: str) -> int:
        return self._lanes[vid]

    def leader_in_lane(self, vid: str, lane: int) -> str | None:
        me = self.states[vid]
        best, best_x = None, math.inf
        for other, s in self.states.items():
            if other == vid or self.lane(other) != lane:
                continue
            if me.x < s.x < best_x:
                best, best_x = other, s.x
        return best

    def follower_in_lane(self, vid: str, lane: int) -> str | None:
        me = self.states[vid]
        best, best_x = None, -math.inf
        for other, s in self.states.items():
            if other == vid or self.lane(other) != lane:
                continue
            if best_x < s.x <= me.x:
                best, best_x = other, s.x
        return best

    def alongside(self, vid: str, lane: int) -> bool:
        """True when any truck in ``lane`` overlaps ``vid`` longitudinally."""
        me = self.states[vid]
        L = self.config.body_length
        return any(abs(s.x - me.x) < L for other, s in self.states.items()
                   if other != vid and self.lane(other) == lane)

    def gap(self, rear: str, front: str) -> float:
        return self.states[front].x - self.states[rear].x - self.config.body_length

    def following_obs(self, vid: str, lane: int) -> FollowingObservation | None:
        lead = self.leader_in_lane(vid, lane)
        if lead is None:
            return None
        return FollowingObservation(self.gap(vid, lead), self.states[vid].vx, self.states[lead].vx)

    def collisions(self) -> list[tuple[str, str]]:
        L, W = self.config.body_length, self.config.body_width
        pos = [(vid, self.states[vid].x, self.states[vid].y) for vid in self.ids]
        hits = []
        for i, (a, xa, ya) in enumerate(pos):
            for b, xb, yb in pos[i + 1:]:
                if abs(xa - xb) < L and abs(ya - yb) < W:
                    hits.append((a, b))
        return hits


def run(config: ScenarioConfig) -> TrajectoryLog:
    """Simulate ``config`` until the maneuver settles, the horizon, or a collision.

    All vehicles are advanced simultaneously from the tick's states in a fixed
    order; there is no randomness, so the log is a pure function of the config.
    """
    world = _World(config)
    dt = config.dt
    origin, target = 0, 1
    ids = world.ids
    rows: list[list[float]] = []
    times: list[float] = []
    events: list[Event] = [Event(config.lead_decel_trigger_time, "lead_decel_onset")]
    sup = world.supervisor
    n_events_seen = 0
    done_at: float | None = None
    end_reason = "horizon"

    k = 0
    while True:
        t = k * dt
        times.append(t)
        row = []
        for vid in ids:
            s = world.states[vid]
            row.extend((s.x, s.y, s.vx, s.vy, s.ax, s.ay, s.yaw))
        rows.append(row)

        hits = world.collisions()
        if hits:
            events.append(Event(t, "collision", {"pairs": [list(p) for p in hits], "states": {
                vid: _state_dict(world.states[vid]) for vid in ids}}))
            end_reason = "collision"
            break
        if done_at is not None and t >= done_at + config.settle_time:
            end_reason = "settled"
            break
        if t >= config.horizon:
            break

        t_next = (k + 1) * dt
        nxt: dict[str, VehicleState] = {}
        try:
            # automated truck
            ego = world.states["C0"]
            lane = origin if sup.mode is Mode.FOLLOW else target
            lead_obs = world.following_obs("C0", lane)
            gap_obs, neighbors = None, None
            if sup.mode is Mode.FOLLOW:
                c2 = world.leader_in_lane("C0", target)
                c3 = world.follower_in_lane("C0", target)
                # a gap is a candidate only once the ego sits fully inside it
                if c2 is not None and c3 is not None and not world.alongside("C0", target):
                    c1 = world.leader_in_lane("C0", origin)
                    x1 = world.gap("C0", c1) if c1 else math.inf
                    v1 = world.states[c1].vx if c1 else ego.vx
                    gap_obs = GapObservation(
                        x1=x1, x2=world.gap("C0", c2), x3=world.gap(c3, "C0"),
                        v0=ego.vx, v1=v1, v2=world.states[c2].vx, v3=world.states[c3].vx,
                    )
                    neighbors = (c1, c2, c3)
            cmd = sup.command(t, ego, lead_obs, gap_obs, dt, neighbors)
            if isinstance(cmd, ManeuverCommand):
                nxt["C0"] = cmd.state_at(t_next)
            else:
                nxt["C0"] = step_constant_accel(ego, cmd.ax, 0.0, dt)

            nxt["C1"] = world.lead.pose_at(t_next)
            for name in world.target_names:
                if name == world.observer:
                    obs = world.following_obs(name, target)
                    s = world.states[name]
                    cfg = config.observer_following
                    if obs is None:
                        ax = min(cfg.a_acc, (cfg.v_set - s.vx) / dt) if s.vx < cfg.v_set else 0.0
                    else:
                        ax = following_command(obs, cfg, dt)
                    nxt[name] = step_constant_accel(s, ax, 0.0, dt)
                else:
                    nxt[name] = world.scripted_target[name].pose_at(t_next, world.states[name].y)
        except CollisionError as exc:
            events.append(Event(t, "collision", {"error": str(exc), "states": {
                vid: _state_dict(world.states[vid]) for vid in ids}}))
            end_reason = "collision"
            break

        for e in sup.events[n_events_seen:]:
            events.append(Event(e.time, e.tag, e.data))
            if e.tag == "done":
                done_at = e.time
        n_events_seen = len(sup.events)
        world.advance({vid: nxt[vid] for vid in ids})
        k += 1

    events.append(Event(times[-1], "end", {"reason": end_reason}))
    events.sort(key=lambda e: e.time)
    metadata = {
        "label": config.label,
        "config": config.to_dict(),
        "automated": "C0",
        "observer": world.observer or "C0",
        "target_lane": list(world.target_names),
    }
    return TrajectoryLog(
        metadata=metadata,
        vehicle_ids=list(ids),
        times=np.asarray(times),
        states=np.asarray(rows, dtype=float).reshape(len(times), len(ids), len(STATE_FIELDS)),
        events=events,
    )
