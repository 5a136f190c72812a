"""Gap-acceptance lane change: distance prediction, decision and maneuver.

The ego predicts its bumper-to-bumper distance to the origin-lane lead (C1)
at the boundary crossing, and to the target-lane leader (C2) and follower
(C3) at maneuver completion, assuming the neighbors hold their speeds while
the ego holds a constant longitudinal acceleration. The lane change starts
only if all three predictions strictly exceed the style's thresholds.

The maneuver is two constant lateral-acceleration phases: ``+ay12`` up to the
lane boundary, then ``-ay23`` down to the target-lane center. With equal
phase lengths l1 = l2 and dt12 != dt23 the two phases disagree on the lateral
speed at the boundary; the default two-phase profile resets it there and
reports the jump. The "smooth" profile is a continuous trapezoid that meets
the same boundary and end timings.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum

from .car_following import CarFollowingConfig, FollowingObservation, following_command
from .kinematics import LaneGeometry, VehicleState, displacement_under_constant_accel

CONSISTENCY_TOL = 1e-6  # m/s^2

STYLE_NAMES = ("aggressive", "medium", "conservative")


class StyleError(ValueError):
    """A style is malformed or inconsistent with the lane geometry."""


@dataclass(frozen=True)
class StyleParameters:
    """One lane-change style.

    Durations are measured from the maneuver start: ``dt12`` to the boundary
    crossing, ``dt13`` to completion. ``ay23`` is a magnitude.
    """

    name: str
    s1: float
    s2: float
    s3: float
    dt12: float
    dt13: float
    ax_lc: float
    ay12: float
    ay23: float

    def __post_init__(self):
        for key, value in asdict(self).items():
            if key != "name" and not math.isfinite(value):
                raise StyleError(f"style {self.name!r}: non-finite {key}={value!r}")
        if min(self.s1, self.s2, self.s3) <= 0.0:
            raise StyleError(f"style {self.name!r}: thresholds must be > 0")
        if not (self.dt13 > self.dt12 > 0.0):
            raise StyleError(f"style {self.name!r}: need dt13 > dt12 > 0, got {self.dt12}, {self.dt13}")
        if self.ay12 <= 0.0 or self.ay23 <= 0.0:
            raise StyleError(f"style {self.name!r}: lateral accelerations must be > 0")

    @property
    def dt23(self) -> float:
        return self.dt13 - self.dt12

    @property
    def thresholds(self) -> tuple[float, float, float]:
        return (self.s1, self.s2, self.s3)

    @classmethod
    def from_lateral_accels(cls, name, s1, s2, s3, ax_lc, ay12, ay23, geometry: LaneGeometry):
        """Build a style from lateral accelerations, deriving the durations."""
        if ay12 <= 0.0 or ay23 <= 0.0:
            raise StyleError(f"style {name!r}: lateral accelerations must be > 0")
        dt12 = math.sqrt(2.0 * geometry.l1 / ay12)
        dt23 = math.sqrt(2.0 * geometry.l2 / ay23)
        return cls(name, s1, s2, s3, dt12, dt12 + dt23, ax_lc, ay12, ay23)

    @classmethod
    def from_durations(cls, name, s1, s2, s3, ax_lc, dt12, dt13, geometry: LaneGeometry):
        """Build a style from phase durations, deriving the lateral accelerations."""
        if not (dt13 > dt12 > 0.0):
            raise StyleError(f"style {name!r}: need dt13 > dt12 > 0, got {dt12}, {dt13}")
        ay12 = 2.0 * geometry.l1 / dt12**2
        ay23 = 2.0 * geometry.l2 / (dt13 - dt12) ** 2
        return cls(name, s1, s2, s3, dt12, dt13, ax_lc, ay12, ay23)

    def check_geometry(self, geometry: LaneGeometry) -> None:
        """Reject a style whose accelerations do not reach the lane boundary
        and the target-lane center at its stated timings."""
        ay12 = 2.0 * geometry.l1 / self.dt12**2
        ay23 = 2.0 * geometry.l2 / self.dt23**2
        if abs(ay12 - self.ay12) > CONSISTENCY_TOL or abs(ay23 - self.ay23) > CONSISTENCY_TOL:
            raise StyleError(
                f"style {self.name!r} inconsistent with lane width {geometry.lane_width}: "
                f"ay12={self.ay12} (expected {ay12}), ay23={self.ay23} (expected {ay23})"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StyleParameters":
        fields = ("name", "s1", "s2", "s3", "dt12", "dt13", "ax_lc", "ay12", "ay23")
        missing = [f for f in fields if f not in data]
        if missing:
            raise StyleError(f"style is missing field(s): {', '.join(missing)}")
        return cls(str(data["name"]), *(float(data[f]) for f in fields[1:]))


@dataclass(frozen=True)
class GapObservation:
    """Gaps and speeds seen at the decision tick.

    ``x1``, ``x2``, ``x3`` are bumper-to-bumper: ego front to C1 rear, ego
    front to C2 rear, C3 front to ego rear.
    """

    x1: float
    x2: float
    x3: float
    v0: float
    v1: float
    v2: float
    v3: float


@dataclass(frozen=True)
class PredictedDistances:
    d1: float  # ego -> C1 at the boundary crossing
    d2: float  # ego -> C2 at completion
    d3: float  # C3 -> ego at completion

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.d1, self.d2, self.d3)


class Decision(Enum):
    CHANGE = "change"
    STAY = "stay"


def predict_distances(obs: GapObservation, style: StyleParameters) -> PredictedDistances:
    ego_12 = displacement_under_constant_accel(obs.v0, style.ax_lc, style.dt12)
    ego_13 = displacement_under_constant_accel(obs.v0, style.ax_lc, style.dt13)
    d1 = obs.x1 + obs.v1 * style.dt12 - ego_12
    d2 = obs.x2 + obs.v2 * style.dt13 - ego_13
    d3 = obs.x3 - obs.v3 * style.dt13 + ego_13
    return PredictedDistances(d1, d2, d3)


def gap_acceptance(pred: PredictedDistances, style: StyleParameters) -> Decision:
    # strict: a prediction equal to its threshold is rejected
    if pred.d1 > style.s1 and pred.d2 > style.s2 and pred.d3 > style.s3:
        return Decision.CHANGE
    return Decision.STAY


@dataclass(frozen=True)
class _Segment:
    t0: float
    y0: float
    vy0: float
    ay: float


class ManeuverProfile:
    """Acceleration schedule of one lane change, relative to its start.

    Longitudinal acceleration is ``ax_lc`` throughout. Laterally the profile
    is a list of constant-acceleration segments; a segment may start with a
    lateral speed different from where the previous one ended (the velocity
    reset of the two-phase profile). After ``duration`` the truck sits on the
    target-lane center with zero lateral speed.
    """

    def __init__(self, segments: list[_Segment], ax: float, v_t1: float, duration: float, t_cross: float):
        self.segments = segments
        self.ax = ax
        self.v_t1 = v_t1
        self.duration = duration
        self.t_cross = t_cross
        self._starts = [s.t0 for s in segments]

    @property
    def v_t3(self) -> float:
        return self.v_t1 + self.ax * self.duration

    @property
    def lateral_jump(self) -> float:
        """Sum of |lateral speed discontinuities| across segment boundaries."""
        total = 0.0
        for prev, seg in zip(self.segments, self.segments[1:]):
            total += abs(seg.vy0 - (prev.vy0 + prev.ay * (seg.t0 - prev.t0)))
        return total

    def lateral(self, tau: float) -> tuple[float, float, float]:
        """``(y, vy, ay)`` at time ``tau`` after the start."""
        if tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {tau!r}")
        seg = self.segments[bisect.bisect_right(self._starts, tau) - 1]
        h = tau - seg.t0
        return seg.y0 + seg.vy0 * h + 0.5 * seg.ay * h * h, seg.vy0 + seg.ay * h, seg.ay

    def longitudinal(self, tau: float) -> tuple[float, float]:
        """``(dx, vx)``: distance travelled and speed at ``tau``."""
        vx = self.v_t1 + self.ax * tau
        if vx < 0.0:
            # brakes to a stop; never happens with the published accelerations
            t_stop = -self.v_t1 / self.ax
            return self.v_t1 * t_stop + 0.5 * self.ax * t_stop * t_stop, 0.0
        return self.v_t1 * tau + 0.5 * self.ax * tau * tau, vx

    def ego_state(self, tau: float, x_t1: float) -> VehicleState:
        dx, vx = self.longitudinal(tau)
        y, vy, ay = self.lateral(tau)
        return VehicleState(x=x_t1 + dx, y=y, vx=vx, vy=vy, ax=self.ax, ay=ay)

    def samples(self, dt: float) -> list[tuple[float, float, float]]:
        """``(tau, ax, ay)`` on the grid ``0, dt, 2 dt, ...`` up to the duration."""
        n = int(math.ceil(self.duration / dt))
        return [(k * dt, self.ax, self.lateral(k * dt)[2]) for k in range(n + 1)]


def maneuver_profile(
    style: StyleParameters, geometry: LaneGeometry, v_t1: float, smooth: bool = False
) -> ManeuverProfile:
    """Acceleration schedule for a lane change that starts at speed ``v_t1``."""
    style.check_geometry(geometry)
    l1, l2 = geometry.l1, geometry.l2
    y_end = geometry.target_lane_center_y
    dt12, dt13, dt23 = style.dt12, style.dt13, style.dt23
    if not smooth:
        segments = [
            _Segment(0.0, 0.0, 0.0, style.ay12),
            # lateral speed that lands on the lane center with vy = 0
            _Segment(dt12, l1, style.ay23 * dt23, -style.ay23),
            _Segment(dt13, y_end, 0.0, 0.0),
        ]
    else:
        # trapezoid in vy: ramp up, cruise through the boundary, ramp down
        lo = max(l1 / dt12, l2 / dt23)
        hi = min(2.0 * l1 / dt12, 2.0 * l2 / dt23)
        if lo >= hi:
            raise StyleError(
                f"style {style.name!r}: no continuous trapezoid reaches the boundary at dt12 "
                f"and the lane center at dt13"
            )
        v_peak = 0.5 * (lo + hi)
        r_up = 2.0 * (dt12 - l1 / v_peak)
        r_down = 2.0 * (dt23 - l2 / v_peak)
        y_up = 0.5 * v_peak * r_up
        t_down = dt13 - r_down
        y_down = y_end - 0.5 * v_peak * r_down
        segments = [
            _Segment(0.0, 0.0, 0.0, v_peak / r_up),
            _Segment(r_up, y_up, v_peak, 0.0),
            _Segment(t_down, y_down, v_peak, -v_peak / r_down),
            _Segment(dt13, y_end, 0.0, 0.0),
        ]
    return ManeuverProfile(segments, style.ax_lc, v_t1, dt13, dt12)


@dataclass(frozen=True)
class FollowCommand:
    ax: float


@dataclass(frozen=True)
class ManeuverCommand:
    """Ego state is taken from ``profile`` anchored at (t1, x_t1)."""

    profile: ManeuverProfile
    t1: float
    x_t1: float

    def state_at(self, t: float) -> VehicleState:
        return self.profile.ego_state(max(t - self.t1, 0.0), self.x_t1)


class Mode(Enum):
    FOLLOW = "follow"
    MANEUVER = "maneuver"
    DONE = "done"


@dataclass
class SupervisorEvent:
    time: float
    tag: str
    data: dict


class LaneChangeSupervisor:
    """Per-ego phase machine: follow -> maneuver -> done.

    While following, the gap decision is re-evaluated every tick once
    ``armed_at`` has passed. The first ``change`` latches t1 and the maneuver
    runs to completion without abort. After completion the ego follows
    whatever leads it in the target lane.
    """

    def __init__(
        self,
        style: StyleParameters,
        geometry: LaneGeometry,
        car_following: CarFollowingConfig,
        armed_at: float = 0.0,
        smooth: bool = False,
    ):
        style.check_geometry(geometry)
        self.style = style
        self.geometry = geometry
        self.car_following = car_following
        self.armed_at = armed_at
        self.smooth = smooth
        self.mode = Mode.FOLLOW
        self.maneuver: ManeuverCommand | None = None
        self.events: list[SupervisorEvent] = []

    def _follow(self, ego: VehicleState, lead: FollowingObservation | None, dt: float) -> FollowCommand:
        if lead is None:
            return FollowCommand(_free_command(ego.vx, self.car_following, dt))
        return FollowCommand(following_command(lead, self.car_following, dt))

    def command(
        self,
        time: float,
        ego: VehicleState,
        lead: FollowingObservation | None,
        gap: GapObservation | None,
        dt: float,
        neighbor_ids: tuple[str, str, str] | None = None,
    ) -> FollowCommand | ManeuverCommand:
        if self.mode is Mode.MANEUVER:
            assert self.maneuver is not None
            if time - self.maneuver.t1 < self.maneuver.profile.duration:
                return self.maneuver
            self.mode = Mode.DONE
            self.events.append(SupervisorEvent(time, "done", {}))
        if self.mode is Mode.DONE:
            return self._follow(ego, lead, dt)

        if time >= self.armed_at and gap is not None:
            pred = predict_distances(gap, self.style)
            if gap_acceptance(pred, self.style) is Decision.CHANGE:
                profile = maneuver_profile(self.style, self.geometry, ego.vx, smooth=self.smooth)
                self.maneuver = ManeuverCommand(profile, time, ego.x)
                self.mode = Mode.MANEUVER
                data = {
                    "observation": asdict(gap),
                    "predicted": asdict(pred),
                    "style": self.style.name,
                    "lateral_jump": profile.lateral_jump,
                }
                if neighbor_ids is not None:
                    data["neighbors"] = {"C1": neighbor_ids[0], "C2": neighbor_ids[1], "C3": neighbor_ids[2]}
                self.events.append(SupervisorEvent(time, "decision", data))
                self.events.append(SupervisorEvent(time, "t1", {}))
                self.events.append(SupervisorEvent(time + self.style.dt12, "t2", {}))
                self.events.append(SupervisorEvent(time + self.style.dt13, "t3", {}))
                return self.maneuver
        return self._follow(ego, lead, dt)


def _free_command(v0: float, cfg: CarFollowingConfig, dt: float) -> float:
    if v0 < cfg.v_set:
        return min(cfg.a_acc, (cfg.v_set - v0) / dt) if dt > 0.0 else cfg.a_acc
    return 0.0


def style_with(style: StyleParameters, **changes) -> StyleParameters:
    return replace(style, **changes)


__all__ = [
    "CONSISTENCY_TOL",
    "STYLE_NAMES",
    "Decision",
    "FollowCommand",
    "GapObservation",
    "LaneChangeSupervisor",
    "ManeuverCommand",
    "ManeuverProfile",
    "Mode",
    "PredictedDistances",
    "StyleError",
    "StyleParameters",
    "SupervisorEvent",
    "gap_acceptance",
    "maneuver_profile",
    "predict_distances",
    "style_with",
]
