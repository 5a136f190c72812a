"""Vehicle state, lane geometry and exact constant-acceleration stepping.

All quantities are SI. km/h only appears at config and report boundaries and
is converted with :func:`kmh` / :func:`to_kmh`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

DEFAULT_DT = 1.0 / 120.0  # s, simulator sampling rate


def kmh(speed_kmh: float) -> float:
    """km/h -> m/s."""
    return speed_kmh / 3.6


def to_kmh(speed: float) -> float:
    return speed * 3.6


def _check_finite(**values: float) -> None:
    if all(map(math.isfinite, values.values())):
        return
    for name, value in values.items():
        if not math.isfinite(value):
            raise ValueError(f"non-finite value for {name!r}: {value!r}")


def heading(vx: float, vy: float) -> float:
    """Kinematic yaw angle of a velocity vector, relative to the lane direction."""
    if vx > 0.0:
        return math.atan(vy / vx)
    if vy == 0.0:
        return 0.0
    return math.copysign(math.pi / 2.0, vy)


@dataclass(frozen=True)
class VehicleState:
    """Kinematic state of one truck's center of gravity.

    ``y`` is measured from the origin-lane center and increases toward the
    target lane. ``yaw`` is not an input: it is derived from ``(vx, vy)``.
    """

    x: float
    y: float
    vx: float
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    yaw: float = field(init=False)

    def __post_init__(self):
        _check_finite(x=self.x, y=self.y, vx=self.vx, vy=self.vy, ax=self.ax, ay=self.ay)
        if self.vx < 0.0:
            raise ValueError(f"vx must be >= 0, got {self.vx!r}")
        object.__setattr__(self, "yaw", heading(self.vx, self.vy))


@dataclass(frozen=True)
class LaneGeometry:
    """Two-lane cross-section. The origin lane is centered on y = 0."""

    lane_width: float = 3.5

    def __post_init__(self):
        _check_finite(lane_width=self.lane_width)
        if self.lane_width <= 0.0:
            raise ValueError(f"lane_width must be > 0, got {self.lane_width!r}")

    @property
    def origin_lane_center_y(self) -> float:
        return 0.0

    @property
    def target_lane_center_y(self) -> float:
        return self.lane_width

    @property
    def boundary_y(self) -> float:
        return self.lane_width / 2.0

    @property
    def l1(self) -> float:
        """Lateral travel from the origin-lane center to the boundary."""
        return self.boundary_y - self.origin_lane_center_y

    @property
    def l2(self) -> float:
        """Lateral travel from the boundary to the target-lane center."""
        return self.target_lane_center_y - self.boundary_y

    def lane_of(self, y: float) -> int:
        """Index of the lane containing lateral position ``y`` (0 = origin)."""
        return math.floor(y / self.lane_width + 0.5)


@dataclass(frozen=True)
class TimeStep:
    dt: float = DEFAULT_DT
    tick: int = 0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if self.tick < 0:
            raise ValueError(f"tick must be >= 0, got {self.tick!r}")

    @property
    def time(self) -> float:
        return self.tick * self.dt


def displacement_under_constant_accel(v0: float, a: float, t: float) -> float:
    """Distance covered in time ``t`` from speed ``v0`` under acceleration ``a``."""
    _check_finite(v0=v0, a=a, t=t)
    if t < 0.0:
        raise ValueError(f"t must be >= 0, got {t!r}")
    return v0 * t + 0.5 * a * t * t


def step_constant_accel(state: VehicleState, ax: float, ay: float, dt: float) -> VehicleState:
    """Advance ``state`` by ``dt`` holding ``(ax, ay)`` constant.

    The update is the closed-form solution, so splitting a step into any
    number of sub-steps gives the same result up to rounding. A truck that
    brakes through standstill stops there and stays stopped for the rest of
    the step; the returned ``ax`` is the commanded value.
    """
    _check_finite(ax=ax, ay=ay, dt=dt)
    if not dt > 0.0:
        raise ValueError(f"dt must be > 0, got {dt!r}")

    vx = state.vx + ax * dt
    if vx >= 0.0:
        x = state.x + state.vx * dt + 0.5 * ax * dt * dt
    else:
        # ax < 0 here; stop at vx = 0
        x = state.x - state.vx * state.vx / (2.0 * ax)
        vx = 0.0
    vy = state.vy + ay * dt
    y = state.y + state.vy * dt + 0.5 * ay * dt * dt
    return VehicleState(x=x, y=y, vx=vx, vy=vy, ax=ax, ay=ay)
