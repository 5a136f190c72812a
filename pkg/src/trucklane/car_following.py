"""ACC car following behind a single lead truck.

The braking trigger is the safe-distance relation that accounts for the
closing distance while the follower sheds its speed excess at ``a_d``. Above
the trigger the follower accelerates toward the set speed once the gap clears
the trigger by ``hysteresis``, and holds its speed in between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .kinematics import DEFAULT_DT


class CollisionError(RuntimeError):
    """Raised when a bumper-to-bumper distance becomes negative."""


@dataclass(frozen=True)
class CarFollowingConfig:
    """Follower tuning.

    Attributes:
        s1: safe-distance threshold for the gap to the lead [m].
        a_d: comfortable deceleration magnitude [m/s^2].
        a_acc: acceleration magnitude when closing toward ``v_set`` [m/s^2].
        v_set: set cruising speed [m/s].
        hysteresis: extra gap required before accelerating [m].
        lookahead: horizon of the one-step gap check [s]. With the simulator
            step as lookahead, braking starts on the tick *before* the gap
            would cross the trigger, so the gap never dips below ``s1`` by a
            tick's worth of closing. 0 gives the bare threshold rule.
    """

    s1: float = 20.0
    a_d: float = 2.0
    a_acc: float = 0.5
    v_set: float = 80.0 / 3.6
    hysteresis: float = 5.0
    lookahead: float = DEFAULT_DT

    def __post_init__(self):
        for name in ("s1", "a_d", "a_acc", "v_set"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"car_following.{name} must be > 0, got {value!r}")
        for name in ("hysteresis", "lookahead"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"car_following.{name} must be >= 0, got {value!r}")


@dataclass(frozen=True)
class FollowingObservation:
    d1_now: float  # bumper-to-bumper gap to the lead, m
    v0: float  # follower speed, m/s
    v1: float  # lead speed, m/s


def required_following_distance(v0: float, v1: float, a_d: float, s1: float) -> float:
    """Gap below which the follower must start braking at ``a_d``.

    Evaluated in expanded form, (v0^2 - v1^2)/(2 a_d) - v1 (v0 - v1)/a_d + s1,
    which equals (v0 - v1)^2/(2 a_d) + s1 and only applies while closing
    (v0 > v1). Without a speed excess the threshold is ``s1`` itself.
    """
    if not a_d > 0.0:
        raise ValueError(f"a_d must be > 0, got {a_d!r}")
    if v0 <= v1:
        return s1
    return (v0 * v0 - v1 * v1) / (2.0 * a_d) - v1 * (v0 - v1) / a_d + s1


def following_command(obs: FollowingObservation, cfg: CarFollowingConfig, dt: float | None = None) -> float:
    """Longitudinal acceleration command for one tick.

    Args:
        obs: current gap and speeds.
        cfg: follower tuning.
        dt: step the command will be held for; caps the acceleration so the
            follower does not pass ``v_set`` within the step. Defaults to
            ``cfg.lookahead`` (no cap when that is 0).

    Returns:
        ``-cfg.a_d``, ``0.0`` or a value in ``(0, cfg.a_acc]``.
    """
    if not (math.isfinite(obs.d1_now) and math.isfinite(obs.v0) and math.isfinite(obs.v1)):
        raise ValueError(f"non-finite observation: {obs!r}")
    if obs.d1_now < 0.0:
        raise CollisionError(f"negative gap to lead: {obs.d1_now!r} m")

    threshold = required_following_distance(obs.v0, obs.v1, cfg.a_d, cfg.s1)
    if obs.d1_now <= threshold:
        return -cfg.a_d
    if cfg.lookahead > 0.0:
        # coast one step at current speeds and re-check
        h = cfg.lookahead
        d_next = obs.d1_now + (obs.v1 - obs.v0) * h
        if d_next <= threshold:
            return -cfg.a_d

    if obs.d1_now > threshold + cfg.hysteresis and obs.v0 < cfg.v_set:
        step = cfg.lookahead if dt is None else dt
        if step > 0.0:
            return min(cfg.a_acc, (cfg.v_set - obs.v0) / step)
        return cfg.a_acc
    return 0.0
