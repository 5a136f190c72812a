"""Recover maneuver timings and gap-acceptance parameters from trajectory logs,
and turn a corpus of them into aggressive/medium/conservative styles.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .kinematics import LaneGeometry
from .lane_change import STYLE_NAMES, StyleParameters
from .scenario import STATE_FIELDS, TrajectoryLog

STYLE_PERCENTILES = {"aggressive": 0.25, "medium": 0.50, "conservative": 0.75}
MIN_TRIALS = 4

_X, _Y, _VX, _VY, _AX, _AY = (STATE_FIELDS.index(f) for f in ("x", "y", "vx", "vy", "ax", "ay"))


class MalformedLogError(ValueError):
    pass


class InsufficientDataError(ValueError):
    def __init__(self, usable: int, required: int = MIN_TRIALS):
        super().__init__(f"need at least {required} lane-changed trials, got {usable}")
        self.usable = usable
        self.required = required


@dataclass(frozen=True)
class DetectionThresholds:
    """Lateral-speed and position tolerances for locating t1 and t3.

    The onset (offset) is where |vy| crosses ``v_lat_on`` (``v_lat_off``);
    the reported timing extrapolates from there to zero lateral speed along
    the local lateral acceleration.
    """

    v_lat_on: float = 0.05  # m/s
    v_lat_off: float = 0.05  # m/s
    y_tol: float = 0.05  # m


@dataclass(frozen=True)
class ManeuverTimings:
    t1: float
    t2: float
    t3: float


@dataclass(frozen=True)
class IdentifiedParameters:
    trial_id: str
    lane_changed: bool
    t1: float | None = None
    t2: float | None = None
    t3: float | None = None
    d1_at_t2: float | None = None
    d2_at_t3: float | None = None
    d3_at_t3: float | None = None
    dt12: float | None = None
    dt13: float | None = None
    mean_ax: float | None = None
    accepted_gap: float | None = None  # C3 front to C2 rear at t3

    @property
    def distances(self) -> tuple[float | None, float | None, float | None]:
        return (self.d1_at_t2, self.d2_at_t3, self.d3_at_t3)

    @property
    def usable(self) -> bool:
        return self.lane_changed and None not in self.distances

    def to_dict(self) -> dict:
        return asdict(self)


RECORD_FIELDS = tuple(IdentifiedParameters.__dataclass_fields__)


def _check_log(log: TrajectoryLog) -> None:
    t = log.times
    if t.ndim != 1 or len(t) < 2:
        raise MalformedLogError("log must contain at least two samples")
    if not np.all(np.diff(t) > 0.0):
        raise MalformedLogError("log timestamps are not strictly increasing")
    if log.states.shape[:2] != (len(t), len(log.vehicle_ids)):
        raise MalformedLogError(f"state array shape {log.states.shape} does not match the timestamps")


def detect_timings(
    log: TrajectoryLog,
    geometry: LaneGeometry | None = None,
    vehicle_id: str | None = None,
    thresholds: DetectionThresholds = DetectionThresholds(),
) -> ManeuverTimings | None:
    """Locate maneuver start, boundary crossing and completion of one truck.

    Returns ``None`` when the truck's CG never crosses the lane boundary.
    """
    _check_log(log)
    geometry = geometry or log.geometry()
    vid = vehicle_id or log.automated_id
    t = log.times
    s = log.states[:, log.index(vid)]
    y, vy, ay = s[:, _Y], s[:, _VY], s[:, _AY]
    b = geometry.boundary_y

    above = np.nonzero((y[:-1] < b) & (y[1:] >= b))[0]
    if len(above) == 0:
        return None
    j = int(above[0]) + 1
    t2 = t[j - 1] + _crossing_offset(y[j - 1], vy[j - 1], ay[j - 1], y[j], b, t[j] - t[j - 1])

    # onset: last sample before t2 still at or below the lateral-speed threshold
    v_on = thresholds.v_lat_on
    speed = np.abs(vy)
    quiet = np.nonzero(speed[:j] <= v_on)[0]
    if len(quiet) == 0:
        t1 = float(t[0])
    else:
        i = int(quiet[-1])
        if i + 1 >= len(t):
            raise MalformedLogError("lateral motion starts at the last sample")
        h = t[i + 1] - t[i]
        rise = speed[i + 1] - speed[i]
        t_on = t[i] + (v_on - speed[i]) / rise * h if rise > 0.0 else t[i]
        slope = rise / h
        t1 = t_on - v_on / slope if slope > 0.0 else t_on
        t1 = float(min(max(t1, t[0]), t_on))

    # completion: first sample after t2 near the lane center and laterally quiet
    yc = geometry.target_lane_center_y
    v_off = thresholds.v_lat_off
    settled = np.nonzero((np.abs(y[j:] - yc) <= thresholds.y_tol) & (speed[j:] <= v_off))[0]
    if len(settled) == 0:
        raise MalformedLogError(f"{vid} crosses the lane boundary but never settles in the target lane")
    m = j + int(settled[0])
    h = t[m] - t[m - 1]
    fall = speed[m - 1] - speed[m]
    if speed[m - 1] > v_off and fall > 0.0:
        t_off = t[m - 1] + (speed[m - 1] - v_off) / fall * h
        t3 = t_off + v_off / (fall / h)
    elif fall > 0.0:
        t3 = t[m] + speed[m] / (fall / h)
    else:
        t3 = t[m]
    stopped = np.nonzero(speed[m:] <= 1e-9)[0]
    if len(stopped):
        t3 = min(t3, t[m + int(stopped[0])])
    return ManeuverTimings(float(t1), float(t2), float(t3))


def _crossing_offset(y0, vy0, ay0, y1, b, h):
    """Time after the sample (y0, vy0, ay0) at which y reaches ``b``.

    Uses the sample's own constant-acceleration motion when it reaches ``b``
    within the step, linear interpolation otherwise.
    """
    dy = b - y0
    if ay0 != 0.0:
        disc = vy0 * vy0 + 2.0 * ay0 * dy
        if disc >= 0.0:
            root = math.sqrt(disc)
            # numerically stable form of (-vy0 + sqrt(disc)) / ay0
            tau = 2.0 * dy / (vy0 + root) if vy0 + root > 0.0 else (-vy0 + root) / ay0
            if 0.0 <= tau <= h:
                return tau
    elif vy0 > 0.0 and dy / vy0 <= h:
        return dy / vy0
    return dy / (y1 - y0) * h


def _sample_index(t: np.ndarray, time: float) -> int:
    if time < t[0] or time > t[-1]:
        raise MalformedLogError(f"time {time} outside log range [{t[0]}, {t[-1]}]")
    k = int(np.searchsorted(t, time, side="right")) - 1
    return min(k, len(t) - 2)


def _interp_state(log: TrajectoryLog, vi: int, time: float) -> tuple[float, float, float]:
    """(x, y, vx) of vehicle column ``vi`` at ``time``.

    x uses cubic Hermite interpolation with vx as the derivative, which is
    exact under constant acceleration within the sample interval.
    """
    t = log.times
    k = _sample_index(t, time)
    h = t[k + 1] - t[k]
    u = (time - t[k]) / h
    a, b = log.states[k, vi], log.states[k + 1, vi]
    h00 = (1 + 2 * u) * (1 - u) ** 2
    h10 = u * (1 - u) ** 2
    h01 = u * u * (3 - 2 * u)
    h11 = u * u * (u - 1)
    x = h00 * a[_X] + h10 * h * a[_VX] + h01 * b[_X] + h11 * h * b[_VX]
    y = a[_Y] + u * (b[_Y] - a[_Y])
    vx = a[_VX] + u * (b[_VX] - a[_VX])
    return float(x), float(y), float(vx)


def _neighbor(log: TrajectoryLog, ego: str, time: float, lane: int, geometry: LaneGeometry, ahead: bool):
    x0, _, _ = _interp_state(log, log.index(ego), time)
    best, best_x = None, None
    for vid in log.vehicle_ids:
        if vid == ego:
            continue
        x, y, _ = _interp_state(log, log.index(vid), time)
        if geometry.lane_of(y) != lane:
            continue
        if ahead and x > x0 and (best_x is None or x < best_x):
            best, best_x = vid, x
        if not ahead and x <= x0 and (best_x is None or x > best_x):
            best, best_x = vid, x
    return best


def extract_parameters(
    log: TrajectoryLog,
    timings: ManeuverTimings,
    geometry: LaneGeometry | None = None,
    vehicle_id: str | None = None,
    body_length: float | None = None,
    trial_id: str | None = None,
) -> IdentifiedParameters:
    """Measured gaps at the maneuver timings and the mean longitudinal acceleration.

    C1 is the nearest origin-lane truck ahead at t1; C2 and C3 are the
    nearest target-lane trucks ahead and behind at t3. All gaps are
    bumper-to-bumper.
    """
    _check_log(log)
    geometry = geometry or log.geometry()
    ego = vehicle_id or log.automated_id
    L = log.body_length() if body_length is None else body_length
    t1, t2, t3 = timings.t1, timings.t2, timings.t3
    for name, value in (("t1", t1), ("t2", t2), ("t3", t3)):
        if not log.times[0] <= value <= log.times[-1]:
            raise MalformedLogError(f"{name}={value} outside log range")
    if not t1 < t2 < t3:
        raise MalformedLogError(f"timings out of order: {timings}")
    ei = log.index(ego)
    _, y_t1, vx_t1 = _interp_state(log, ei, t1)
    x_t2, _, _ = _interp_state(log, ei, t2)
    x_t3, y_t3, vx_t3 = _interp_state(log, ei, t3)
    origin, target = geometry.lane_of(y_t1), geometry.lane_of(y_t3)

    def gap(front: str | None, time: float, x_ego: float, ego_is_rear: bool) -> float | None:
        if front is None:
            return None
        x_other = _interp_state(log, log.index(front), time)[0]
        return (x_other - x_ego - L) if ego_is_rear else (x_ego - x_other - L)

    c1 = _neighbor(log, ego, t1, origin, geometry, ahead=True)
    c2 = _neighbor(log, ego, t3, target, geometry, ahead=True)
    c3 = _neighbor(log, ego, t3, target, geometry, ahead=False)
    d1 = gap(c1, t2, x_t2, True)
    d2 = gap(c2, t3, x_t3, True)
    d3 = gap(c3, t3, x_t3, False)
    accepted = d2 + d3 + L if d2 is not None and d3 is not None else None
    return IdentifiedParameters(
        trial_id=trial_id if trial_id is not None else str(log.metadata.get("label", "")),
        lane_changed=True,
        t1=t1, t2=t2, t3=t3,
        d1_at_t2=d1, d2_at_t3=d2, d3_at_t3=d3,
        dt12=t2 - t1, dt13=t3 - t1,
        mean_ax=(vx_t3 - vx_t1) / (t3 - t1),
        accepted_gap=accepted,
    )


def identify(log: TrajectoryLog, trial_id: str | None = None,
             thresholds: DetectionThresholds = DetectionThresholds()) -> IdentifiedParameters:
    """detect_timings + extract_parameters, with a 'no maneuver' record when nothing crosses."""
    label = trial_id if trial_id is not None else str(log.metadata.get("label", ""))
    timings = detect_timings(log, thresholds=thresholds)
    if timings is None:
        return IdentifiedParameters(trial_id=label, lane_changed=False)
    return extract_parameters(log, timings, trial_id=label)


def percentile(values: Iterable[float], p: float) -> float:
    """Inclusive linear-interpolation quantile.

    The k-th smallest of n values sits at position k/(n-1); ``p`` between two
    positions interpolates linearly between their values.
    """
    data = sorted(values)
    if not data:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p!r}")
    n = len(data)
    if n == 1:
        return float(data[0])
    pos = p * (n - 1)
    lo = min(int(math.floor(pos)), n - 2)
    frac = pos - lo
    return float(data[lo] + frac * (data[lo + 1] - data[lo]))


@dataclass(frozen=True)
class StyleTable:
    aggressive: StyleParameters
    medium: StyleParameters
    conservative: StyleParameters
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for i in range(3):
            a, m, c = (s.thresholds[i] for s in self.styles())
            if not a <= m <= c:
                raise ValueError(f"threshold s{i + 1} not ordered aggressive <= medium <= conservative: {a}, {m}, {c}")

    def styles(self) -> tuple[StyleParameters, StyleParameters, StyleParameters]:
        return (self.aggressive, self.medium, self.conservative)

    def __getitem__(self, name: str) -> StyleParameters:
        if name not in STYLE_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {
            "styles": {s.name: s.to_dict() for s in self.styles()},
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StyleTable":
        styles = data.get("styles", {})
        missing = [n for n in STYLE_NAMES if n not in styles]
        if missing:
            raise ValueError(f"style table is missing: {', '.join(missing)}")
        return cls(*(StyleParameters.from_dict(styles[n]) for n in STYLE_NAMES),
                   provenance=dict(data.get("provenance", {})))


def build_style_table(
    corpus: Sequence[IdentifiedParameters],
    geometry: LaneGeometry = LaneGeometry(),
    kinematics: StyleParameters | None = None,
    source: str = "",
) -> StyleTable:
    """Percentile styles from a corpus of identified trials.

    Thresholds are the 25th/50th/75th percentiles of the measured D1, D2,
    D3. The three styles share one kinematic profile: by default the corpus
    means of dt12, dt13 and mean_ax, with lateral accelerations re-derived
    from the lane geometry; ``kinematics`` overrides them with a given
    style's durations and ax.
    """
    usable = [r for r in corpus if r.usable]
    if len(usable) < MIN_TRIALS:
        raise InsufficientDataError(len(usable))
    if kinematics is None:
        n = len(usable)
        dt12 = math.fsum(r.dt12 for r in usable) / n
        dt13 = math.fsum(r.dt13 for r in usable) / n
        ax_lc = math.fsum(r.mean_ax for r in usable) / n
    else:
        dt12, dt13, ax_lc = kinematics.dt12, kinematics.dt13, kinematics.ax_lc
    styles = []
    for name in STYLE_NAMES:
        p = STYLE_PERCENTILES[name]
        s = [percentile((r.distances[i] for r in usable), p) for i in range(3)]
        styles.append(StyleParameters.from_durations(name, *s, ax_lc, dt12, dt13, geometry))
    provenance = {
        "trials": len(corpus),
        "usable_trials": len(usable),
        "percentiles": dict(STYLE_PERCENTILES),
        "quantile_method": "inclusive linear interpolation",
        "source": source,
    }
    return StyleTable(*styles, provenance=provenance)


def nominal_gap(record: IdentifiedParameters, resolution: float = 10.0) -> float | None:
    """Accepted gap rounded to the layout grid (the 50/60/70 m groups)."""
    if record.accepted_gap is None:
        return None
    return round(record.accepted_gap / resolution) * resolution


def build_style_tables_by_gap(
    corpus: Sequence[IdentifiedParameters],
    geometry: LaneGeometry = LaneGeometry(),
    kinematics: StyleParameters | None = None,
    source: str = "",
) -> dict[float, StyleTable]:
    """One table per accepted-gap group; groups with too few trials are skipped."""
    groups: dict[float, list[IdentifiedParameters]] = {}
    for r in corpus:
        key = nominal_gap(r)
        if r.usable and key is not None:
            groups.setdefault(key, []).append(r)
    tables = {}
    for key in sorted(groups):
        if len(groups[key]) >= MIN_TRIALS:
            tables[key] = build_style_table(groups[key], geometry, kinematics, f"{source} gap={key:g}")
    return tables
