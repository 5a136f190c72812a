"""On-disk formats: scenario configs, trajectory logs, identified records,
style tables, run reports and plot series.

Configs are TOML with dotted keys (``car_following.s1 = 22``); any key ending
in ``_kmh`` is a speed in km/h and is stored in m/s without the suffix.
Logs and series are comma-separated text. Style tables and reports are JSON
documents carrying a ``format_version``. Every float is written with
``repr`` so that reading a file back gives the same doubles.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .identification import (
    RECORD_FIELDS,
    IdentifiedParameters,
    MalformedLogError,
    StyleTable,
    identify,
)
from .kinematics import LaneGeometry
from .lane_change import STYLE_NAMES, StyleError, StyleParameters
from .scenario import (
    STATE_FIELDS,
    ConfigError,
    Event,
    ScenarioConfig,
    TrajectoryLog,
    build_design_condition,
    build_evaluation_trial,
    follow_config_for_style,
)

FORMAT_VERSION = 1
LOG_MAGIC = "# trucklane-log"
STYLE_PATH_ENV = "TRUCKLANE_STYLE_PATH"
DEFAULT_STYLES_FILE = "default_styles.json"
KMH_SUFFIX = "_kmh"

# terminal-state tolerances for a completed maneuver
TERMINAL_Y_TOL = 1e-3
TERMINAL_VY_TOL = 1e-3
TERMINAL_YAW_TOL = 1e-4


def _num(value: float) -> str:
    return repr(float(value))


def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------- styles


def style_table_document(table: StyleTable) -> dict:
    return {"format_version": FORMAT_VERSION, **table.to_dict()}


def _check_version(doc: Mapping, source: str) -> None:
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{source}: unsupported format_version {version!r} (expected {FORMAT_VERSION})")


def read_style_document(path: Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read style file: {exc.strerror}") from None
    if not text.strip():
        raise ConfigError(f"{path}: style file is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    _check_version(doc, str(path))
    return doc


def read_style_table(path: Path) -> StyleTable:
    doc = read_style_document(path)
    try:
        return StyleTable.from_dict(doc)
    except (StyleError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def default_style_table() -> StyleTable:
    """Style table from ``$TRUCKLANE_STYLE_PATH`` if set, else the shipped one."""
    directory = os.environ.get(STYLE_PATH_ENV)
    if directory:
        candidate = Path(directory) / DEFAULT_STYLES_FILE
        if not candidate.is_file():
            raise ConfigError(f"{STYLE_PATH_ENV}={directory}: no {DEFAULT_STYLES_FILE} there")
        return read_style_table(candidate)
    from .calibration import load_default_styles

    return load_default_styles()


def resolve_style(selector: str, table: StyleTable | None = None) -> StyleParameters:
    """A style by name (from ``table`` or the default table) or from a file.

    A style file holds either one style under ``"style"`` or a whole table,
    in which case ``path:name`` picks the entry (medium when omitted).
    """
    if selector in STYLE_NAMES:
        return (table or default_style_table())[selector]
    path, _, name = selector.partition(":") if not Path(selector).exists() else (selector, "", "")
    doc = read_style_document(Path(path))
    try:
        if "style" in doc:
            return StyleParameters.from_dict(doc["style"])
        return StyleTable.from_dict(doc)[name or "medium"]
    except KeyError as exc:
        raise ConfigError(f"{path}: no style named {exc.args[0]!r}") from None
    except (StyleError, ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def style_document(style: StyleParameters) -> dict:
    return {"format_version": FORMAT_VERSION, "style": style.to_dict()}


# ---------------------------------------------------------------- configs


def convert_kmh(data: Mapping, where: str = "") -> dict:
    """Replace every ``<name>_kmh`` key with ``<name>`` in m/s, recursively."""
    out: dict = {}
    for key, value in data.items():
        path = f"{where}{key}"
        if isinstance(value, Mapping):
            value = convert_kmh(value, path + ".")
        if key.endswith(KMH_SUFFIX):
            base = key[: -len(KMH_SUFFIX)]
            if base in data:
                raise ConfigError(f"{path}: both {base!r} and {key!r} given")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}: expected a number, got {value!r}")
            out[base] = value / 3.6
        else:
            out[key] = value
    return out


def _deep_update(base: dict, changes: Mapping, where: str = "") -> dict:
    merged = dict(base)
    for key, value in changes.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_update(merged[key], value, f"{where}{key}.")
        else:
            merged[key] = value
    return merged


SELECTOR_KEYS = ("design_condition", "evaluation", "trial", "style", "styles")


def config_from_mapping(data: Mapping, source: str = "<config>", style_table: StyleTable | None = None,
                        style_override: str | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from parsed TOML.

    Selector keys choose the base layout (``design_condition = n`` or
    ``evaluation = "A"|"B"`` with ``trial``) and the style (a name, a file
    path, or an inline table). Every other key overrides the matching
    ScenarioConfig field; nested tables merge field by field.
    """
    data = convert_kmh(data)
    overrides = {k: v for k, v in data.items() if k not in SELECTOR_KEYS}
    if "styles" in data:
        style_table = read_style_table(_relative(source, data["styles"]))
    style_spec = style_override if style_override is not None else data.get("style", "medium")
    try:
        if isinstance(style_spec, Mapping):
            fields = dict(style_spec)
            base = fields.pop("base", None)
            if base is not None:
                fields = {**resolve_style(base, style_table).to_dict(), **fields}
            style = StyleParameters.from_dict(fields)
        else:
            selector = style_spec if style_spec in STYLE_NAMES else str(_relative(source, style_spec))
            style = resolve_style(selector, style_table)

        builder_kw = {}
        if "geometry" in overrides:
            builder_kw["geometry"] = LaneGeometry(**overrides["geometry"])
        if "design_condition" in data and "evaluation" in data:
            raise ConfigError("give design_condition or evaluation, not both")
        if "evaluation" in data:
            base_cfg = build_evaluation_trial(str(data["evaluation"]), style, data.get("trial"), **builder_kw)
        elif "design_condition" in data:
            base_cfg = build_design_condition(int(data["design_condition"]), style, **builder_kw)
        else:
            base_cfg = ScenarioConfig(style=style, car_following=follow_config_for_style(style), **builder_kw)
        merged = _deep_update(base_cfg.to_dict(), overrides)
        return ScenarioConfig.from_dict(merged)
    except (ConfigError, StyleError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def _relative(source: str, value) -> Path:
    path = Path(str(value))
    if not path.is_absolute() and source not in ("", "<config>"):
        path = Path(source).parent / path
    return path


def load_config(path: Path, style_table: StyleTable | None = None,
                style_override: str | None = None) -> ScenarioConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data, str(path), style_table, style_override)


# ---------------------------------------------------------------- logs


def log_columns(vehicle_ids: Iterable[str]) -> list[str]:
    return ["time"] + [f"{vid}.{f}" for vid in vehicle_ids for f in STATE_FIELDS]


def _event_doc(e: Event) -> dict:
    return {"time": e.time, "tag": e.tag, "data": e.data}


def format_log(log: TrajectoryLog) -> str:
    """Header lines (``#``-prefixed JSON), a column row, then one row per tick."""
    buf = io.StringIO()
    buf.write(f"{LOG_MAGIC} format_version={FORMAT_VERSION}\n")
    buf.write("# metadata " + json.dumps(log.metadata, sort_keys=True) + "\n")
    buf.write("# events " + json.dumps([_event_doc(e) for e in log.events], sort_keys=True) + "\n")
    buf.write(",".join(log_columns(log.vehicle_ids)) + "\n")
    flat = log.states.reshape(len(log.times), -1)
    for t, row in zip(log.times.tolist(), flat.tolist()):
        buf.write(repr(t))
        for v in row:
            buf.write(",")
            buf.write(repr(v))
        buf.write("\n")
    return buf.getvalue()


def parse_log(text: str, source: str = "<log>") -> TrajectoryLog:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(LOG_MAGIC):
        raise MalformedLogError(f"{source}: not a trajectory log (missing {LOG_MAGIC!r} header)")
    header = lines[0][len(LOG_MAGIC):].strip()
    if header != f"format_version={FORMAT_VERSION}":
        raise MalformedLogError(f"{source}: unsupported log header {header!r}")
    try:
        if not lines[1].startswith("# metadata ") or not lines[2].startswith("# events "):
            raise MalformedLogError(f"{source}: metadata/events header lines missing")
        metadata = json.loads(lines[1][len("# metadata "):])
        events = [Event(float(e["time"]), str(e["tag"]), dict(e.get("data", {})))
                  for e in json.loads(lines[2][len("# events "):])]
        columns = lines[3].split(",")
    except (IndexError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise MalformedLogError(f"{source}: bad log header: {exc}") from None
    if columns[0] != "time" or (len(columns) - 1) % len(STATE_FIELDS):
        raise MalformedLogError(f"{source}: unexpected column layout")
    vehicle_ids = [c.split(".")[0] for c in columns[1::len(STATE_FIELDS)]]
    if columns != log_columns(vehicle_ids):
        raise MalformedLogError(f"{source}: columns are not in time,<vehicle>.{'/'.join(STATE_FIELDS)} order")
    rows = []
    for lineno, line in enumerate(lines[4:], start=5):
        parts = line.split(",")
        if len(parts) != len(columns):
            raise MalformedLogError(f"{source}:{lineno}: expected {len(columns)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise MalformedLogError(f"{source}:{lineno}: {exc}") from None
    if not rows:
        raise MalformedLogError(f"{source}: log has no samples")
    data = np.array(rows, dtype=float)
    times = data[:, 0].copy()
    if not np.all(np.diff(times) > 0.0):
        raise MalformedLogError(f"{source}: timestamps are not strictly increasing")
    states = data[:, 1:].reshape(len(rows), len(vehicle_ids), len(STATE_FIELDS))
    return TrajectoryLog(metadata=metadata, vehicle_ids=vehicle_ids, times=times, states=states, events=events)


def read_log(path: Path) -> TrajectoryLog:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedLogError(f"{path}: cannot read log: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise MalformedLogError(f"{path}: not a text file") from None
    return parse_log(text, str(path))


def is_log_file(path: Path) -> bool:
    try:
        with Path(path).open("r", encoding="utf-8") as fh:
            return fh.readline().startswith(LOG_MAGIC)
    except (OSError, UnicodeDecodeError):
        return False


# ---------------------------------------------------------------- records


def format_records(records: Iterable[IdentifiedParameters]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_FIELDS)
    for r in records:
        row = []
        for name in RECORD_FIELDS:
            value = getattr(r, name)
            if value is None:
                row.append("")
            elif isinstance(value, bool):
                row.append("true" if value else "false")
            elif isinstance(value, float):
                row.append(_num(value))
            else:
                row.append(str(value))
        writer.writerow(row)
    return buf.getvalue()


def parse_records(text: str, source: str = "<records>") -> list[IdentifiedParameters]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedLogError(f"{source}: empty records file") from None
    if tuple(header) != RECORD_FIELDS:
        raise MalformedLogError(f"{source}: unexpected record columns {header}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(RECORD_FIELDS):
            raise MalformedLogError(f"{source}:{lineno}: expected {len(RECORD_FIELDS)} fields")
        values: dict[str, Any] = {}
        try:
            for name, cell in zip(RECORD_FIELDS, row):
                if name == "trial_id":
                    values[name] = cell
                elif name == "lane_changed":
                    if cell not in ("true", "false"):
                        raise ValueError(f"lane_changed must be true/false, got {cell!r}")
                    values[name] = cell == "true"
                else:
                    values[name] = float(cell) if cell != "" else None
        except ValueError as exc:
            raise MalformedLogError(f"{source}:{lineno}: {exc}") from None
        records.append(IdentifiedParameters(**values))
    return records


def is_records_file(path: Path) -> bool:
    try:
        with Path(path).open("r", encoding="utf-8") as fh:
            return fh.readline().rstrip("\r\n") == ",".join(RECORD_FIELDS)
    except (OSError, UnicodeDecodeError):
        return False


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class RunReport:
    """Summary of one run. Every value is recomputed from the log alone."""

    label: str
    end_reason: str
    fatal: bool
    duration: float
    record: IdentifiedParameters
    min_lead_gap: float | None  # ego to the truck ahead in its current lane
    min_same_lane_gap: float | None  # any two consecutive trucks in one lane
    terminal_lateral_error: float | None
    terminal_lateral_speed: float | None
    terminal_yaw: float | None
    lateral_jump_at_t2: float | None
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "label": self.label,
            "end_reason": self.end_reason,
            "fatal": self.fatal,
            "duration": self.duration,
            "identified": self.record.to_dict(),
            "min_lead_gap": self.min_lead_gap,
            "min_same_lane_gap": self.min_same_lane_gap,
            "terminal_lateral_error": self.terminal_lateral_error,
            "terminal_lateral_speed": self.terminal_lateral_speed,
            "terminal_yaw": self.terminal_yaw,
            "lateral_jump_at_t2": self.lateral_jump_at_t2,
            "flags": dict(self.flags),
        }


def _lane_gaps(log: TrajectoryLog, geometry: LaneGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Per tick: gap from the automated truck to its leader, and the smallest
    gap between consecutive trucks sharing a lane (NaN where undefined)."""
    L = log.body_length()
    ego = log.index(log.automated_id)
    x = log.states[:, :, STATE_FIELDS.index("x")]
    y = log.states[:, :, STATE_FIELDS.index("y")]
    lanes = np.floor(y / geometry.lane_width + 0.5)
    ahead = (lanes[:, None, :] == lanes[:, :, None]) & (x[:, None, :] > x[:, :, None])
    spacing = np.where(ahead, x[:, None, :] - x[:, :, None], np.inf).min(axis=2) - L
    spacing[np.isinf(spacing)] = np.nan
    lead_gap = spacing[:, ego]
    with np.errstate(all="ignore"):
        pair_gap = np.where(np.isnan(spacing).all(axis=1), np.nan, np.nanmin(np.where(np.isnan(spacing), np.inf, spacing), axis=1))
    return lead_gap, pair_gap


def _nanmin(values: np.ndarray) -> float | None:
    finite = values[~np.isnan(values)]
    return float(finite.min()) if finite.size else None


def build_report(log: TrajectoryLog) -> RunReport:
    geometry = log.geometry()
    end = log.event("end")
    # a run that collides on its first tick has a single sample
    record = identify(log) if len(log.times) > 1 else IdentifiedParameters(str(log.metadata.get("label", "")), False)
    lead_gap, pair_gap = _lane_gaps(log, geometry)
    ego = log.index(log.automated_id)
    final = log.states[-1, ego]
    y_err = vy_end = yaw_end = jump = None
    if record.lane_changed:
        y_err = float(final[STATE_FIELDS.index("y")] - geometry.target_lane_center_y)
        vy_end = float(final[STATE_FIELDS.index("vy")])
        yaw_end = float(final[STATE_FIELDS.index("yaw")])
        y = log.series(log.automated_id, "y")
        vy = log.series(log.automated_id, "vy")
        ay = log.series(log.automated_id, "ay")
        j = int(np.searchsorted(log.times, record.t2, side="right"))
        if 0 < j < len(log.times):
            h = log.times[j] - log.times[j - 1]
            jump = float(vy[j] - vy[j - 1] - ay[j - 1] * h)
    flags = {
        "collision_free": not log.fatal,
        "gaps_nonnegative": bool(np.all(np.nan_to_num(pair_gap, nan=0.0) >= 0.0)),
    }
    if record.lane_changed:
        flags["terminal_state_ok"] = (abs(y_err) < TERMINAL_Y_TOL and abs(vy_end) < TERMINAL_VY_TOL
                                      and abs(yaw_end) < TERMINAL_YAW_TOL)
    return RunReport(
        label=str(log.metadata.get("label", "")),
        end_reason=str(end.data.get("reason", "")) if end else "",
        fatal=log.fatal,
        duration=float(log.times[-1] - log.times[0]),
        record=record,
        min_lead_gap=_nanmin(lead_gap),
        min_same_lane_gap=_nanmin(pair_gap),
        terminal_lateral_error=y_err,
        terminal_lateral_speed=vy_end,
        terminal_yaw=yaw_end,
        lateral_jump_at_t2=jump,
        flags=flags,
    )


def format_report(report: RunReport) -> str:
    return dump_json(report.to_dict())


# ---------------------------------------------------------------- series


def format_series(log: TrajectoryLog) -> str:
    """Plot-ready columns: lateral motion and gaps of the automated truck,
    then every truck's longitudinal speed. Missing values are ``nan``."""
    geometry = log.geometry()
    lead_gap, _ = _lane_gaps(log, geometry)
    ego = log.automated_id
    cols = {
        "time": log.times,
        f"{ego}.y": log.series(ego, "y"),
        f"{ego}.vy": log.series(ego, "vy"),
        f"{ego}.yaw": log.series(ego, "yaw"),
        f"{ego}.lead_gap": lead_gap,
    }
    for vid in log.vehicle_ids:
        cols[f"{vid}.vx"] = log.series(vid, "vx")
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    arrays = [np.asarray(c, dtype=float).tolist() for c in cols.values()]
    for row in zip(*arrays):
        buf.write(",".join(repr(v) for v in row) + "\n")
    return buf.getvalue()
