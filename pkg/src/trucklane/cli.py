"""``trucklane`` command line: run, identify, classify, suite.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 collision or
other fatal simulation outcome.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .identification import (
    InsufficientDataError,
    MalformedLogError,
    build_style_table,
    build_style_tables_by_gap,
    identify,
)
from .formats import (
    FORMAT_VERSION,
    atomic_write_text,
    build_report,
    default_style_table,
    dump_json,
    format_log,
    format_records,
    format_report,
    format_series,
    is_log_file,
    is_records_file,
    load_config,
    parse_records,
    read_log,
    read_style_table,
    resolve_style,
    style_table_document,
)
from .lane_change import STYLE_NAMES, StyleError
from .scenario import (
    DESIGN_CONDITIONS,
    EVALUATION_GAPS,
    ConfigError,
    ScenarioConfig,
    build_design_condition,
    build_evaluation_trial,
    matched_scenario_a,
    run,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FATAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(message: str) -> None:
    print(f"trucklane: {message}", file=sys.stderr)


def _file_err(path, exc: Exception) -> None:
    message = str(exc)
    _err(message if message.startswith(str(path)) else f"{path}: {message}")


# ---------------------------------------------------------------- run


def _run_config(args) -> ScenarioConfig:
    table = read_style_table(Path(args.styles)) if args.styles else None
    if args.config:
        cfg = load_config(Path(args.config), table, style_override=args.style)
    else:
        style = resolve_style(args.style or "medium", table)
        if args.design_cond is not None:
            cfg = build_design_condition(args.design_cond, style)
        elif args.eval is not None:
            cfg = build_evaluation_trial(args.eval, style, args.trial)
        else:
            raise ConfigError("choose --design-cond, --eval or --config")
    if args.smooth:
        cfg = replace(cfg, smooth_profile=True)
    return cfg


def run_outputs(cfg: ScenarioConfig) -> tuple[dict[str, str], bool]:
    """Rendered files for one run, keyed by file name, and the fatal flag."""
    log = run(cfg)
    stem = cfg.label or "run"
    return {
        f"{stem}.log.csv": format_log(log),
        f"{stem}.report.json": format_report(build_report(log)),
        f"{stem}.series.csv": format_series(log),
    }, log.fatal


def cmd_run(args) -> int:
    cfg = _run_config(args)
    files, fatal = run_outputs(cfg)
    out = Path(args.out)
    for name, text in files.items():
        atomic_write_text(out / name, text)
    for name in files:
        print(out / name)
    if fatal:
        _err(f"{cfg.label}: collision, see {out / next(iter(files))}")
        return EXIT_FATAL
    return EXIT_OK


# ---------------------------------------------------------------- identify / classify


def cmd_identify(args) -> int:
    records, failed = [], 0
    for path in args.logs:
        try:
            records.append(identify(read_log(Path(path))))
        except (MalformedLogError, KeyError) as exc:
            failed += 1
            _file_err(path, exc)
    text = format_records(records)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_DATA if failed else EXIT_OK


def _collect_records(inputs: list[str]):
    """Records from record files, log files, or directories of logs."""
    records, failed = [], 0
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            files = sorted(p for p in path.rglob("*") if p.is_file() and is_log_file(p))
        else:
            files = [path]
        for f in files:
            try:
                if is_records_file(f):
                    records.extend(parse_records(f.read_text(encoding="utf-8"), str(f)))
                else:
                    records.append(identify(read_log(f)))
            except (MalformedLogError, KeyError, OSError) as exc:
                failed += 1
                _file_err(f, exc)
    return records, failed


def cmd_classify(args) -> int:
    records, failed = _collect_records(args.inputs)
    if failed:
        return EXIT_DATA
    try:
        table = build_style_table(records, source=args.source)
    except InsufficientDataError as exc:
        _err(str(exc))
        return EXIT_DATA
    except StyleError as exc:
        _err(f"cannot form styles: {exc}")
        return EXIT_DATA
    doc = style_table_document(table)
    if args.by_gap:
        doc["by_gap"] = {f"{gap:g}": t.to_dict() for gap, t in build_style_tables_by_gap(records, source=args.source).items()}
    text = dump_json(doc)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- suite


@dataclass(frozen=True)
class SuiteCell:
    group: str  # "design", "A" or "B"
    style: str
    condition: int  # design condition, or trial index for B
    config: ScenarioConfig


def suite_cells(table) -> list[SuiteCell]:
    cells = []
    for n in DESIGN_CONDITIONS:
        for name in STYLE_NAMES:
            cells.append(SuiteCell("design", name, n, build_design_condition(n, table[name])))
    for name in STYLE_NAMES:
        cells.append(SuiteCell("A", name, 1, build_evaluation_trial("A", table[name])))
    for name in STYLE_NAMES:
        for trial in range(1, len(EVALUATION_GAPS) + 1):
            cells.append(SuiteCell("B", name, trial, build_evaluation_trial("B", table[name], trial)))
    return cells


def run_cell(cell: SuiteCell, with_log: bool = False) -> dict:
    """Run one suite cell; scenario B cells are also checked against their
    scenario A twin. Never raises for simulation outcomes."""
    log = run(cell.config)
    report = build_report(log)
    result = {"report": format_report(report), "summary": _summary_row(cell, report)}
    if with_log:
        result["log"] = format_log(log)
    if cell.group == "B":
        twin = run(matched_scenario_a(cell.config))
        result["summary"]["c0_matches_scenario_a"] = _same_c0(log, twin)
    return result


def _same_c0(a, b) -> bool:
    ia, ib = a.index(a.automated_id), b.index(b.automated_id)
    return len(a.times) == len(b.times) and bool((a.times == b.times).all()) and bool(
        (a.states[:, ia] == b.states[:, ib]).all())


def _summary_row(cell: SuiteCell, report) -> dict:
    r = report.record
    return {
        "label": cell.config.label,
        "group": cell.group,
        "style": cell.style,
        "condition": cell.condition,
        "gaps": list(cell.config.gaps),
        "lane_changed": r.lane_changed,
        "fatal": report.fatal,
        "end_reason": report.end_reason,
        "d1_at_t2": r.d1_at_t2,
        "d2_at_t3": r.d2_at_t3,
        "d3_at_t3": r.d3_at_t3,
        "accepted_gap": r.accepted_gap,
        "min_lead_gap": report.min_lead_gap,
    }


def _run_cell_star(payload):
    return run_cell(*payload)


def run_suite(table, jobs: int = 1, with_logs: bool = False) -> tuple[list[SuiteCell], list[dict]]:
    cells = suite_cells(table)
    payloads = [(c, with_logs) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_star, payloads))
    else:
        results = [run_cell(*p) for p in payloads]
    return cells, results


def _summary_csv(rows: list[dict]) -> str:
    cols = ["label", "group", "style", "condition", "lane_changed", "fatal", "end_reason",
            "d1_at_t2", "d2_at_t3", "d3_at_t3", "accepted_gap", "min_lead_gap", "c0_matches_scenario_a"]
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            cells.append("" if v is None else ("true" if v is True else "false" if v is False else repr(v) if isinstance(v, float) else str(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def cmd_suite(args) -> int:
    table = read_style_table(Path(args.styles)) if args.styles else default_style_table()
    cells, results = run_suite(table, args.jobs, args.logs)
    out = Path(args.out)
    rows = []
    for cell, res in zip(cells, results):
        stem = cell.config.label
        atomic_write_text(out / "cells" / f"{stem}.report.json", res["report"])
        if "log" in res:
            atomic_write_text(out / "cells" / f"{stem}.log.csv", res["log"])
        rows.append(res["summary"])
    summary = {
        "format_version": FORMAT_VERSION,
        "note": "one deterministic run per cell; repeating a cell reproduces it exactly",
        "styles": style_table_document(table),
        "cells": rows,
    }
    atomic_write_text(out / "summary.json", dump_json(summary))
    atomic_write_text(out / "summary.csv", _summary_csv(rows))
    fatal = [r["label"] for r in rows if r["fatal"]]
    for label in fatal:
        _err(f"{label}: collision")
    print(out / "summary.csv")
    return EXIT_FATAL if fatal else EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trucklane", description="Gap-acceptance lane changes for trucks: simulate, identify, classify.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one scenario and write log, report and series files")
    sel = p.add_mutually_exclusive_group()
    sel.add_argument("--design-cond", type=int, choices=sorted(DESIGN_CONDITIONS), help="design condition 1-6")
    sel.add_argument("--eval", choices=["A", "B"], type=str.upper, help="evaluation scenario")
    sel.add_argument("--config", help="TOML scenario config")
    p.add_argument("--trial", type=int, help="scenario B trial index 1-3")
    p.add_argument("--style", help="style name (aggressive/medium/conservative) or style file")
    p.add_argument("--styles", help="style table used to resolve style names")
    p.add_argument("--smooth", action="store_true", help="use the continuous lateral-speed profile")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("identify", help="extract maneuver parameters from logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", help="records CSV (default: stdout)")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("classify", help="build a style table from records or logs")
    p.add_argument("inputs", nargs="+", help="records CSV files, log files or directories of logs")
    p.add_argument("--out", help="style table JSON (default: stdout)")
    p.add_argument("--by-gap", action="store_true", help="also emit one table per accepted-gap group")
    p.add_argument("--source", default="", help="free-text corpus description for the provenance block")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("suite", help="run every design and evaluation cell")
    p.add_argument("--styles", help="style table (default: shipped or $TRUCKLANE_STYLE_PATH)")
    p.add_argument("--out", default="suite-out", help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--logs", action="store_true", help="also write every cell's trajectory log")
    p.set_defaults(func=cmd_suite)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already printed
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if args.command == "run" and args.trial is not None and args.eval != "B":
        _err("--trial only applies to --eval B")
        return EXIT_USAGE
    if args.command == "suite" and args.jobs < 1:
        _err("--jobs must be >= 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, StyleError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except (MalformedLogError, InsufficientDataError) as exc:
        _err(str(exc))
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
