"""Synthetic calibration run that produces the shipped default style table.

No human trajectory data ships with this package. The default styles come
from a fixed population of twelve synthetic drivers, one per trial of the
six design conditions driven twice. Each driver uses the same lane-change
kinematics and its own gap thresholds; the resulting logs go through the
ordinary identification pipeline.

Regenerate the shipped file with ``python -m trucklane.calibration``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .kinematics import LaneGeometry
from .lane_change import StyleParameters
from .identification import IdentifiedParameters, StyleTable, build_style_table, identify
from .scenario import DESIGN_CONDITIONS, ScenarioConfig, build_design_condition, run

DEFAULT_STYLES_RESOURCE = "default_styles.json"

# shared kinematics of every synthetic driver [m/s^2]
DRIVER_AX = 0.10
DRIVER_AY12 = 0.21
DRIVER_AY23 = 0.28
REPETITIONS = 2


@dataclass(frozen=True)
class SyntheticDriver:
    name: str
    s1: float
    s2: float
    s3: float

    def style(self, geometry: LaneGeometry = LaneGeometry()) -> StyleParameters:
        return StyleParameters.from_lateral_accels(
            self.name, self.s1, self.s2, self.s3, DRIVER_AX, DRIVER_AY12, DRIVER_AY23, geometry)


def synthetic_drivers(n: int = len(DESIGN_CONDITIONS) * REPETITIONS) -> list[SyntheticDriver]:
    """Drivers with thresholds spread 1 m apart over 12 m ranges.

    Stride permutations decorrelate the three thresholds from each other
    and from the condition each driver is assigned.
    """
    return [
        SyntheticDriver(f"driver{j + 1:02d}",
                        s1=15.0 + (5 * j) % n, s2=12.0 + (7 * j) % n, s3=14.0 + (11 * j) % n)
        for j in range(n)
    ]


def calibration_configs(drivers: list[SyntheticDriver] | None = None,
                        geometry: LaneGeometry = LaneGeometry()) -> list[ScenarioConfig]:
    """Driver j drives design condition (j mod 6) + 1."""
    drivers = synthetic_drivers() if drivers is None else drivers
    n_cond = len(DESIGN_CONDITIONS)
    return [
        build_design_condition(j % n_cond + 1, d.style(geometry), geometry=geometry,
                               label=f"calib-cond{j % n_cond + 1}-{d.name}")
        for j, d in enumerate(drivers)
    ]


def run_calibration(configs: list[ScenarioConfig] | None = None) -> list[IdentifiedParameters]:
    configs = calibration_configs() if configs is None else configs
    return [identify(run(cfg)) for cfg in configs]


def calibrate(geometry: LaneGeometry = LaneGeometry()) -> StyleTable:
    corpus = run_calibration(calibration_configs(geometry=geometry))
    return build_style_table(corpus, geometry, source="synthetic calibration: 12 drivers x 1 trial, design conditions 1-6 twice")


def load_default_styles() -> StyleTable:
    text = resources.files("trucklane").joinpath(DEFAULT_STYLES_RESOURCE).read_text(encoding="utf-8")
    return StyleTable.from_dict(json.loads(text))


def default_style(name: str) -> StyleParameters:
    return load_default_styles()[name]


def main() -> None:
    from .formats import atomic_write_text, dump_json, style_table_document

    target = Path(__file__).with_name(DEFAULT_STYLES_RESOURCE)
    atomic_write_text(target, dump_json(style_table_document(calibrate())))
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
