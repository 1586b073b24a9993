"""Presets for the three classic comparative-case-study datasets.

The files themselves are not shipped. Point ``SYNTHCONTROL_DATA`` at a
directory holding ``smoking_data.csv``, ``basque_data.csv`` and
``german_reunification.csv`` in their usual distribution layout (one row per
unit and year, named unit and year columns, remaining numeric columns as
predictors).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

from synthcontrol.errors import PanelFormatError
from synthcontrol.panel import PanelData, load_panel

__all__ = ["Preset", "PRESETS", "DATA_ENV", "data_path", "load_external", "load_preset"]

DATA_ENV = "SYNTHCONTROL_DATA"


@dataclass(frozen=True)
class Preset:
    name: str
    filename: str
    unit_col: str
    time_col: str
    outcome_col: str
    treated_unit: str
    t0: int
    exclude: Tuple[str, ...] = ()


PRESETS = {
    "smoking": Preset("smoking", "smoking_data.csv", "state", "year", "cigsale", "California", 1989),
    "basque": Preset(
        "basque", "basque_data.csv", "regionname", "year", "gdpcap", "Basque Country (Pais Vasco)", 1970,
        exclude=("regionno", "Unnamed: 0"),
    ),
    "german": Preset(
        "german", "german_reunification.csv", "country", "year", "gdp", "West Germany", 1990,
        exclude=("code", "index", "Unnamed: 0"),
    ),
}


def data_path(preset: Preset, directory: Optional[str] = None) -> Path:
    root = directory or os.environ.get(DATA_ENV)
    if not root:
        raise FileNotFoundError(f"set {DATA_ENV} to the directory holding {preset.filename}")
    path = Path(root) / preset.filename
    if not path.is_file():
        raise FileNotFoundError(f"{path} not found")
    return path


def load_external(
    source,
    unit_col: str,
    time_col: str,
    outcome_col: str,
    exclude: Sequence[str] = (),
    *,
    allow_missing_covariates: bool = True,
) -> PanelData:
    """Load a CSV with arbitrary column names as a panel.

    Columns in ``exclude`` are dropped if present; every other column besides
    the unit, time and outcome columns becomes a covariate.
    """
    import pandas as pd

    df = pd.read_csv(source, dtype=str, keep_default_na=False)
    df.columns = [c.strip() for c in df.columns]
    for col in (unit_col, time_col, outcome_col):
        if col not in df.columns:
            raise PanelFormatError(f"column {col!r} not found; columns are {list(df.columns)}")
    df = df.drop(columns=[c for c in exclude if c in df.columns])
    covs = [c for c in df.columns if c not in (unit_col, time_col, outcome_col)]
    clash = [c for c in covs if c in ("unit", "time", "outcome")]
    if clash:
        raise PanelFormatError(f"covariate column(s) {clash} clash with the long-format header")
    out = df[[unit_col, time_col, outcome_col] + covs]
    out.columns = ["unit", "time", "outcome"] + covs
    buf = io.StringIO()
    out.to_csv(buf, index=False)
    buf.seek(0)
    return load_panel(buf, outcome_name=outcome_col, allow_missing_covariates=allow_missing_covariates)


def load_preset(name: str, directory: Optional[str] = None) -> Tuple[PanelData, Preset]:
    preset = PRESETS[name]
    panel = load_external(
        data_path(preset, directory), preset.unit_col, preset.time_col, preset.outcome_col, preset.exclude
    )
    return panel, preset
