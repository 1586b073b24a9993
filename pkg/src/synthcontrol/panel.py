"""Balanced panel ingestion and predictor-matrix construction.

A panel holds one outcome and any number of covariates for ``J + 1`` units
over ``T`` ordered time points. The long CSV layout is::

    unit,time,outcome,<covariate...>

Predictor matrices average each variable (outcome first, then covariates in
column order) over a window of pre-treatment periods, either in levels or in
first differences.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

if TYPE_CHECKING:
    import pandas as pd

from synthcontrol.errors import (
    DuplicateCell,
    EmptyWindow,
    InvalidDesign,
    MissingCell,
    NonNumericValue,
    PanelFormatError,
    SeriesTooShort,
    WindowTooShortForDifferencing,
)

__all__ = [
    "PanelData",
    "StudyDesign",
    "PredictorMatrices",
    "load_panel",
    "write_panel",
    "build_predictor_matrices",
    "first_difference",
]

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}
_REQUIRED = ("unit", "time", "outcome")


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PanelData:
    """Balanced panel: ``outcomes`` and each covariate are ``(n_units, n_times)``.

    Covariate matrices may contain NaN only when the panel was loaded with
    ``allow_missing_covariates=True``; outcomes never do.
    """

    unit_ids: Tuple[str, ...]
    time_points: np.ndarray
    outcomes: np.ndarray
    covariates: Dict[str, np.ndarray] = field(default_factory=dict)
    outcome_name: str = "outcome"

    def __post_init__(self):
        units = tuple(str(u) for u in self.unit_ids)
        if len(set(units)) != len(units):
            raise PanelFormatError("unit_ids must be unique")
        times = np.asarray(self.time_points)
        if times.ndim != 1 or times.size == 0:
            raise PanelFormatError("time_points must be a non-empty 1-D sequence")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise PanelFormatError("time_points must be strictly increasing")
        times = _frozen(times, dtype=times.dtype if times.dtype.kind in "iu" else np.float64)
        Y = _frozen(self.outcomes)
        shape = (len(units), times.size)
        if Y.shape != shape:
            raise PanelFormatError(f"outcomes has shape {Y.shape}, expected {shape}")
        if not np.all(np.isfinite(Y)):
            raise MissingCell("outcomes contain non-finite values")
        covs = {}
        for name, mat in self.covariates.items():
            if name == self.outcome_name:
                raise PanelFormatError(f"covariate name {name!r} clashes with the outcome")
            m = _frozen(mat)
            if m.shape != shape:
                raise PanelFormatError(f"covariate {name!r} has shape {m.shape}, expected {shape}")
            covs[str(name)] = m
        object.__setattr__(self, "unit_ids", units)
        object.__setattr__(self, "time_points", times)
        object.__setattr__(self, "outcomes", Y)
        object.__setattr__(self, "covariates", covs)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_times(self) -> int:
        return int(self.time_points.size)

    @property
    def variable_names(self) -> Tuple[str, ...]:
        return (self.outcome_name,) + tuple(self.covariates)

    @property
    def k(self) -> int:
        return 1 + len(self.covariates)

    def variable(self, name: str) -> np.ndarray:
        if name == self.outcome_name:
            return self.outcomes
        return self.covariates[name]

    def unit_index(self, unit) -> int:
        try:
            return self.unit_ids.index(str(unit))
        except ValueError:
            raise InvalidDesign(f"unit {unit!r} is not in the panel") from None

    def time_index(self, t) -> int:
        hits = np.flatnonzero(self.time_points == t)
        if hits.size == 0:
            raise InvalidDesign(f"time {t!r} is not one of the panel's time points")
        return int(hits[0])

    def subset(self, units: Iterable) -> "PanelData":
        """Panel restricted to ``units`` (in the given order)."""
        idx = [self.unit_index(u) for u in units]
        return PanelData(
            unit_ids=tuple(self.unit_ids[i] for i in idx),
            time_points=self.time_points,
            outcomes=self.outcomes[idx],
            covariates={n: m[idx] for n, m in self.covariates.items()},
            outcome_name=self.outcome_name,
        )

    def drop_units(self, units: Iterable) -> "PanelData":
        drop = {str(u) for u in units}
        return self.subset([u for u in self.unit_ids if u not in drop])

    def truncate(self, stop_time) -> "PanelData":
        """Panel restricted to time points strictly before ``stop_time``."""
        keep = self.time_points < stop_time
        return PanelData(
            unit_ids=self.unit_ids,
            time_points=self.time_points[keep],
            outcomes=self.outcomes[:, keep],
            covariates={n: m[:, keep] for n, m in self.covariates.items()},
            outcome_name=self.outcome_name,
        )

    def with_outcome_row(self, unit, values) -> "PanelData":
        """Copy of the panel with one unit's outcome series replaced."""
        Y = np.array(self.outcomes)
        Y[self.unit_index(unit)] = values
        return PanelData(self.unit_ids, self.time_points, Y, self.covariates, self.outcome_name)

    def to_frame(self) -> pd.DataFrame:
        import pandas as pd

        n, T = self.outcomes.shape
        data = {
            "unit": np.repeat(np.array(self.unit_ids, dtype=object), T),
            "time": np.tile(self.time_points, n),
            "outcome": self.outcomes.ravel(),
        }
        for name, m in self.covariates.items():
            data[name] = m.ravel()
        return pd.DataFrame(data)

    def __eq__(self, other):
        if not isinstance(other, PanelData):
            return NotImplemented
        return (
            self.unit_ids == other.unit_ids
            and self.outcome_name == other.outcome_name
            and np.array_equal(self.time_points, other.time_points)
            and np.array_equal(self.outcomes, other.outcomes)
            and list(self.covariates) == list(other.covariates)
            and all(
                np.array_equal(self.covariates[n], other.covariates[n], equal_nan=True)
                for n in self.covariates
            )
        )

    __hash__ = None


def _to_float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(text)
    return value


def _parse_numeric(raw: pd.Series, column: str, units: pd.Series, times: pd.Series) -> np.ndarray:
    # float() rounds correctly; pandas' fast converter can be off by an ulp
    text = raw.str.strip().tolist()
    out = np.empty(len(text))
    for i, cell in enumerate(text):
        if cell.lower() in _MISSING_TOKENS:
            out[i] = np.nan
            continue
        try:
            out[i] = _to_float(cell)
        except ValueError:
            raise NonNumericValue(
                f"non-numeric value {raw.iloc[i]!r} in column {column!r} "
                f"(unit={units.iloc[i]!r}, time={times.iloc[i]!r})"
            ) from None
    return out


def load_panel(
    source: Union[str, os.PathLike, TextIO],
    *,
    outcome_name: str = "outcome",
    allow_missing_covariates: bool = False,
) -> PanelData:
    """Read a long-format CSV into a balanced :class:`PanelData`.

    Parameters
    ----------
    source : path or text stream
        Comma-separated text with header ``unit,time,outcome,<covariates...>``.
    outcome_name : str
        Display name for the outcome variable (e.g. ``"cigsale"``).
    allow_missing_covariates : bool
        Accept empty covariate cells (stored as NaN and skipped when averaging).
        Unit/time combinations must still all be present.

    Raises
    ------
    MissingCell, DuplicateCell, NonNumericValue
    """
    import pandas as pd  # deferred: simulation-only runs never need it

    df = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    absent = [c for c in _REQUIRED if c not in df.columns]
    if absent:
        raise PanelFormatError(f"missing required column(s): {', '.join(absent)}")
    if len(df) == 0:
        raise PanelFormatError("panel has no rows")
    cov_names = [c for c in df.columns if c not in _REQUIRED]
    if len(set(cov_names)) != len(cov_names):
        raise PanelFormatError("duplicate covariate column names")

    units = df["unit"].str.strip()
    raw_time = df["time"]
    time_vals = _parse_numeric(raw_time, "time", units, raw_time)
    if np.isnan(time_vals).any():
        i = int(np.flatnonzero(np.isnan(time_vals))[0])
        raise MissingCell(f"empty time label for unit={units.iloc[i]!r}")
    integral = np.all(time_vals == np.round(time_vals))
    times = time_vals.astype(np.int64) if integral else time_vals

    key = pd.DataFrame({"unit": units, "time": times})
    dup = key.duplicated(keep=False)
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise DuplicateCell(f"duplicate row for unit={units.iloc[i]!r}, time={times[i].item()!r}")

    unit_order = list(dict.fromkeys(units))
    time_order = np.unique(times)
    u_pos = {u: i for i, u in enumerate(unit_order)}
    t_pos = {t: i for i, t in enumerate(time_order.tolist())}
    rows = np.fromiter((u_pos[u] for u in units), dtype=np.int64, count=len(units))
    cols = np.fromiter((t_pos[t] for t in times.tolist()), dtype=np.int64, count=len(units))

    shape = (len(unit_order), time_order.size)
    present = np.zeros(shape, dtype=bool)
    present[rows, cols] = True
    if not present.all():
        r, c = np.argwhere(~present)[0]
        raise MissingCell(f"no row for unit={unit_order[r]!r}, time={time_order[c].item()!r}")

    def to_matrix(column: str, allow_nan: bool) -> np.ndarray:
        vals = _parse_numeric(df[column], column, units, raw_time)
        if not allow_nan and np.isnan(vals).any():
            i = int(np.flatnonzero(np.isnan(vals))[0])
            raise MissingCell(
                f"empty value in column {column!r} (unit={units.iloc[i]!r}, time={times[i].item()!r})"
            )
        mat = np.empty(shape)
        mat[rows, cols] = vals
        return mat

    Y = to_matrix("outcome", False)
    covs = {c: to_matrix(c, allow_missing_covariates) for c in cov_names}
    return PanelData(tuple(unit_order), time_order, Y, covs, outcome_name)


def write_panel(panel: PanelData, dest: Union[str, os.PathLike, TextIO, None] = None) -> Optional[str]:
    """Write ``panel`` in long CSV format. Returns the text when ``dest`` is None."""
    frame = panel.to_frame()
    buf = io.StringIO()
    frame.to_csv(buf, index=False, float_format="%.17g", lineterminator="\n")
    text = buf.getvalue()
    if dest is None:
        return text
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return None


@dataclass(frozen=True)
class StudyDesign:
    """Treated unit, intervention time and the training/validation split.

    The validation window is the ``valid_len`` periods directly preceding
    ``t0``; the training window is the ``train_len`` periods before that.
    Periods with ``time >= t0`` are post-treatment.
    """

    treated_unit: str
    t0: float
    train_len: int
    valid_len: int

    @classmethod
    def with_default_split(cls, panel: PanelData, treated_unit, t0, valid_len: Optional[int] = None):
        """Design whose validation window is ``ceil(n_pre / 2)`` periods unless given."""
        n_pre = _count_pre(panel, t0)
        if valid_len is None:
            valid_len = math.ceil(n_pre / 2)
        design = cls(str(treated_unit), t0, n_pre - valid_len, valid_len)
        design.validate(panel)
        return design

    def n_pre(self, panel: PanelData) -> int:
        return _count_pre(panel, self.t0)

    def validate(self, panel: PanelData, *, differenced: bool = False) -> None:
        panel.unit_index(self.treated_unit)
        panel.time_index(self.t0)
        n_pre = self.n_pre(panel)
        if n_pre < 1:
            raise InvalidDesign(
                f"t0={self.t0!r} must leave at least one period strictly before the intervention"
            )
        if n_pre >= panel.n_times:
            raise InvalidDesign(f"t0={self.t0!r} must leave at least one period at or after the intervention")
        if self.train_len < 1 or self.valid_len < 1:
            raise InvalidDesign(
                f"training ({self.train_len}) and validation ({self.valid_len}) windows need at least one period each"
            )
        if self.train_len + self.valid_len != n_pre:
            raise InvalidDesign(
                f"train_len + valid_len = {self.train_len + self.valid_len} but there are {n_pre} pre-treatment periods"
            )
        if differenced and (self.train_len < 2 or self.valid_len < 2):
            raise WindowTooShortForDifferencing(
                "differenced estimators need at least two periods in both the training and validation windows"
            )
        if panel.n_units < 2:
            raise InvalidDesign("need at least one donor unit besides the treated unit")

    def train_window(self, panel: PanelData) -> slice:
        n_pre = self.n_pre(panel)
        return slice(n_pre - self.valid_len - self.train_len, n_pre - self.valid_len)

    def valid_window(self, panel: PanelData) -> slice:
        n_pre = self.n_pre(panel)
        return slice(n_pre - self.valid_len, n_pre)

    def pre_window(self, panel: PanelData) -> slice:
        return slice(0, self.n_pre(panel))

    def post_window(self, panel: PanelData) -> slice:
        return slice(self.n_pre(panel), panel.n_times)


def _count_pre(panel: PanelData, t0) -> int:
    return int(np.count_nonzero(panel.time_points < t0))


@dataclass(frozen=True, eq=False)
class PredictorMatrices:
    """Window averages of each variable for the treated unit and the donors.

    ``X1`` has length ``k``; column ``j`` of ``X0`` belongs to ``donor_ids[j]``.
    """

    X1: np.ndarray
    X0: np.ndarray
    variable_names: Tuple[str, ...]
    donor_ids: Tuple[str, ...]
    window: slice
    differenced: bool

    @property
    def k(self) -> int:
        return self.X1.size

    @property
    def J(self) -> int:
        return self.X0.shape[1]


def first_difference(series) -> np.ndarray:
    """``out[t] = series[t + 1] - series[t]``."""
    s = np.asarray(series, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise SeriesTooShort(f"first difference needs at least 2 values, got {s.size}")
    return s[1:] - s[:-1]


def _window_means(mat: np.ndarray, differenced: bool) -> Optional[np.ndarray]:
    """Per-unit mean, or mean per-period change; None when some unit lacks data.

    With gaps, the mean change is ``(last - first) / periods spanned`` over the
    observed cells, which equals the mean first difference of a complete series.
    """
    observed = ~np.isnan(mat)
    if observed.all():
        return np.diff(mat, axis=1).mean(axis=1) if differenced else mat.mean(axis=1)
    counts = observed.sum(axis=1)
    if not differenced:
        return None if np.any(counts == 0) else np.nanmean(mat, axis=1)
    if np.any(counts < 2):
        return None
    out = np.empty(mat.shape[0])
    for i in range(mat.shape[0]):
        idx = np.flatnonzero(observed[i])
        out[i] = (mat[i, idx[-1]] - mat[i, idx[0]]) / (idx[-1] - idx[0])
    return out


def build_predictor_matrices(
    panel: PanelData,
    design: StudyDesign,
    window: Optional[slice] = None,
    differenced: bool = False,
) -> PredictorMatrices:
    """Average every variable over ``window`` (default: the full pre-period).

    With ``differenced=True`` each entry is the mean first difference of the
    variable inside the window, i.e. ``(last - first) / (len - 1)`` for
    complete series. Missing covariate cells are skipped; a covariate with no
    observation inside the window for some unit is averaged over the whole
    pre-period instead. In differenced mode a covariate that some unit
    observes fewer than twice in the pre-period gives a row of zeros.
    """
    n_pre = design.n_pre(panel)
    if window is None:
        window = slice(0, n_pre)
    start, stop, step = window.indices(panel.n_times)
    if step != 1:
        raise InvalidDesign("windows must be contiguous")
    length = max(stop - start, 0)
    if length == 0:
        raise EmptyWindow("predictor window is empty")
    if stop > n_pre:
        raise InvalidDesign("predictor window must lie inside the pre-treatment period")
    if differenced and length < 2:
        raise WindowTooShortForDifferencing(f"differencing needs a window of at least 2 periods, got {length}")

    treated = panel.unit_index(design.treated_unit)
    donors = [i for i in range(panel.n_units) if i != treated]
    if not donors:
        raise InvalidDesign("panel has no donor units")
    rows = []
    for name in panel.variable_names:
        full = panel.variable(name)
        row = _window_means(full[:, start:stop], differenced)
        if row is None:
            # covariate unobserved throughout the window: use its whole pre-period
            row = _window_means(full[:, :n_pre], differenced)
        if row is None and differenced:
            # fewer than two observations: the change is unmeasurable, so the row is flat
            row = np.zeros(panel.n_units)
        if row is None:
            raise EmptyWindow(f"variable {name!r} has no observed pre-treatment values for some unit")
        rows.append(row)
    means = np.vstack(rows)
    X1 = _frozen(means[:, treated])
    X0 = _frozen(means[:, donors])
    return PredictorMatrices(
        X1=X1,
        X0=X0,
        variable_names=panel.variable_names,
        donor_ids=tuple(panel.unit_ids[i] for i in donors),
        window=slice(start, stop),
        differenced=differenced,
    )
