"""The four synthetic control estimators.

* ``SC``      -- levels fit, no penalty, no offset.
* ``SC_PEN``  -- levels fit plus the pairwise-discrepancy penalty.
* ``DSC``     -- fit on mean first differences, constant offset ``alpha``.
* ``DSC_PEN`` -- differenced fit plus the penalty, with offset.

Estimation follows a train/validation protocol: importance weights ``V`` and
the penalty ``lam`` are chosen by fitting donor weights on the training window
and scoring the validation-window prediction error; weights are then refit on
the validation window with the chosen pair.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from synthcontrol.errors import EmptyValidationWindow, InvalidDesign, SynthControlError
from synthcontrol.panel import PanelData, StudyDesign, build_predictor_matrices
from synthcontrol.simplex_qp import (
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    InnerObjective,
    solve_weights,
)

__all__ = [
    "EstimatorKind",
    "SearchConfig",
    "FittedSyntheticControl",
    "DEFAULT_LAMBDA_GRID",
    "importance_candidates",
    "build_objective",
    "validation_mspe",
    "select_hyperparameters",
    "fit",
    "fit_fixed",
    "compute_alpha",
    "effect_series",
]

DEFAULT_LAMBDA_GRID = (0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
TIE_TOL = 1e-12


class EstimatorKind(str, enum.Enum):
    SC = "sc"
    SC_PEN = "sc_pen"
    DSC = "dsc"
    DSC_PEN = "dsc_pen"

    @property
    def differenced(self) -> bool:
        return self in (EstimatorKind.DSC, EstimatorKind.DSC_PEN)

    @property
    def penalized(self) -> bool:
        return self in (EstimatorKind.SC_PEN, EstimatorKind.DSC_PEN)

    @property
    def label(self) -> str:
        return {"sc": "SC", "sc_pen": "SC_pen", "dsc": "DSC", "dsc_pen": "DSC_pen"}[self.value]

    @classmethod
    def parse(cls, value) -> "EstimatorKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise SynthControlError(f"unknown estimator {value!r}; expected one of {valid}") from None


@dataclass(frozen=True)
class SearchConfig:
    """Hyperparameter search settings.

    ``lambda_grid`` is ignored by the unpenalized kinds. ``v_candidates``
    importance diagonals are drawn uniformly from the simplex with ``seed``;
    the first candidate is always the uniform diagonal.
    """

    lambda_grid: Tuple[float, ...] = DEFAULT_LAMBDA_GRID
    v_candidates: int = 200
    seed: int = 0
    tol: float = DEFAULT_TOL
    max_iters: int = DEFAULT_MAX_ITERS

    def __post_init__(self):
        grid = tuple(float(x) for x in self.lambda_grid)
        if not grid:
            raise SynthControlError("lambda_grid must not be empty")
        if any(not (x >= 0 and np.isfinite(x)) for x in grid):
            raise SynthControlError("lambda_grid entries must be finite and nonnegative")
        if list(grid) != sorted(grid):
            raise SynthControlError("lambda_grid must be sorted ascending")
        if int(self.v_candidates) < 1:
            raise SynthControlError("v_candidates must be at least 1")
        object.__setattr__(self, "lambda_grid", grid)
        object.__setattr__(self, "v_candidates", int(self.v_candidates))

    def lambdas_for(self, kind: EstimatorKind) -> Tuple[float, ...]:
        return self.lambda_grid if kind.penalized else (0.0,)


@dataclass(frozen=True, eq=False)
class FittedSyntheticControl:
    """Result of :func:`fit`. Arrays are read-only.

    ``counterfactual`` spans every time point; ``effects`` covers the
    post-treatment periods (``time >= t0``).
    """

    kind: EstimatorKind
    w: np.ndarray
    v_diag: np.ndarray
    lam: float
    alpha: float
    design: StudyDesign
    donor_ids: Tuple[str, ...]
    variable_names: Tuple[str, ...]
    time_points: np.ndarray
    treated_path: np.ndarray
    counterfactual: np.ndarray
    effects: np.ndarray
    pre_rmspe: float
    post_rmspe: float
    valid_rmspe: float
    selection_mspe: float = float("nan")

    @property
    def post_times(self) -> np.ndarray:
        return self.time_points[self.time_points >= self.design.t0]

    def weights_by_donor(self) -> dict:
        return dict(zip(self.donor_ids, self.w.tolist()))

    def to_dict(self) -> dict:
        return {
            "estimator": self.kind.value,
            "treated_unit": self.design.treated_unit,
            "t0": _scalar(self.design.t0),
            "train_len": self.design.train_len,
            "valid_len": self.design.valid_len,
            "weights": self.weights_by_donor(),
            "importance": dict(zip(self.variable_names, self.v_diag.tolist())),
            "lambda": self.lam,
            "alpha": self.alpha,
            "pre_rmspe": self.pre_rmspe,
            "post_rmspe": self.post_rmspe,
            "valid_rmspe": self.valid_rmspe,
            "selection_mspe": self.selection_mspe,
            "time": [_scalar(t) for t in self.time_points],
            "treated": self.treated_path.tolist(),
            "counterfactual": self.counterfactual.tolist(),
            "effects": dict(zip([str(_scalar(t)) for t in self.post_times], self.effects.tolist())),
        }

    def same_as(self, other: "FittedSyntheticControl") -> bool:
        """Bit-for-bit equality of every field."""
        arrays = ("w", "v_diag", "time_points", "treated_path", "counterfactual", "effects")
        scalars = ("kind", "lam", "alpha", "design", "donor_ids", "variable_names",
                   "pre_rmspe", "post_rmspe", "valid_rmspe", "selection_mspe")
        return all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays) and all(
            _same(getattr(self, s), getattr(other, s)) for s in scalars
        )


def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and np.isnan(a) and np.isnan(b):
        return True
    return a == b


def _scalar(x):
    return x.item() if hasattr(x, "item") else x


def _ro(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def importance_candidates(k: int, n: int, seed: int) -> np.ndarray:
    """``n`` importance diagonals of length ``k``: uniform first, then Dirichlet(1) draws."""
    rng = np.random.default_rng(seed)
    out = np.empty((n, k))
    out[0] = 1.0 / k
    if n > 1:
        out[1:] = rng.dirichlet(np.ones(k), size=n - 1)
    return out


def _row_scale(X0: np.ndarray) -> np.ndarray:
    sd = X0.std(axis=1)
    return np.where(sd > 0, sd, 1.0)


@dataclass(frozen=True, eq=False)
class _Blocks:
    fit_X1: np.ndarray
    fit_X0: np.ndarray
    pen_X1: np.ndarray
    pen_X0: np.ndarray


def _blocks(panel: PanelData, design: StudyDesign, kind: EstimatorKind, window: slice) -> _Blocks:
    fit_m = build_predictor_matrices(panel, design, window, differenced=kind.differenced)
    pen_m = fit_m if not kind.differenced else build_predictor_matrices(panel, design, window, differenced=False)
    fs = _row_scale(fit_m.X0)
    ps = _row_scale(pen_m.X0)
    pen_X1 = pen_m.X1 / ps
    pen_X0 = pen_m.X0 / ps[:, None]
    if kind.differenced:
        # the offset absorbs the outcome level, so only covariate levels are penalized
        pen_X1 = pen_X1.copy()
        pen_X0 = pen_X0.copy()
        pen_X1[0] = 0.0
        pen_X0[0] = 0.0
    return _Blocks(fit_m.X1 / fs, fit_m.X0 / fs[:, None], pen_X1, pen_X0)


def build_objective(
    panel: PanelData,
    design: StudyDesign,
    kind: EstimatorKind,
    window: slice,
    v_diag,
    lam: float,
) -> InnerObjective:
    """Weight problem for ``kind`` on ``window`` with rows scaled by donor-pool spread."""
    kind = EstimatorKind.parse(kind)
    b = _blocks(panel, design, kind, window)
    return InnerObjective(b.fit_X1, b.fit_X0, b.pen_X1, b.pen_X0, v_diag, lam if kind.penalized else 0.0)


def _treated_and_donors(panel: PanelData, design: StudyDesign) -> Tuple[np.ndarray, np.ndarray]:
    t = panel.unit_index(design.treated_unit)
    donors = [i for i in range(panel.n_units) if i != t]
    return panel.outcomes[t], panel.outcomes[donors]


def validation_mspe(panel: PanelData, design: StudyDesign, w, differenced: bool) -> float:
    """Mean squared validation-window error of the weighted donor outcomes.

    With ``differenced`` the per-period changes ``y[t] - y[t-1]`` are compared
    for every validation period ``t``.
    """
    y1, Y0 = _treated_and_donors(panel, design)
    w = np.asarray(w, dtype=np.float64)
    if w.size != Y0.shape[0]:
        raise InvalidDesign(f"weight vector has {w.size} entries for {Y0.shape[0]} donors")
    win = design.valid_window(panel)
    idx = np.arange(win.start, win.stop)
    if idx.size == 0:
        raise EmptyValidationWindow("validation window is empty")
    if differenced:
        if idx[0] < 1:
            raise EmptyValidationWindow("differenced validation needs a period before the validation window")
        e = (y1[idx] - y1[idx - 1]) - w @ (Y0[:, idx] - Y0[:, idx - 1])
    else:
        e = y1[idx] - w @ Y0[:, idx]
    return float(np.mean(e * e))


@dataclass(frozen=True)
class _Selection:
    v_diag: np.ndarray
    lam: float
    mspe: float


def _select(panel, design, kind, config) -> _Selection:
    train = design.train_window(panel)
    b = _blocks(panel, design, kind, train)
    cands = importance_candidates(panel.k, config.v_candidates, config.seed)
    best: Optional[_Selection] = None
    for lam in config.lambdas_for(kind):
        for v in cands:
            obj = InnerObjective(b.fit_X1, b.fit_X0, b.pen_X1, b.pen_X0, v, lam)
            w = solve_weights(obj, config.tol, config.max_iters)
            m = validation_mspe(panel, design, w, kind.differenced)
            if best is None or m < best.mspe - TIE_TOL:
                best = _Selection(v, lam, m)
    return best


def select_hyperparameters(
    panel: PanelData,
    design: StudyDesign,
    kind,
    config: SearchConfig = SearchConfig(),
) -> Tuple[np.ndarray, float]:
    """Pick ``(v_diag, lam)`` minimizing validation MSPE of training-window weights.

    Ties (within 1e-12) go to the smallest ``lam``, then the earliest candidate.
    """
    kind = EstimatorKind.parse(kind)
    design.validate(panel, differenced=kind.differenced)
    sel = _select(panel, design, kind, config)
    return sel.v_diag.copy(), sel.lam


def compute_alpha(panel: PanelData, design: StudyDesign, w) -> float:
    """Mean over the validation window of ``synthetic - treated``.

    The counterfactual is ``sum_j w_j Y_jt - alpha``.
    """
    y1, Y0 = _treated_and_donors(panel, design)
    win = design.valid_window(panel)
    if win.stop <= win.start:
        raise EmptyValidationWindow("validation window is empty")
    synth = np.asarray(w, dtype=np.float64) @ Y0[:, win]
    return float(np.mean(synth - y1[win]))


def _rmspe(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def fit_fixed(
    panel: PanelData,
    design: StudyDesign,
    kind,
    v_diag,
    lam: float = 0.0,
    *,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    selection_mspe: float = float("nan"),
) -> FittedSyntheticControl:
    """Fit with given ``(v_diag, lam)``: weights on the validation window, then offset and paths."""
    kind = EstimatorKind.parse(kind)
    design.validate(panel, differenced=kind.differenced)
    lam = float(lam) if kind.penalized else 0.0
    obj = build_objective(panel, design, kind, design.valid_window(panel), v_diag, lam)
    w = solve_weights(obj, tol, max_iters)
    alpha = compute_alpha(panel, design, w) if kind.differenced else 0.0
    y1, Y0 = _treated_and_donors(panel, design)
    cf = w @ Y0 - alpha if kind.differenced else w @ Y0
    pre, post, valid = design.pre_window(panel), design.post_window(panel), design.valid_window(panel)
    t = panel.unit_index(design.treated_unit)
    return FittedSyntheticControl(
        kind=kind,
        w=_ro(w),
        v_diag=_ro(obj.v_diag),
        lam=lam,
        alpha=float(alpha),
        design=design,
        donor_ids=tuple(u for i, u in enumerate(panel.unit_ids) if i != t),
        variable_names=panel.variable_names,
        time_points=panel.time_points,
        treated_path=_ro(y1),
        counterfactual=_ro(cf),
        effects=_ro(y1[post] - cf[post]),
        pre_rmspe=_rmspe(y1[pre], cf[pre]),
        post_rmspe=_rmspe(y1[post], cf[post]),
        valid_rmspe=_rmspe(y1[valid], cf[valid]),
        selection_mspe=float(selection_mspe),
    )


def fit(
    panel: PanelData,
    design: StudyDesign,
    kind,
    config: SearchConfig = SearchConfig(),
) -> FittedSyntheticControl:
    """Select hyperparameters, refit on the validation window, build paths and effects."""
    kind = EstimatorKind.parse(kind)
    design.validate(panel, differenced=kind.differenced)
    sel = _select(panel, design, kind, config)
    return fit_fixed(
        panel,
        design,
        kind,
        sel.v_diag,
        sel.lam,
        tol=config.tol,
        max_iters=config.max_iters,
        selection_mspe=sel.mspe,
    )


def effect_series(fitted: FittedSyntheticControl, panel: PanelData) -> np.ndarray:
    """Observed treated outcome minus the counterfactual for every ``t >= t0``."""
    if not np.array_equal(fitted.time_points, panel.time_points):
        raise InvalidDesign("fitted result and panel have different time points")
    y1 = panel.outcomes[panel.unit_index(fitted.design.treated_unit)]
    post = fitted.design.post_window(panel)
    return y1[post] - fitted.counterfactual[post]
