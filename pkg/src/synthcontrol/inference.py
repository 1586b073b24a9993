"""Placebo inference: in-space and in-time placebos, RMSPE ratios, rank p-values."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional, Tuple

import numpy as np

from synthcontrol._parallel import ordered_map
from synthcontrol.errors import InsufficientPrePeriods, InvalidDesign, SynthControlError
from synthcontrol.estimators import EstimatorKind, FittedSyntheticControl, SearchConfig, fit
from synthcontrol.panel import PanelData, StudyDesign

__all__ = [
    "RATIO_EPS",
    "PlaceboFailure",
    "PlaceboStudy",
    "rmspe_ratio",
    "rank_p_value",
    "in_space_placebos",
    "in_time_placebo",
]

RATIO_EPS = 1e-12


def rmspe_ratio(fitted: FittedSyntheticControl) -> float:
    """``post_rmspe / max(pre_rmspe, 1e-12)``."""
    return fitted.post_rmspe / max(fitted.pre_rmspe, RATIO_EPS)


def is_degenerate(fitted: FittedSyntheticControl) -> bool:
    return fitted.pre_rmspe < RATIO_EPS


def rank_p_value(treated_ratio: float, placebo_ratios) -> float:
    """Share of all ratios (treated included) that are at least the treated ratio."""
    ratios = np.asarray(placebo_ratios, dtype=np.float64)
    return float((1 + np.count_nonzero(ratios >= treated_ratio)) / (ratios.size + 1))


@dataclass(frozen=True)
class PlaceboFailure:
    unit: str
    error: str
    message: str


@dataclass(frozen=True, eq=False)
class PlaceboStudy:
    """In-space placebo results.

    ``ratios[0]`` belongs to the treated unit; ``ratios[1:]`` follow
    ``placebo_fits``, which are in donor order.
    """

    treated_fit: FittedSyntheticControl
    placebo_fits: Tuple[FittedSyntheticControl, ...]
    ratios: np.ndarray
    p_value: float
    failures: Tuple[PlaceboFailure, ...] = ()
    excluded: Tuple[str, ...] = ()

    @property
    def placebo_units(self) -> Tuple[str, ...]:
        return tuple(f.design.treated_unit for f in self.placebo_fits)

    def to_dict(self) -> dict:
        fits = (self.treated_fit,) + self.placebo_fits
        return {
            "estimator": self.treated_fit.kind.value,
            "treated_unit": self.treated_fit.design.treated_unit,
            "p_value": self.p_value,
            "ratios": {f.design.treated_unit: float(r) for f, r in zip(fits, self.ratios)},
            "degenerate": [f.design.treated_unit for f in fits if is_degenerate(f)],
            "paths": {
                f.design.treated_unit: {
                    "treated": f.treated_path.tolist(),
                    "counterfactual": f.counterfactual.tolist(),
                    "pre_rmspe": f.pre_rmspe,
                    "post_rmspe": f.post_rmspe,
                }
                for f in fits
            },
            "time": [t.item() if hasattr(t, "item") else t for t in self.treated_fit.time_points],
            "failures": [vars(x) for x in self.failures],
            "excluded": list(self.excluded),
        }

    def paths_csv(self) -> str:
        """Tidy CSV: ``unit,role,time,treated,counterfactual,gap``."""
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["unit", "role", "time", "treated", "counterfactual", "gap"])
        for role, f in [("treated", self.treated_fit)] + [("placebo", p) for p in self.placebo_fits]:
            for t, y, c in zip(f.time_points.tolist(), f.treated_path.tolist(), f.counterfactual.tolist()):
                out.writerow([f.design.treated_unit, role, t, repr(y), repr(c), repr(y - c)])
        return buf.getvalue()

    def ratios_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["unit", "role", "pre_rmspe", "post_rmspe", "ratio"])
        fits = (self.treated_fit,) + self.placebo_fits
        for i, (f, r) in enumerate(zip(fits, self.ratios)):
            out.writerow([f.design.treated_unit, "treated" if i == 0 else "placebo",
                          repr(f.pre_rmspe), repr(f.post_rmspe), repr(float(r))])
        return buf.getvalue()


def _placebo_fit(unit, panel, design, kind, config):
    pdesign = StudyDesign(unit, design.t0, design.train_len, design.valid_len)
    try:
        return fit(panel, pdesign, kind, config)
    except SynthControlError as exc:
        return PlaceboFailure(unit, type(exc).__name__, str(exc))


def in_space_placebos(
    panel: PanelData,
    design: StudyDesign,
    kind,
    config: SearchConfig = SearchConfig(),
    *,
    max_pre_rmspe_ratio: Optional[float] = None,
    n_jobs: int = 1,
) -> PlaceboStudy:
    """Refit ``kind`` with every donor as the pseudo-treated unit.

    The true treated unit is dropped from every placebo donor pool. Placebo
    failures are collected, not raised. With ``max_pre_rmspe_ratio`` set,
    placebos whose pre-period RMSPE exceeds that multiple of the treated
    unit's are left out of the p-value.
    """
    kind = EstimatorKind.parse(kind)
    treated_fit = fit(panel, design, kind, config)
    pool = panel.drop_units([design.treated_unit])
    if pool.n_units < 2:
        raise InvalidDesign("in-space placebos need at least two donors")
    job = partial(_placebo_fit, panel=pool, design=design, kind=kind, config=config)
    results = ordered_map(job, pool.unit_ids, n_jobs)
    fits = [r for r in results if isinstance(r, FittedSyntheticControl)]
    failures = tuple(r for r in results if isinstance(r, PlaceboFailure))
    excluded: List[str] = []
    if max_pre_rmspe_ratio is not None:
        limit = max_pre_rmspe_ratio * treated_fit.pre_rmspe
        excluded = [f.design.treated_unit for f in fits if f.pre_rmspe > limit]
        fits = [f for f in fits if f.pre_rmspe <= limit]
    ratios = np.array([rmspe_ratio(treated_fit)] + [rmspe_ratio(f) for f in fits])
    ratios.setflags(write=False)
    return PlaceboStudy(
        treated_fit=treated_fit,
        placebo_fits=tuple(fits),
        ratios=ratios,
        p_value=rank_p_value(ratios[0], ratios[1:]),
        failures=failures,
        excluded=tuple(excluded),
    )


def in_time_placebo(
    panel: PanelData,
    design: StudyDesign,
    placebo_t0,
    kind=EstimatorKind.SC,
    config: SearchConfig = SearchConfig(),
    *,
    valid_len: Optional[int] = None,
) -> FittedSyntheticControl:
    """Refit with the intervention moved back to ``placebo_t0``.

    Only periods before the real ``t0`` are used, so the pseudo-post window is
    untreated. The split of the shortened pre-period defaults to
    ``ceil(n_pre / 2)`` validation periods.
    """
    kind = EstimatorKind.parse(kind)
    if not placebo_t0 < design.t0:
        raise InvalidDesign(f"placebo t0 {placebo_t0!r} must be strictly before the real t0 {design.t0!r}")
    panel.time_index(placebo_t0)
    clean = panel.truncate(design.t0)
    n_pre = int(np.count_nonzero(clean.time_points < placebo_t0))
    need = 4 if kind.differenced else 2
    if n_pre < need:
        raise InsufficientPrePeriods(
            f"placebo t0 {placebo_t0!r} leaves {n_pre} pre-periods; {kind.label} needs at least {need} "
            "to form training and validation windows"
        )
    try:
        pdesign = StudyDesign.with_default_split(clean, design.treated_unit, placebo_t0, valid_len)
        pdesign.validate(clean, differenced=kind.differenced)
    except SynthControlError as exc:
        raise InsufficientPrePeriods(str(exc)) from exc
    return fit(clean, pdesign, kind, config)
