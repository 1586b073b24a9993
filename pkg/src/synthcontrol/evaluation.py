"""Leave-one-out evaluation on untreated units.

Every untreated unit of a study is treated as if it had received the
intervention at the study's ``t0`` and fit from the remaining untreated units.
Its true effect is zero, so post-period RMSPE measures estimator error
directly. Results are aggregated per (dataset, estimator).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from synthcontrol._parallel import ordered_map
from synthcontrol.errors import DimensionMismatch, EmptyWindow, InvalidDesign, SynthControlError
from synthcontrol.estimators import EstimatorKind, SearchConfig, fit
from synthcontrol.panel import PanelData, StudyDesign

__all__ = [
    "rmspe",
    "sparsity",
    "UnitResult",
    "Summary",
    "EvaluationReport",
    "leave_one_out_eval",
]

DEFAULT_SPARSITY_THRESHOLD = 1e-3


def rmspe(observed, predicted, window: Optional[slice] = None) -> float:
    """Root mean squared difference over ``window`` (default: everything)."""
    a = np.asarray(observed, dtype=np.float64)
    b = np.asarray(predicted, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"observed {a.shape} and predicted {b.shape} differ in shape")
    if window is not None:
        a, b = a[window], b[window]
    if a.size == 0:
        raise EmptyWindow("RMSPE window is empty")
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def sparsity(w, threshold: float = DEFAULT_SPARSITY_THRESHOLD) -> float:
    """Share of donors whose weight exceeds ``threshold``."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    w = np.asarray(w, dtype=np.float64)
    return float(np.count_nonzero(w > threshold) / w.size)


@dataclass(frozen=True)
class UnitResult:
    dataset: str
    kind: str
    unit: str
    pre_rmspe: float = float("nan")
    post_rmspe: float = float("nan")
    sparsity: float = float("nan")
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class Summary:
    dataset: str
    kind: str
    pre_rmspe: float
    post_rmspe: float
    sparsity: float
    n_units: int
    n_failed: int


_STATS = ("pre_rmspe", "post_rmspe", "sparsity")


@dataclass
class EvaluationReport:
    rows: List[UnitResult] = field(default_factory=list)
    metadata: Dict[str, dict] = field(default_factory=dict)

    def datasets(self) -> List[str]:
        return list(dict.fromkeys(r.dataset for r in self.rows))

    def kinds(self, dataset: str) -> List[str]:
        return list(dict.fromkeys(r.kind for r in self.rows if r.dataset == dataset))

    def summary(self, dataset: str, kind) -> Summary:
        kind = EstimatorKind.parse(kind).value
        sel = [r for r in self.rows if r.dataset == dataset and r.kind == kind]
        ok = [r for r in sel if r.ok]
        means = {s: (float(np.mean([getattr(r, s) for r in ok])) if ok else float("nan")) for s in _STATS}
        return Summary(dataset, kind, means["pre_rmspe"], means["post_rmspe"], means["sparsity"],
                       len(ok), len(sel) - len(ok))

    def summaries(self) -> List[Summary]:
        return [self.summary(d, k) for d in self.datasets() for k in self.kinds(d)]

    def ranks(self, dataset: str) -> Dict[Tuple[str, str], int]:
        """Rank (1 = lowest value) of each estimator per statistic within ``dataset``."""
        sums = [self.summary(dataset, k) for k in self.kinds(dataset)]
        out = {}
        for stat in _STATS:
            order = sorted(sums, key=lambda s: (math.isnan(getattr(s, stat)), getattr(s, stat)))
            for i, s in enumerate(order, start=1):
                out[(s.kind, stat)] = i
        return out

    def merge(self, other: "EvaluationReport") -> "EvaluationReport":
        return EvaluationReport(self.rows + other.rows, {**self.metadata, **other.metadata})

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "summary": [vars(s) for s in self.summaries()],
            "units": [vars(r) for r in self.rows],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def units_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["dataset", "kind", "unit", "pre_rmspe", "post_rmspe", "sparsity", "error"])
        for r in self.rows:
            out.writerow([r.dataset, r.kind, r.unit, repr(r.pre_rmspe), repr(r.post_rmspe),
                          repr(r.sparsity), r.error or ""])
        return buf.getvalue()

    def render(self, decimals: int = 2) -> str:
        """Table with mean statistics; ``(n)`` is the rank within the dataset."""
        head = ["Dataset", "Method", "Pre RMSPE", "Post RMSPE", "Sparsity", "Failed"]
        body = []
        for d in self.datasets():
            ranks = self.ranks(d)
            for i, k in enumerate(self.kinds(d)):
                s = self.summary(d, k)
                cells = [f"{getattr(s, st):.{decimals}f} ({ranks[(k, st)]})" for st in _STATS]
                body.append([d if i == 0 else "", EstimatorKind(k).label] + cells + [str(s.n_failed)])
        widths = [max(len(r[c]) for r in [head] + body) for c in range(len(head))]
        lines = []
        for r in [head] + body:
            lines.append("  ".join([r[0].ljust(widths[0]), r[1].ljust(widths[1])]
                                   + [x.rjust(w) for x, w in zip(r[2:], widths[2:])]).rstrip())
        lines.append("(n) = rank within dataset, 1 = lowest")
        return "\n".join(lines)


def _evaluate_one(job, panel, t0, train_len, valid_len, config, threshold, dataset):
    unit, kind = job
    design = StudyDesign(unit, t0, train_len, valid_len)
    try:
        f = fit(panel, design, kind, config)
    except SynthControlError as exc:
        return UnitResult(dataset, kind.value, unit, error=f"{type(exc).__name__}: {exc}")
    return UnitResult(dataset, kind.value, unit, f.pre_rmspe, f.post_rmspe, sparsity(f.w, threshold))


def leave_one_out_eval(
    panel: PanelData,
    original_design: StudyDesign,
    kinds: Sequence = tuple(EstimatorKind),
    config: SearchConfig = SearchConfig(),
    *,
    dataset: str = "dataset",
    sparsity_threshold: float = DEFAULT_SPARSITY_THRESHOLD,
    valid_len: Optional[int] = None,
    n_jobs: int = 1,
) -> EvaluationReport:
    """Fit every estimator in ``kinds`` to each untreated unit of the study.

    The original treated unit is removed from the panel before anything else.
    The pre-period is the original study's; its split uses ``valid_len``
    validation periods (default ``ceil(n_pre / 2)``), recorded in the report
    metadata. Failed fits are reported per unit and left out of the means.
    """
    kinds = [EstimatorKind.parse(k) for k in kinds]
    panel.unit_index(original_design.treated_unit)
    pool = panel.drop_units([original_design.treated_unit])
    if pool.n_units < 3:
        raise InvalidDesign("leave-one-out evaluation needs at least three untreated units")
    t0 = original_design.t0
    probe = StudyDesign.with_default_split(pool, pool.unit_ids[0], t0, valid_len)
    job = partial(
        _evaluate_one,
        panel=pool,
        t0=t0,
        train_len=probe.train_len,
        valid_len=probe.valid_len,
        config=config,
        threshold=sparsity_threshold,
        dataset=dataset,
    )
    rows = ordered_map(job, [(u, k) for k in kinds for u in pool.unit_ids], n_jobs)
    meta = {
        dataset: {
            "excluded_treated_unit": original_design.treated_unit,
            "t0": t0.item() if hasattr(t0, "item") else t0,
            "train_len": probe.train_len,
            "valid_len": probe.valid_len,
            "n_untreated": pool.n_units,
            "n_variables": pool.k,
            "sparsity_threshold": sparsity_threshold,
            "lambda_grid": list(config.lambda_grid),
            "v_candidates": config.v_candidates,
            "seed": config.seed,
        }
    }
    return EvaluationReport(list(rows), meta)
