"""Covariate balance tables with a pairwise-discrepancy column.

Besides the treated value ``X1[v]`` and the synthetic value ``X0[v] @ w``,
each row reports ``WMAPE = sum_j w_j |X1[v] - X0[v, j]|``: how far the donors
that make up the synthetic unit are from the treated unit *before* they are
averaged. A perfect synthetic match with a large WMAPE signals that the
match relies on averaging dissimilar units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from synthcontrol.errors import DimensionMismatch, DivisionByZeroTreatedValue
from synthcontrol.estimators import FittedSyntheticControl
from synthcontrol.panel import PredictorMatrices

__all__ = ["BalanceRow", "BalanceTable", "balance_table", "pairwise_discrepancy"]


def pairwise_discrepancy(w, X1, X0, metric: str = "absolute") -> np.ndarray:
    """Per-variable ``sum_j w_j d(X1[v], X0[v, j])`` with ``d`` absolute or squared."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    X1 = np.asarray(X1, dtype=np.float64).reshape(-1)
    X0 = np.atleast_2d(np.asarray(X0, dtype=np.float64))
    if X0.shape != (X1.size, w.size):
        raise DimensionMismatch(f"X0 has shape {X0.shape}; expected {(X1.size, w.size)}")
    diff = X1[:, None] - X0
    if metric == "absolute":
        return np.abs(diff) @ w
    if metric == "squared":
        return (diff * diff) @ w
    raise ValueError(f"unknown metric {metric!r}")


class BalanceRow(NamedTuple):
    variable: str
    treated: float
    synthetic: float
    wmape: float
    importance: float


@dataclass(frozen=True)
class BalanceTable:
    rows: Tuple[BalanceRow, ...]
    mode: str  # "levels" or "differences"
    normalized: bool
    treated_label: str = "Treated"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "normalized": self.normalized,
            "columns": ["variable", "treated", "synthetic", "wmape", "importance"],
            "rows": [list(r) for r in self.rows],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def render(self, decimals: int = 2) -> str:
        head = ["", self.treated_label, f"Synthetic {self.treated_label}", "WMAPE", "Importance"]
        body = [
            [r.variable] + [f"{x:.{decimals}f}" for x in (r.treated, r.synthetic, r.wmape, r.importance)]
            for r in self.rows
        ]
        widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
        lines = []
        for row in [head] + body:
            cells = [row[0].ljust(widths[0])] + [c.rjust(wd) for c, wd in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        if self.mode == "differences":
            lines.append("(values are mean per-period changes)")
        return "\n".join(lines)


def balance_table(
    fitted: FittedSyntheticControl,
    matrices: PredictorMatrices,
    normalized: Optional[bool] = None,
) -> BalanceTable:
    """Balance table of ``fitted`` over ``matrices``.

    Differenced estimators must be shown with differenced matrices, since their
    levels are offset by ``alpha``. ``normalized`` divides WMAPE by
    ``|treated value|`` and defaults to on for differenced tables, off otherwise.
    """
    if matrices.differenced != fitted.kind.differenced:
        want = "differenced" if fitted.kind.differenced else "level"
        raise DimensionMismatch(f"{fitted.kind.label} results are tabulated with {want} predictor matrices")
    w = fitted.w
    if matrices.X0.shape != (fitted.v_diag.size, w.size):
        raise DimensionMismatch(
            f"matrices have shape {matrices.X0.shape}; fit has {fitted.v_diag.size} variables and {w.size} donors"
        )
    if tuple(matrices.donor_ids) != tuple(fitted.donor_ids):
        raise DimensionMismatch("donor order of the matrices does not match the fit")
    if normalized is None:
        normalized = matrices.differenced
    synth = matrices.X0 @ w
    wmape = pairwise_discrepancy(w, matrices.X1, matrices.X0, "absolute")
    if normalized:
        zero = matrices.X1 == 0
        if zero.any():
            name = matrices.variable_names[int(np.flatnonzero(zero)[0])]
            raise DivisionByZeroTreatedValue(f"cannot normalize WMAPE: treated value of {name!r} is 0")
        wmape = wmape / np.abs(matrices.X1)
    rows = tuple(
        BalanceRow(name, float(x1), float(s), float(m), float(v))
        for name, x1, s, m, v in zip(matrices.variable_names, matrices.X1, synth, wmape, fitted.v_diag)
    )
    return BalanceTable(
        rows=rows,
        mode="differences" if matrices.differenced else "levels",
        normalized=bool(normalized),
        treated_label=fitted.design.treated_unit,
    )
