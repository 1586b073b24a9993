"""Simulated panels from additive factor models and worked bias examples.

Outcomes are generated as

    Y[i, t] = delta[t] + sum_k theta[t, k] * Phi(Z[i, k]) + lam[t] * phi(mu[i]) + eps[i, t]

with unit 0 treated. When ``Phi`` is nonlinear, matching ``Z`` exactly does
not match the outcome; :func:`bias_lower_bound` gives the size of that gap at
a given weight vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from synthcontrol.diagnostics import pairwise_discrepancy
from synthcontrol.errors import DimensionMismatch, InvalidSpec
from synthcontrol.panel import PanelData
from synthcontrol.simplex_qp import InnerObjective, objective_value, solve_weights

__all__ = [
    "Link",
    "LINEAR",
    "power",
    "custom",
    "as_link",
    "UnobservedBlock",
    "GenerativeSpec",
    "GeneratedPanel",
    "generate_panel",
    "bias_gaps",
    "bias_lower_bound",
    "associativity_gap",
    "Claim",
    "ExampleReport",
    "reproduce_examples",
]

EXAMPLE_TOL = 1e-12


def _identity(z):
    return z


@dataclass(frozen=True)
class _PowerMap:
    p: float

    def __call__(self, z):
        return np.power(z, self.p)


@dataclass(frozen=True)
class Link:
    """Pointwise outcome map. ``linear`` marks maps known to be affine."""

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    linear: bool = False

    def __call__(self, z) -> np.ndarray:
        return np.asarray(self.func(np.asarray(z, dtype=np.float64)), dtype=np.float64)

    @property
    def flags(self) -> Tuple[str, ...]:
        if self.linear and self.name.startswith("power"):
            return ("linear in disguise",)
        return ()


LINEAR = Link("linear", _identity, linear=True)


def power(p: float) -> Link:
    p = float(p)
    if not np.isfinite(p):
        raise InvalidSpec("power exponent must be finite")
    label = f"power({int(p)})" if p.is_integer() else f"power({p!r})"
    return Link(label, _PowerMap(p), linear=(p == 1.0))


def custom(func: Callable, name: str = "custom") -> Link:
    return Link(name, func)


def as_link(spec) -> Link:
    """Accept a :class:`Link`, ``"linear"``, ``"square"``, ``"cube"``, ``("power", p)`` or a callable."""
    if isinstance(spec, Link):
        return spec
    if isinstance(spec, str):
        named = {"linear": LINEAR, "square": power(2), "cube": power(3)}
        if spec in named:
            return named[spec]
        if spec.startswith("power(") and spec.endswith(")"):
            return power(float(spec[6:-1]))
    if isinstance(spec, tuple) and len(spec) == 2 and spec[0] == "power":
        return power(spec[1])
    if callable(spec):
        return custom(spec, getattr(spec, "__name__", "custom"))
    raise InvalidSpec(f"unknown link {spec!r}")


def _uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=shape)


@dataclass(frozen=True, eq=False)
class UnobservedBlock:
    """``lam[t] * phi(mu[i])``; ``mu`` is drawn standard normal when not given."""

    mu: Optional[Sequence[float]] = None
    link: Any = LINEAR
    loadings: Optional[Sequence[float]] = None


@dataclass(frozen=True, eq=False)
class GenerativeSpec:
    """Simulation settings. Unit 0 is treated; units 1..J are donors.

    ``time_coeffs`` is ``(T,)`` (shared by all covariates) or ``(T, k)``;
    default all ones. ``covariates`` fixes ``Z`` as ``(J + 1, k)``; otherwise
    ``covariate_sampler(rng, (J + 1, k))`` draws it (default uniform on
    [0, 1]). ``treated_in_hull`` replaces the treated row by a Dirichlet(1)
    mixture of the donors. ``noise`` injects ``eps`` as ``(J + 1, T)`` instead
    of drawing normal noise with ``noise_sd``.

    Draw order from ``default_rng(seed)``: covariates, hull weights, ``mu``,
    noise.
    """

    n_donors: int = 10
    n_times: int = 20
    n_covariates: int = 1
    link: Any = LINEAR
    time_coeffs: Optional[Sequence] = None
    common_trend: Optional[Sequence[float]] = None
    unobserved: Optional[UnobservedBlock] = None
    noise_sd: float = 0.0
    seed: int = 0
    covariates: Optional[Sequence] = None
    covariate_sampler: Optional[Callable] = None
    treated_in_hull: bool = False
    noise: Optional[Sequence] = None

    def __post_init__(self):
        object.__setattr__(self, "link", as_link(self.link))
        for name in ("n_donors", "n_times", "n_covariates"):
            if int(getattr(self, name)) < 1:
                raise InvalidSpec(f"{name} must be at least 1")
        if not (np.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise InvalidSpec(f"noise_sd must be a nonnegative number, got {self.noise_sd!r}")
        n, T, k = self.n_units, self.n_times, self.n_covariates
        if self.covariates is not None and np.shape(self.covariates) not in ((n, k), (n,) if k == 1 else ()):
            raise InvalidSpec(f"covariates must have shape {(n, k)}, got {np.shape(self.covariates)}")
        if self.time_coeffs is not None and np.shape(self.time_coeffs) not in ((T,), (T, k)):
            raise InvalidSpec(f"time_coeffs must have shape {(T,)} or {(T, k)}")
        if self.common_trend is not None and np.shape(self.common_trend) != (T,):
            raise InvalidSpec(f"common_trend must have shape {(T,)}")
        if self.noise is not None and np.shape(self.noise) not in ((n, T), (n,) if T == 1 else ()):
            raise InvalidSpec(f"noise must have shape {(n, T)}, got {np.shape(self.noise)}")
        if self.unobserved is not None:
            u = self.unobserved
            if u.mu is not None and np.shape(u.mu) != (n,):
                raise InvalidSpec(f"unobserved mu must have shape {(n,)}")
            if u.loadings is not None and np.shape(u.loadings) != (T,):
                raise InvalidSpec(f"unobserved loadings must have shape {(T,)}")
            as_link(u.link)

    @property
    def n_units(self) -> int:
        return int(self.n_donors) + 1

    @property
    def flags(self) -> Tuple[str, ...]:
        return self.link.flags


@dataclass(frozen=True, eq=False)
class GeneratedPanel:
    """A simulated panel plus the latent pieces that produced it."""

    panel: PanelData
    noiseless: np.ndarray
    Z: np.ndarray
    mu: Optional[np.ndarray]
    eps: np.ndarray
    hull_weights: Optional[np.ndarray] = None

    @property
    def treated_unit(self) -> str:
        return self.panel.unit_ids[0]


def generate_panel(spec: GenerativeSpec) -> GeneratedPanel:
    """Simulate a panel from ``spec``; see the module docstring for the model."""
    rng = np.random.default_rng(spec.seed)
    n, T, k = spec.n_units, spec.n_times, spec.n_covariates

    if spec.covariates is not None:
        Z = np.asarray(spec.covariates, dtype=np.float64).reshape(n, k)
    else:
        Z = np.asarray((spec.covariate_sampler or _uniform)(rng, (n, k)), dtype=np.float64)
        if Z.shape != (n, k):
            raise InvalidSpec(f"covariate_sampler returned shape {Z.shape}, expected {(n, k)}")
    Z = Z.copy()
    hull = None
    if spec.treated_in_hull:
        hull = rng.dirichlet(np.ones(spec.n_donors))
        Z[0] = hull @ Z[1:]
    if not np.all(np.isfinite(Z)):
        raise InvalidSpec("covariates must be finite")

    theta = np.ones((T, k)) if spec.time_coeffs is None else np.asarray(spec.time_coeffs, dtype=np.float64)
    if theta.ndim == 1:
        theta = np.repeat(theta[:, None], k, axis=1)
    delta = np.zeros(T) if spec.common_trend is None else np.asarray(spec.common_trend, dtype=np.float64)

    Y = delta[None, :] + spec.link(Z) @ theta.T
    mu = None
    if spec.unobserved is not None:
        u = spec.unobserved
        mu = rng.standard_normal(n) if u.mu is None else np.asarray(u.mu, dtype=np.float64)
        lam = np.ones(T) if u.loadings is None else np.asarray(u.loadings, dtype=np.float64)
        Y = Y + as_link(u.link)(mu)[:, None] * lam[None, :]
    if spec.noise is not None:
        eps = np.asarray(spec.noise, dtype=np.float64).reshape(n, T)
    elif spec.noise_sd > 0:
        eps = rng.normal(0.0, spec.noise_sd, size=(n, T))
    else:
        eps = np.zeros((n, T))
    if not np.all(np.isfinite(Y)):
        raise InvalidSpec("link produced non-finite outcomes")

    units = [f"unit{i + 1}" for i in range(n)]
    covs = {f"z{j + 1}": np.repeat(Z[:, j : j + 1], T, axis=1) for j in range(k)}
    panel = PanelData(units, np.arange(1, T + 1), Y + eps, covs)
    return GeneratedPanel(panel, Y, Z, mu, eps, hull)


def _bound_inputs(w, Z1, Z0):
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    Z1 = np.atleast_1d(np.asarray(Z1, dtype=np.float64))
    Z0 = np.asarray(Z0, dtype=np.float64)
    if Z0.ndim == 1:
        Z0 = Z0[None, :]
    if Z1.ndim != 1 or Z0.shape != (Z1.size, w.size):
        raise DimensionMismatch(f"Z0 has shape {Z0.shape}; expected {(Z1.size, w.size)}")
    return w, Z1, Z0


def bias_gaps(w, Z1, Z0, link) -> np.ndarray:
    """Signed per-covariate gaps ``Phi(Z1[v]) - sum_j w_j Phi(Z0[v, j])``."""
    w, Z1, Z0 = _bound_inputs(w, Z1, Z0)
    link = as_link(link)
    return link(Z1) - link(Z0) @ w


def bias_lower_bound(w, Z1, Z0, link) -> float:
    """Absolute sum over covariates of :func:`bias_gaps`.

    ``Z0`` is ``(k, J)``, or ``(J,)`` for a single covariate. When ``w``
    matches ``Z1`` exactly and the model has no noise or unobserved block,
    this equals the outcome mismatch at ``w`` for unit time coefficients and a
    convex (or concave) link.
    """
    return float(np.sum(np.abs(bias_gaps(w, Z1, Z0, link))))


def associativity_gap(link, w, Z) -> float:
    """``Phi(sum_j w_j Z_j) - sum_j w_j Phi(Z_j)``; negative for convex ``Phi``."""
    link = as_link(link)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    Z = np.asarray(Z, dtype=np.float64).reshape(-1)
    if w.shape != Z.shape:
        raise DimensionMismatch(f"w has {w.size} entries but Z has {Z.size}")
    return float(link(np.dot(w, Z)) - np.dot(w, link(Z)))


@dataclass(frozen=True)
class Claim:
    example: str
    description: str
    expected: Union[float, Tuple[float, ...]]
    computed: Union[float, Tuple[float, ...]]
    abs_error: float
    passed: bool


@dataclass(frozen=True)
class ExampleReport:
    claims: Tuple[Claim, ...]
    tolerance: float = EXAMPLE_TOL
    notes: Tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.claims)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "n_claims": len(self.claims),
            "n_failed": sum(not c.passed for c in self.claims),
            "claims": [
                {**vars(c), "expected": _jsonable(c.expected), "computed": _jsonable(c.computed)}
                for c in self.claims
            ],
            "notes": list(self.notes),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def render(self) -> str:
        lines = []
        for c in self.claims:
            mark = "PASS" if c.passed else "FAIL"
            lines.append(f"[{mark}] {c.example}: {c.description} = {_fmt(c.computed)} "
                         f"(expected {_fmt(c.expected)}, |err| {c.abs_error:.1e})")
        n_fail = sum(not c.passed for c in self.claims)
        lines.append(f"{len(self.claims) - n_fail}/{len(self.claims)} claims pass at tolerance {self.tolerance:g}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def _jsonable(x):
    return list(x) if isinstance(x, tuple) else x


def _fmt(x) -> str:
    if isinstance(x, tuple):
        return "(" + ", ".join(f"{v:.12g}" for v in x) + ")"
    return f"{x:.12g}"


class _Claims:
    def __init__(self, tol: float):
        self.tol = tol
        self.items: List[Claim] = []

    def add(self, example: str, description: str, expected, computed) -> None:
        exp = np.atleast_1d(np.asarray(expected, dtype=np.float64))
        got = np.atleast_1d(np.asarray(computed, dtype=np.float64))
        if exp.shape != got.shape:
            err = float("inf")
        else:
            err = float(np.max(np.abs(exp - got)))
        tup = lambda a: float(a[0]) if a.size == 1 else tuple(float(v) for v in a)
        self.items.append(Claim(example, description, tup(exp), tup(got), err, bool(err < self.tol)))


def _synthetic(w, values) -> float:
    return float(np.dot(np.asarray(w, dtype=np.float64), np.asarray(values, dtype=np.float64)))


def reproduce_examples(tol: float = EXAMPLE_TOL) -> ExampleReport:
    """Recompute the worked single-covariate bias examples and report each claim."""
    c = _Claims(tol)
    square, cube = power(2), power(3)
    half = np.array([0.5, 0.5])

    ex1 = generate_panel(GenerativeSpec(n_donors=2, n_times=1, link=square, covariates=[2.0, 1.0, 3.0]))
    Y = ex1.panel.outcomes[:, 0]
    Z = ex1.Z[:, 0]
    c.add("Example 1", "outcomes Y = Z^2", (4.0, 1.0, 9.0), Y)
    c.add("Example 1", "covariate mismatch at W=(1/2,1/2)", 0.0, abs(Z[0] - _synthetic(half, Z[1:])))
    c.add("Example 1", "synthetic outcome at W=(1/2,1/2)", 5.0, _synthetic(half, Y[1:]))
    c.add("Example 1", "outcome mismatch at W=(1/2,1/2)", 1.0, bias_lower_bound(half, Z[0], Z[1:], square))
    alt = np.array([0.625, 0.375])
    c.add("Example 1", "synthetic outcome at W=(0.625,0.375)", 4.0, _synthetic(alt, Y[1:]))
    c.add("Example 1", "outcome mismatch at W=(0.625,0.375)", 0.0, abs(Y[0] - _synthetic(alt, Y[1:])))
    c.add("Example 1", "synthetic covariate at W=(0.625,0.375)", 1.75, _synthetic(alt, Z[1:]))
    c.add("Example 1", "covariate mismatch at W=(0.625,0.375)", 0.25, abs(Z[0] - _synthetic(alt, Z[1:])))

    ex2 = generate_panel(
        GenerativeSpec(n_donors=2, n_times=1, link=square, covariates=[2.0, 1.0, 3.0], noise=[1.0, 1.0, -1.0])
    )
    Y2 = ex2.panel.outcomes[:, 0]
    c.add("Example 2", "noisy outcomes Y = Z^2 + eps", (5.0, 2.0, 8.0), Y2)
    c.add("Example 2", "noisy outcome mismatch at W=(1/2,1/2)", 0.0, abs(Y2[0] - _synthetic(half, Y2[1:])))
    X1 = np.array([Z[0], Y2[0]])
    X0 = np.vstack([Z[1:], Y2[1:]])
    obj = InnerObjective(X1, X0, X1, X0, np.array([0.5, 0.5]), 0.0)
    w = solve_weights(obj)
    c.add("Example 2", "weights fitted on levels (Z, Y)", (0.5, 0.5), w)
    c.add("Example 2", "fit objective at fitted weights", 0.0, objective_value(obj, w))
    c.add("Example 2", "noiseless outcome mismatch at fitted weights (spurious fit)", 1.0,
          abs(ex2.noiseless[0, 0] - _synthetic(w, ex2.noiseless[1:, 0])))

    c.add("Example 3", "lower bias bound, square link", 1.0, bias_lower_bound(half, 2.0, [1.0, 3.0], square))
    c.add("Example 3", "lower bias bound, cube link", 6.0, bias_lower_bound(half, 2.0, [1.0, 3.0], cube))

    c.add("Example 4", "covariate mismatch after shifting Z by 10", 0.0, abs(12.0 - _synthetic(half, [11.0, 13.0])))
    c.add("Example 4", "squared pairwise differences after shift", (1.0, 1.0), (np.array([11.0, 13.0]) - 12.0) ** 2)
    c.add("Example 4", "lower bias bound, cube link", 36.0, bias_lower_bound(half, 12.0, [11.0, 13.0], cube))

    Z5 = np.array([1.0, 3.0, 4.0])
    w1 = np.array([0.5, 0.5, 0.0])
    w2 = np.array([2.0 / 3.0, 0.0, 1.0 / 3.0])
    for name, wk, pair, miss in (("W1=(1/2,1/2,0)", w1, 1.0, 1.0), ("W2=(2/3,0,1/3)", w2, 2.0, 2.0)):
        c.add("Example 5", f"covariate mismatch at {name}", 0.0, abs(2.0 - _synthetic(wk, Z5)))
        c.add("Example 5", f"weighted squared pairwise discrepancy at {name}", pair,
              pairwise_discrepancy(wk, [2.0], Z5[None, :], "squared")[0])
        c.add("Example 5", f"outcome mismatch at {name}", miss, bias_lower_bound(wk, 2.0, Z5, square))
    c.add("Example 5", "signed outcome gap at W2", -2.0, float(bias_gaps(w2, 2.0, Z5, square)[0]))

    Za = np.array([1.0, 3.0])
    c.add("Appendix A", "(sum w Z)^2 at W=(1/2,1/2), Z=(1,3)", 4.0, float(square(_synthetic(half, Za))))
    c.add("Appendix A", "sum w Z^2 at W=(1/2,1/2), Z=(1,3)", 5.0, _synthetic(half, square(Za)))
    c.add("Appendix A", "associativity gap, square link", -1.0, associativity_gap(square, half, Za))
    c.add("Appendix A", "associativity gap, cube link", -6.0, associativity_gap(cube, half, Za))
    c.add("Appendix A", "associativity gap, linear link", 0.0, associativity_gap(LINEAR, half, Za))
    c.add("Appendix A", "associativity gap, square link, W=(1,0)", 0.0, associativity_gap(square, [1.0, 0.0], Za))

    notes = ("multi-covariate bounds sum the absolute per-covariate gaps",)
    return ExampleReport(tuple(c.items), tol, notes)
