"""Weight problem over the probability simplex.

For fixed importance weights ``v`` and penalty ``lam`` the donor weights solve::

    min_w  sum_k v_k (fit_X1_k - sum_j w_j fit_X0_kj)^2
           + lam * sum_j w_j sum_k v_k (pen_X1_k - pen_X0_kj)^2
    s.t.   w_j >= 0, sum_j w_j = 1

The first term is a convex quadratic, the second is linear in ``w``. An
accelerated projected gradient run (function-value restart) from the uniform
vector locates the optimal face and an active-set pass solves on it exactly.
When the minimizer is not unique (an exact fit inside the donor hull, or
flat predictor rows) the one closest to the uniform vector is returned. All
minimizers share ``A w`` and ``c . w``, so that choice is a strictly convex
projection and moves continuously with the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from synthcontrol.errors import DidNotConverge, DimensionMismatch, SynthControlError

__all__ = [
    "InnerObjective",
    "objective_value",
    "fit_value",
    "penalty_value",
    "solve_weights",
    "project_simplex",
    "check_simplex",
    "DEFAULT_TOL",
    "DEFAULT_MAX_ITERS",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 100_000
SNAP = 1e-9
SIMPLEX_ATOL = 1e-9
_WARM_START_ITERS = 2000


@dataclass(frozen=True, eq=False)
class InnerObjective:
    """Data of one weight problem.

    ``fit_*`` may be levels or first differences; ``pen_*`` are levels. Both
    blocks share the row (variable) order of ``v_diag``.
    """

    fit_X1: np.ndarray
    fit_X0: np.ndarray
    pen_X1: np.ndarray
    pen_X0: np.ndarray
    v_diag: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        fx1 = np.asarray(self.fit_X1, dtype=np.float64).reshape(-1)
        fx0 = np.atleast_2d(np.asarray(self.fit_X0, dtype=np.float64))
        px1 = np.asarray(self.pen_X1, dtype=np.float64).reshape(-1)
        px0 = np.atleast_2d(np.asarray(self.pen_X0, dtype=np.float64))
        v = np.asarray(self.v_diag, dtype=np.float64).reshape(-1)
        k = v.size
        if fx1.size != k or px1.size != k or fx0.shape[0] != k or px0.shape[0] != k:
            raise DimensionMismatch(
                f"objective blocks disagree on the number of variables: v={k}, fit_X1={fx1.size}, "
                f"fit_X0={fx0.shape[0]}, pen_X1={px1.size}, pen_X0={px0.shape[0]}"
            )
        if fx0.shape[1] != px0.shape[1]:
            raise DimensionMismatch(f"fit_X0 has {fx0.shape[1]} donors, pen_X0 has {px0.shape[1]}")
        if fx0.shape[1] < 1:
            raise DimensionMismatch("at least one donor is required")
        if np.any(v < 0) or abs(v.sum() - 1.0) > SIMPLEX_ATOL:
            raise SynthControlError("v_diag must be nonnegative and sum to one")
        lam = float(self.lam)
        if not lam >= 0:
            raise SynthControlError(f"lambda must be nonnegative, got {self.lam}")
        for name, arr in (("fit_X1", fx1), ("fit_X0", fx0), ("pen_X1", px1), ("pen_X0", px0)):
            if not np.all(np.isfinite(arr)):
                raise SynthControlError(f"{name} contains non-finite values")
        object.__setattr__(self, "fit_X1", fx1)
        object.__setattr__(self, "fit_X0", fx0)
        object.__setattr__(self, "pen_X1", px1)
        object.__setattr__(self, "pen_X0", px0)
        object.__setattr__(self, "v_diag", v)
        object.__setattr__(self, "lam", lam)

    @property
    def J(self) -> int:
        return self.fit_X0.shape[1]

    @property
    def k(self) -> int:
        return self.v_diag.size

    def penalty_costs(self) -> np.ndarray:
        """Per-donor cost ``sum_k v_k (pen_X1_k - pen_X0_kj)^2``."""
        d = self.pen_X1[:, None] - self.pen_X0
        return self.v_diag @ (d * d)


def _as_weights(obj: InnerObjective, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != obj.J:
        raise DimensionMismatch(f"weight vector has {w.size} entries, objective has {obj.J} donors")
    return w


def fit_value(obj: InnerObjective, w) -> float:
    w = _as_weights(obj, w)
    r = obj.fit_X1 - obj.fit_X0 @ w
    return float(obj.v_diag @ (r * r))


def penalty_value(obj: InnerObjective, w) -> float:
    """Unscaled penalty ``sum_j w_j sum_k v_k (pen_X1_k - pen_X0_kj)^2``."""
    w = _as_weights(obj, w)
    return float(obj.penalty_costs() @ w)


def objective_value(obj: InnerObjective, w) -> float:
    return fit_value(obj, w) + obj.lam * penalty_value(obj, w)


def check_simplex(w, atol: float = SIMPLEX_ATOL) -> bool:
    w = np.asarray(w, dtype=np.float64)
    return bool(w.ndim == 1 and w.size >= 1 and np.all(w >= 0) and abs(w.sum() - 1.0) <= atol)


@numba.njit(cache=True)
def _project(y):
    n = y.size
    u = np.sort(y)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += u[i]
        t = (css - 1.0) / (i + 1)
        if u[i] - t > 0.0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        d = y[i] - theta
        out[i] = d if d > 0.0 else 0.0
    return out


@numba.njit(cache=True)
def _residual(A, b, w, r):
    k, J = A.shape
    for i in range(k):
        s = 0.0
        for j in range(J):
            s += A[i, j] * w[j]
        r[i] = s - b[i]


@numba.njit(cache=True)
def _value(r, c, w):
    f = 0.0
    for i in range(r.size):
        f += r[i] * r[i]
    for j in range(w.size):
        f += c[j] * w[j]
    return f


@numba.njit(cache=True)
def _gradient(A, r, c, g):
    k, J = A.shape
    for j in range(J):
        s = 0.0
        for i in range(k):
            s += A[i, j] * r[i]
        g[j] = 2.0 * s + c[j]


@numba.njit(cache=True)
def _apg(A, b, c, L, tol, max_iters):
    k, J = A.shape
    x = np.full(J, 1.0 / J)
    y = x.copy()
    r = np.empty(k)
    g = np.empty(J)
    _residual(A, b, x, r)
    fx = _value(r, c, x)
    t = 1.0
    gnorm = np.inf
    fresh = True
    for it in range(max_iters):
        _residual(A, b, y, r)
        _gradient(A, r, c, g)
        xn = _project(y - g / L)
        _residual(A, b, xn, r)
        fn = _value(r, c, xn)
        if fn > fx and not fresh:
            # function-value restart: drop momentum and retry from x
            t = 1.0
            y = x.copy()
            fresh = True
            continue
        _gradient(A, r, c, g)
        gm = xn - _project(xn - g / L)
        gnorm = np.sqrt(np.sum(gm * gm))
        dec = fx - fn
        tn = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = xn + ((t - 1.0) / tn) * (xn - x)
        x = xn
        fx = fn
        t = tn
        fresh = False
        if dec <= tol * max(1.0, abs(fn)) and gnorm <= tol:
            return x, fx, gnorm, it + 1, True
    return x, fx, gnorm, max_iters, False


def project_simplex(y) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    return _project(np.ascontiguousarray(y, dtype=np.float64))


def _stationarity(H, q, w, L) -> float:
    """Gradient-mapping norm ``|w - P(w - g/L)|``, relative to ``max(1, |g|_inf / L)``."""
    g = H @ w + q
    gm = w - _project(w - g / L)
    return float(np.sqrt(gm @ gm)) / max(1.0, float(np.abs(g).max()) / L)


def _active_set(H, q, w, tol, max_steps):
    """Primal active-set refinement of a feasible point.

    Handles a singular Hessian: when the equality-constrained subproblem on the
    free set is unbounded, the step follows the descent direction in the null
    space of its KKT matrix until a bound becomes active.
    """
    w = w.copy()
    free = w > 0
    at_face_min = False
    for _ in range(max_steps):
        g = H @ w + q
        F = np.flatnonzero(free)
        scale = max(1.0, float(np.abs(g).max()))
        if at_face_min:
            # optimal on the current face: release the worst bound, if any
            nu = float(np.mean(g[F]))
            out = np.flatnonzero(~free)
            if out.size == 0:
                return w, True
            viol = g[out] - nu
            j = int(np.argmin(viol))
            if viol[j] >= -tol * scale:
                return w, True
            free[out[j]] = True
            at_face_min = False
            continue
        m = F.size
        K = np.zeros((m + 1, m + 1))
        K[:m, :m] = H[np.ix_(F, F)]
        K[:m, m] = 1.0
        K[m, :m] = 1.0
        rhs = np.zeros(m + 1)
        rhs[:m] = -g[F]
        U, s, Vt = np.linalg.svd(K)
        small = s <= s[0] * 1e-11
        N = Vt[small].T
        d = (N @ (N.T @ rhs))[:m]
        if N.size and float(g[F] @ d) < -1e-14 * scale * max(float(np.abs(d).max()), 1e-300):
            step, alpha_max = d, np.inf
        else:
            keep = ~small
            sol = Vt[keep].T @ ((U[:, keep].T @ rhs) / s[keep])
            step, alpha_max = sol[:m], 1.0
        neg = step < 0
        block = -1
        alpha = alpha_max
        if neg.any():
            ratios = -w[F][neg] / step[neg]
            i = int(np.argmin(ratios))
            if ratios[i] < alpha_max:
                alpha, block = float(ratios[i]), int(F[neg][i])
        elif not np.isfinite(alpha_max):
            return w, False
        w[F] += alpha * step
        if block >= 0:
            w[block] = 0.0
            free[block] = False
        else:
            at_face_min = True
        w = np.maximum(w, 0.0)
        w /= w.sum()
        free &= w > 0
    return w, False


@numba.njit(cache=True)
def _closest_to_uniform(A, c, w, tol, max_steps):
    """Minimizer nearest the uniform vector among those sharing ``A w`` and ``c . w``.

    Primal active-set projection of the uniform vector onto
    ``{x >= 0, E x = E w}`` with ``E = [A; c; 1]``, started from the feasible ``w``.
    """
    k, J = A.shape
    E = np.empty((k + 2, J))
    E[:k] = A
    E[k] = c
    E[k + 1] = 1.0
    for i in range(k + 2):
        m = np.abs(E[i]).max()
        if m > 0:
            E[i] /= m
    u = np.full(J, 1.0 / J)
    x = w.copy()
    free = x > 0
    for _ in range(max_steps):
        F = np.flatnonzero(free)
        EF = np.ascontiguousarray(E[:, F])
        U, s, Vt = np.linalg.svd(EF)
        rank = 0
        if s.size and s[0] > 0:
            rank = int(np.sum(s > s[0] * 1e-10))
        # move within the null space of E_F toward the projection of u
        N = Vt[rank:].T.copy()
        r = x[F] - u[F]
        step = -(N @ (N.T @ r))
        alpha = 1.0
        block = -1
        for i in range(F.size):
            if step[i] < 0:
                ratio = -x[F[i]] / step[i]
                if ratio < alpha:
                    alpha, block = ratio, F[i]
        for i in range(F.size):
            x[F[i]] += alpha * step[i]
        if block >= 0:
            x[block] = 0.0
            free[block] = False
            continue
        out = np.flatnonzero(~free)
        if out.size == 0:
            return x
        # face optimum: release the bound with the most negative multiplier
        rF = x[F] - u[F]
        mu = -(np.ascontiguousarray(U[:, :rank]) @ ((np.ascontiguousarray(Vt[:rank]) @ rF) / s[:rank]))
        j = -1
        worst = -tol
        for i in out:
            nu = x[i] - u[i] + np.dot(E.T[i].copy(), mu)
            if nu < worst:
                worst, j = nu, i
        if j < 0:
            return x
        free[j] = True
    return x


def solve_weights(obj: InnerObjective, tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> np.ndarray:
    """Global minimizer of :func:`objective_value` over the simplex.

    Accelerated projected gradient runs from the uniform vector; its iterate
    is refined by an active-set pass that identifies the optimal face
    exactly. Among several minimizers the one nearest the uniform vector is
    kept. The result is accepted when the gradient mapping
    ``|w - P(w - g/L)|`` (relative to ``max(1, |g|_inf / L)``) is below
    ``tol``. Weights below 1e-9 are then set to zero and the vector
    renormalized.

    Raises
    ------
    DidNotConverge
        If no iterate meets ``tol`` within ``max_iters`` gradient steps.
    """
    if not tol > 0:
        raise SynthControlError("tol must be positive")
    J = obj.J
    if J == 1:
        return np.ones(1)
    sv = np.sqrt(obj.v_diag)
    A = np.ascontiguousarray(sv[:, None] * obj.fit_X0)
    b = np.ascontiguousarray(sv * obj.fit_X1)
    c = np.ascontiguousarray(obj.lam * obj.penalty_costs())
    L = 2.0 * float(np.linalg.norm(A, 2)) ** 2
    if not L > 0:
        L = 1.0
    H = 2.0 * (A.T @ A)
    q = c - 2.0 * (A.T @ b)

    warm = min(int(max_iters), _WARM_START_ITERS)
    x, f, gnorm, _, _ = _apg(A, b, c, L, float(tol), warm)
    x = np.where(x < SNAP, 0.0, x)
    x /= x.sum()
    best, ok = _active_set(H, q, x, float(tol), 20 * J + 100)
    if not (ok and _stationarity(H, q, best, L) <= tol):
        best, f, gnorm, _, ok = _apg(A, b, c, L, float(tol), int(max_iters))
        if not ok:
            raise DidNotConverge(
                f"simplex solver did not converge in {max_iters} iterations "
                f"(objective={f:.6g}, gradient norm={gnorm:.3g})",
                objective=f,
                gradient_norm=gnorm,
            )
    best = np.where(best < SNAP, 0.0, best)
    best /= best.sum()
    canon = np.maximum(_closest_to_uniform(A, c, best, float(tol), 20 * J + 100), 0.0)
    canon /= canon.sum()
    f_best = objective_value(obj, best)
    if objective_value(obj, canon) <= f_best + tol * max(1.0, abs(f_best)):
        best = np.where(canon < SNAP, 0.0, canon)
        best /= best.sum()
    return best
