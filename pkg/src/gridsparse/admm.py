"""ADMM solvers for the sparse recovery problems used by attacks and estimation.

All solvers share the plain two-block ADMM template: a smooth step, a
threshold step, a dual update, and the usual absolute/relative stopping
rule.  The l1 solvers minimize

    (1/2) ||y - A x||^2 + lambda ||x||_1

so the zero solution appears exactly at lambda >= ||A^T y||_inf.  The
consensus and sharing variants split the same objective over row blocks
and column groups respectively; the sharing variant carries the group
penalty sum_i ||x_i||_2 of the un-halved objective (see the module docs
of each solver for the exact scaling).

Ridge subproblem factorizations are cached per (matrix, rho) so repeat
solves against the same operator factor once; see instrumentation().
"""

from __future__ import annotations

import hashlib
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigError, InfeasibleError

logger = logging.getLogger(__name__)

_FEASIBILITY_RTOL = 1e-6
_CACHE_MAX = 32


@dataclass(frozen=True)
class SolverConfig:
    """Shared ADMM knobs.

    lam is the l1 / group penalty weight; solvers that take sparsity as a
    count (regressor selection) or a fixed threshold (basis pursuit)
    ignore it.
    """

    lam: float = 0.0
    rho: float = 1.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iter: int = 10000

    def __post_init__(self):
        if self.rho <= 0:
            raise ConfigError("rho must be positive, got {}".format(self.rho))
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative, got {}".format(self.lam))
        if self.eps_abs < 0 or self.eps_rel < 0:
            raise ConfigError("tolerances must be nonnegative")
        if self.eps_abs == 0 and self.eps_rel == 0:
            raise ConfigError("at least one of eps_abs/eps_rel must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")


@dataclass(frozen=True)
class InnerSolverConfig:
    """Proximal-gradient loop used inside the sharing solver."""

    tol: float = 1e-8
    max_iter: int = 500

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ConfigError("inner solver needs tol > 0 and max_iter >= 1")


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one ADMM run.

    solution is the thresholded iterate (the sparse one); dense_iterate
    is the final smooth-step iterate, kept for parity checks.  Consensus
    and sharing solvers also expose their final per-cluster iterates.
    """

    solution: np.ndarray
    converged: bool
    iterations: int
    primal_residuals: np.ndarray
    dual_residuals: np.ndarray
    dense_iterate: np.ndarray | None = None
    local_iterates: tuple[np.ndarray, ...] | None = None


# ---------------------------------------------------------------------------
# elementwise operators

def soft_threshold(values: np.ndarray, kappa: float) -> np.ndarray:
    """Elementwise shrinkage max(0, v - kappa) - max(0, -v - kappa)."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    v = np.asarray(values, dtype=float)
    return np.maximum(v - kappa, 0.0) - np.maximum(-v - kappa, 0.0)


def block_soft_threshold(vector: np.ndarray, kappa: float) -> np.ndarray:
    """Shrink a whole vector toward zero: max(0, 1 - kappa/||v||) v."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    v = np.asarray(vector, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= kappa:
        return np.zeros_like(v)
    return (1.0 - kappa / norm) * v


def hard_threshold_keep_k(values: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries, zero the rest.

    Ties in magnitude are broken toward the lowest index (stable sort),
    and kept values pass through unchanged.
    """
    v = np.asarray(values, dtype=float)
    if not 0 <= k <= v.size:
        raise ValueError("k must lie in [0, {}], got {}".format(v.size, k))
    out = np.zeros_like(v)
    if k == 0:
        return out
    if k == v.size:
        return v.copy()
    order = np.argsort(-np.abs(v), kind="stable")
    keep = order[:k]
    out[keep] = v[keep]
    return out


def stopping_check(primal_norm: float, dual_norm: float, ax_norm: float,
                   z_norm: float, dual_var_norm: float, dim: int,
                   config: SolverConfig) -> bool:
    """Absolute/relative stopping rule; boundary equality counts as met."""
    eps_pri = np.sqrt(dim) * config.eps_abs + config.eps_rel * max(ax_norm, z_norm)
    eps_dual = np.sqrt(dim) * config.eps_abs + config.eps_rel * dual_var_norm
    return primal_norm <= eps_pri and dual_norm <= eps_dual


# ---------------------------------------------------------------------------
# cached ridge systems

class _RidgeSystem:
    """Solves (A^T A + rho I) x = q, factoring once.

    For fat A (fewer rows than columns) the small system
    (A A^T + rho I) is factored instead and solves go through
    x = (q - A^T (A A^T + rho I)^{-1} A q) / rho.
    """

    def __init__(self, a: np.ndarray, rho: float):
        n, d = a.shape
        self._a = a
        self._rho = rho
        self._fat = n < d
        if self._fat:
            gram = a @ a.T
            gram[np.diag_indices(n)] += rho
        else:
            gram = a.T @ a
            gram[np.diag_indices(d)] += rho
        self._chol = cho_factor(gram)

    def solve(self, q: np.ndarray) -> np.ndarray:
        if self._fat:
            return (q - self._a.T @ cho_solve(self._chol, self._a @ q)) / self._rho
        return cho_solve(self._chol, q)


_cache_lock = threading.Lock()
_factor_cache: OrderedDict[tuple, _RidgeSystem] = OrderedDict()
_counters = {"factorizations": 0, "cache_hits": 0}


def _ridge_system(a: np.ndarray, rho: float) -> _RidgeSystem:
    digest = hashlib.blake2b(a.tobytes(), digest_size=16).digest()
    key = (digest, a.shape, float(rho))
    with _cache_lock:
        system = _factor_cache.get(key)
        if system is not None:
            _counters["cache_hits"] += 1
            _factor_cache.move_to_end(key)
            return system
    system = _RidgeSystem(a, rho)
    with _cache_lock:
        _counters["factorizations"] += 1
        _factor_cache[key] = system
        while len(_factor_cache) > _CACHE_MAX:
            _factor_cache.popitem(last=False)
    return system


def instrumentation() -> dict:
    """Copy of the factorization counters (factorizations, cache_hits)."""
    with _cache_lock:
        return dict(_counters)


def reset_instrumentation() -> None:
    with _cache_lock:
        _counters["factorizations"] = 0
        _counters["cache_hits"] = 0
        _factor_cache.clear()


def _as_matrix_vector(a, y):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if a.ndim != 2:
        raise ValueError("expected a 2-d matrix, got ndim={}".format(a.ndim))
    if a.shape[0] != y.size:
        raise ValueError(
            "matrix has {} rows but the target vector has {} entries".format(
                a.shape[0], y.size
            )
        )
    if not (np.isfinite(a).all() and np.isfinite(y).all()):
        raise ValueError("inputs must be finite")
    return a, y


# ---------------------------------------------------------------------------
# solvers

def lasso_admm(a: np.ndarray, y: np.ndarray,
               config: SolverConfig) -> SolveResult:
    """Minimize (1/2)||y - A x||^2 + lam ||x||_1.

    Smooth step (A^T A + rho I)^{-1}(A^T y + rho (z - u)), shrinkage at
    lam/rho, scaled dual update.  The factorization is cached across
    calls with the same (A, rho).
    """
    a, y = _as_matrix_vector(a, y)
    d = a.shape[1]
    system = _ridge_system(a, config.rho)
    aty = a.T @ y

    x = np.zeros(d)
    z = np.zeros(d)
    u = np.zeros(d)
    kappa = config.lam / config.rho
    primal_hist = []
    dual_hist = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        x = system.solve(aty + config.rho * (z - u))
        z_new = soft_threshold(x + u, kappa)
        u += x - z_new
        primal = float(np.linalg.norm(x - z_new))
        dual = float(config.rho * np.linalg.norm(z_new - z))
        z = z_new
        primal_hist.append(primal)
        dual_hist.append(dual)
        if stopping_check(primal, dual, float(np.linalg.norm(x)),
                          float(np.linalg.norm(z)),
                          float(config.rho * np.linalg.norm(u)), d, config):
            converged = True
            break
    return SolveResult(solution=z, converged=converged, iterations=it,
                       primal_residuals=np.array(primal_hist),
                       dual_residuals=np.array(dual_hist), dense_iterate=x)


def basis_pursuit_admm(b: np.ndarray, y: np.ndarray,
                       config: SolverConfig) -> SolveResult:
    """Minimize ||x||_1 subject to B x = y.

    Smooth step is the projection onto the affine feasible set; the
    shrinkage level is the fixed 1/rho (config.lam is ignored).
    Raises InfeasibleError when y is not in the range of B.
    """
    b, y = _as_matrix_vector(b, y)
    n = b.shape[1]
    pinv_b = np.linalg.pinv(b)
    x_feas = pinv_b @ y
    gap = np.linalg.norm(b @ x_feas - y)
    if gap > _FEASIBILITY_RTOL * max(np.linalg.norm(y), 1.0):
        raise InfeasibleError(
            "y is not in the range of B (projection gap {:.3e})".format(gap)
        )

    x = np.zeros(n)
    z = np.zeros(n)
    u = np.zeros(n)
    kappa = 1.0 / config.rho
    primal_hist = []
    dual_hist = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        v = z - u
        x = v - pinv_b @ (b @ v - y)
        z_new = soft_threshold(x + u, kappa)
        u += x - z_new
        primal = float(np.linalg.norm(x - z_new))
        dual = float(config.rho * np.linalg.norm(z_new - z))
        z = z_new
        primal_hist.append(primal)
        dual_hist.append(dual)
        if stopping_check(primal, dual, float(np.linalg.norm(x)),
                          float(np.linalg.norm(z)),
                          float(config.rho * np.linalg.norm(u)), n, config):
            converged = True
            break
    return SolveResult(solution=z, converged=converged, iterations=it,
                       primal_residuals=np.array(primal_hist),
                       dual_residuals=np.array(dual_hist), dense_iterate=x)


def regressor_selection_admm(a: np.ndarray, y: np.ndarray, k: int,
                             config: SolverConfig) -> SolveResult:
    """Heuristic for min ||y - A x||^2 subject to ||x||_0 <= k.

    Same iteration as lasso_admm with the shrinkage replaced by keeping
    the k largest-magnitude entries.  Since the hard threshold makes the
    iteration a heuristic, every distinct support visited is scored by
    its least-squares objective (bounded bookkeeping) and the returned
    solution is the refit on the best support seen, so ||x||_0 <= k
    holds exactly.
    """
    a, y = _as_matrix_vector(a, y)
    d = a.shape[1]
    if not 0 <= k <= d:
        raise ValueError("k must lie in [0, {}], got {}".format(d, k))
    system = _ridge_system(a, config.rho)
    aty = a.T @ y

    x = np.zeros(d)
    z = np.zeros(d)
    u = np.zeros(d)
    primal_hist = []
    dual_hist = []
    converged = False
    it = 0
    seen: set[tuple] = set()
    best_obj = float(y @ y)  # empty support
    best_coef = None
    best_support = np.array([], dtype=int)
    max_scored = 256

    for it in range(1, config.max_iter + 1):
        x = system.solve(aty + config.rho * (z - u))
        z_new = hard_threshold_keep_k(x + u, k)
        support = tuple(np.flatnonzero(z_new))
        if support and support not in seen and len(seen) < max_scored:
            seen.add(support)
            cols = np.array(support, dtype=int)
            coef, *_ = np.linalg.lstsq(a[:, cols], y, rcond=None)
            resid = y - a[:, cols] @ coef
            obj = float(resid @ resid)
            if obj < best_obj:
                best_obj = obj
                best_coef = coef
                best_support = cols
        u += x - z_new
        primal = float(np.linalg.norm(x - z_new))
        dual = float(config.rho * np.linalg.norm(z_new - z))
        z = z_new
        primal_hist.append(primal)
        dual_hist.append(dual)
        if stopping_check(primal, dual, float(np.linalg.norm(x)),
                          float(np.linalg.norm(z)),
                          float(config.rho * np.linalg.norm(u)), d, config):
            converged = True
            break

    solution = np.zeros(d)
    if best_coef is not None:
        solution[best_support] = best_coef
    return SolveResult(solution=solution, converged=converged, iterations=it,
                       primal_residuals=np.array(primal_hist),
                       dual_residuals=np.array(dual_hist), dense_iterate=x)


def consensus_lasso_admm(blocks, config: SolverConfig) -> SolveResult:
    """Row-split lasso: each cluster holds (A_i, y_i); a global consensus
    iterate is shrunk at lam/(rho G).

    Minimizes (1/2) sum_i ||y_i - A_i x||^2 + lam ||x||_1, agreeing with
    lasso_admm on the stacked system.  Cluster updates are computed in
    ascending cluster order; all-single-row partitions take a vectorized
    path with identical arithmetic.
    """
    prepared = []
    for i, (a_i, y_i) in enumerate(blocks):
        a_i, y_i = _as_matrix_vector(a_i, y_i)
        prepared.append((a_i, y_i))
    if not prepared:
        raise ValueError("need at least one cluster")
    d = prepared[0][0].shape[1]
    for i, (a_i, _) in enumerate(prepared):
        if a_i.shape[1] != d:
            raise ValueError(
                "cluster {} has {} columns, expected {}".format(i, a_i.shape[1], d)
            )
    g = len(prepared)
    kappa = config.lam / (config.rho * g)

    singleton = all(a_i.shape[0] == 1 for a_i, _ in prepared)
    if singleton:
        h_stack = np.vstack([a_i for a_i, _ in prepared])          # G x d
        y_stack = np.array([y_i[0] for _, y_i in prepared])
        row_sq = np.einsum("ij,ij->i", h_stack, h_stack)
        scale = row_sq + config.rho
        aty = y_stack[:, None] * h_stack                            # G x d
    else:
        systems = [_ridge_system(a_i, config.rho) for a_i, _ in prepared]
        atys = [a_i.T @ y_i for a_i, y_i in prepared]

    x = np.zeros((g, d))
    u = np.zeros((g, d))
    z = np.zeros(d)
    primal_hist = []
    dual_hist = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        if singleton:
            q = aty + config.rho * (z[None, :] - u)
            dots = np.einsum("ij,ij->i", h_stack, q)
            x = (q - h_stack * (dots / scale)[:, None]) / config.rho
        else:
            for i in range(g):
                x[i] = systems[i].solve(atys[i] + config.rho * (z - u[i]))
        z_new = soft_threshold((x + u).mean(axis=0), kappa)
        u += x - z_new[None, :]
        primal = float(np.linalg.norm(x - z_new[None, :]))
        dual = float(config.rho * np.sqrt(g) * np.linalg.norm(z_new - z))
        z = z_new
        primal_hist.append(primal)
        dual_hist.append(dual)
        if stopping_check(primal, dual, float(np.linalg.norm(x)),
                          float(np.sqrt(g) * np.linalg.norm(z)),
                          float(config.rho * np.linalg.norm(u)), g * d, config):
            converged = True
            break
    return SolveResult(solution=z, converged=converged, iterations=it,
                       primal_residuals=np.array(primal_hist),
                       dual_residuals=np.array(dual_hist),
                       local_iterates=tuple(row.copy() for row in x))


def _group_subproblem(h, gram, lip, r, w0, lam, rho,
                      inner: InnerSolverConfig) -> np.ndarray:
    """argmin_w rho ||h w - r||^2 + lam ||w||_2 by proximal gradient.

    Exact shortcuts: zero when the zero subgradient condition holds, and
    the closed form for single-column groups.
    """
    c = h.T @ r
    if 2.0 * rho * np.linalg.norm(c) <= lam:
        return np.zeros(h.shape[1])
    if h.shape[1] == 1:
        num = soft_threshold(np.array([2.0 * rho * c[0]]), lam)[0]
        return np.array([num / (2.0 * rho * gram[0, 0])])
    step = 1.0 / lip
    w = w0.copy()
    for _ in range(inner.max_iter):
        grad = 2.0 * rho * (gram @ w - c)
        w_new = block_soft_threshold(w - step * grad, step * lam)
        if np.linalg.norm(w_new - w) <= inner.tol * max(np.linalg.norm(w_new), 1.0):
            w = w_new
            break
        w = w_new
    return w


def sharing_group_lasso_admm(a: np.ndarray, groups, y: np.ndarray,
                             config: SolverConfig,
                             inner: InnerSolverConfig | None = None) -> SolveResult:
    """Column-group sharing solver for ||A x - y||^2 + lam sum_i ||x_i||_2.

    Each cluster owns one column group; clusters exchange only the
    average of their fitted contributions.  The aggregate update divides
    by (G + rho), which is the exact minimizer for the un-halved data
    term (hence the lam scaling differs from lasso_admm by a factor of
    two when every group is a single column).

    Group blocks of the returned solution are exactly zero or dense.
    """
    a, y = _as_matrix_vector(a, y)
    if inner is None:
        inner = InnerSolverConfig()
    n, d = a.shape
    index_groups = [np.asarray(grp, dtype=int) for grp in groups]
    flat = np.concatenate(index_groups) if index_groups else np.array([], dtype=int)
    if sorted(flat.tolist()) != list(range(d)):
        raise ValueError("groups must partition the {} columns exactly".format(d))
    g = len(index_groups)

    subs = []
    for grp in index_groups:
        h = a[:, grp]
        gram = h.T @ h
        lip = 2.0 * config.rho * float(np.linalg.eigvalsh(gram)[-1]) if grp.size else 0.0
        subs.append((h, gram, max(lip, np.finfo(float).tiny)))

    x = [np.zeros(grp.size) for grp in index_groups]
    hx = np.zeros((g, n))
    vbar = np.zeros(n)
    u = np.zeros(n)
    primal_hist = []
    dual_hist = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        avg = hx.mean(axis=0)
        for i in range(g):
            h, gram, lip = subs[i]
            r = hx[i] + vbar - avg - u
            x[i] = _group_subproblem(h, gram, lip, r, x[i],
                                     config.lam, config.rho, inner)
            hx[i] = h @ x[i]
        avg_new = hx.mean(axis=0)
        vbar_new = (y + config.rho * avg_new + config.rho * u) / (g + config.rho)
        u += avg_new - vbar_new
        primal = float(np.sqrt(g) * np.linalg.norm(avg_new - vbar_new))
        dual = float(config.rho * np.sqrt(g) * np.linalg.norm(vbar_new - vbar))
        vbar = vbar_new
        primal_hist.append(primal)
        dual_hist.append(dual)
        if stopping_check(primal, dual, float(np.linalg.norm(hx)),
                          float(np.sqrt(g) * np.linalg.norm(vbar)),
                          float(config.rho * np.sqrt(g) * np.linalg.norm(u)),
                          g * n, config):
            converged = True
            break

    solution = np.zeros(d)
    for grp, block in zip(index_groups, x):
        solution[grp] = block
    return SolveResult(solution=solution, converged=converged, iterations=it,
                       primal_residuals=np.array(primal_hist),
                       dual_residuals=np.array(dual_hist),
                       local_iterates=tuple(block.copy() for block in x))
