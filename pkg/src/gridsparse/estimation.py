"""State estimation from possibly tampered measurements.

Four estimators share the measurement model z = H x + n:

* wls_estimate: closed-form weighted least squares, the operator's
  baseline.  H never has full column rank on a connected grid (the
  all-ones shift is unobservable), so the minimum-norm solution is
  returned and only the fitted values H x_hat are physically meaningful.
* distributed_state_estimate: meters are split into row clusters that
  agree on a common state through consensus iterations.
* collaborative_state_estimate: state variables are split into column
  groups; clusters exchange only their fitted share of the measurements.
* delta_state_estimate: recovers a sparse state change between two
  snapshots from the measurement difference, with the residual budget
  enforced by bisection on the l1 penalty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .admm import (InnerSolverConfig, SolverConfig, consensus_lasso_admm,
                   lasso_admm, sharing_group_lasso_admm)
from .errors import InfeasibleError

METHOD_WLS = "wls"
METHOD_DISTRIBUTED = "distributed_l1"
METHOD_COLLABORATIVE = "collaborative_group"
METHOD_DELTA = "delta_cs"

#: number of bisection steps when tuning the delta-state penalty.
DELTA_BISECTION_STEPS = 20


@dataclass(frozen=True)
class MeasurementSnapshot:
    """One vector of meter readings, optionally stamped."""

    z: np.ndarray
    timestamp: float | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).ravel()
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint index groups along one axis of H.

    Groups are canonicalized (each sorted, ordered by first element) so
    that permuting the input order cannot change any downstream result.
    """

    axis: str
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.axis not in ("rows", "columns"):
            raise ValueError("axis must be 'rows' or 'columns'")
        canon = []
        for group in self.groups:
            members = tuple(sorted(int(i) for i in group))
            if not members:
                raise ValueError("empty cluster")
            canon.append(members)
        canon.sort(key=lambda g: g[0])
        flat = [i for group in canon for i in group]
        if len(set(flat)) != len(flat):
            raise ValueError("clusters must be disjoint")
        object.__setattr__(self, "groups", tuple(canon))

    @property
    def n_clusters(self) -> int:
        return len(self.groups)

    def covered(self) -> tuple[int, ...]:
        return tuple(sorted(i for group in self.groups for i in group))

    def check_covers(self, n: int) -> None:
        if self.covered() != tuple(range(n)):
            raise ValueError(
                "partition must cover exactly the {} {}".format(n, self.axis))


@dataclass(frozen=True)
class StateEstimate:
    method: str
    x_hat: np.ndarray
    converged: bool
    iterations: int
    per_cluster: tuple[np.ndarray, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "x_hat": [float(v) for v in self.x_hat],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class DeltaQuery:
    """Inputs for sparse change recovery between two snapshots.

    gamma budgets the squared residual of the explained difference;
    epsilon is the magnitude at which a state counts as changed.
    """

    previous_estimate: np.ndarray
    measurement_difference: np.ndarray
    gamma: float
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "previous_estimate",
                           np.asarray(self.previous_estimate, dtype=float).ravel())
        object.__setattr__(self, "measurement_difference",
                           np.asarray(self.measurement_difference, dtype=float).ravel())
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class DeltaEstimate:
    delta: np.ndarray
    changed_set: tuple[int, ...]
    updated_estimate: np.ndarray
    residual_sq: float
    lam: float
    converged: bool
    iterations: int = 0


# ---------------------------------------------------------------------------

def _measurement_vector(model, snapshot) -> np.ndarray:
    z = np.asarray(getattr(snapshot, "z", snapshot), dtype=float).ravel()
    if z.size != model.jacobian.shape[0]:
        raise ValueError("snapshot has {} entries, model expects {}".format(
            z.size, model.jacobian.shape[0]))
    return z


def _config_with_lambda(h: np.ndarray, v: np.ndarray, config: SolverConfig,
                        lambda_scale: float | None) -> SolverConfig:
    if lambda_scale is None:
        return config
    lam = float(lambda_scale * np.abs(h.T @ v).max())
    return SolverConfig(lam=lam, rho=config.rho, eps_abs=config.eps_abs,
                        eps_rel=config.eps_rel, max_iter=config.max_iter)


def wls_estimate(model, snapshot) -> StateEstimate:
    """Minimum-norm weighted least squares, weights 1/variance."""
    z = _measurement_vector(model, snapshot)
    var = np.asarray(model.noise_variances, dtype=float)
    if np.any(var <= 0):
        raise ValueError("noise variances must be positive")
    w = 1.0 / np.sqrt(var)
    x_hat, *_ = np.linalg.lstsq(w[:, None] * model.jacobian, w * z, rcond=None)
    return StateEstimate(method=METHOD_WLS, x_hat=x_hat, converged=True,
                         iterations=0)


def distributed_state_estimate(model, snapshot, partition: ClusterPartition,
                               config: SolverConfig,
                               lambda_scale: float | None = 0.5) -> StateEstimate:
    """Consensus estimate over row clusters of the measurement set.

    With lambda_scale set (default 1/2), the sparsity penalty is
    lambda_scale * ||H^T z||_inf per snapshot; pass None to use
    config.lam verbatim.
    """
    z = _measurement_vector(model, snapshot)
    if partition.axis != "rows":
        raise ValueError("distributed estimation needs a row partition")
    h = model.jacobian
    partition.check_covers(h.shape[0])
    cfg = _config_with_lambda(h, z, config, lambda_scale)
    rows = [np.asarray(group, dtype=int) for group in partition.groups]
    result = consensus_lasso_admm([(h[idx], z[idx]) for idx in rows], cfg)
    return StateEstimate(method=METHOD_DISTRIBUTED, x_hat=result.solution,
                         converged=result.converged, iterations=result.iterations,
                         per_cluster=result.local_iterates)


def collaborative_state_estimate(model, snapshot, partition: ClusterPartition,
                                 config: SolverConfig,
                                 inner: InnerSolverConfig | None = None,
                                 lambda_scale: float | None = 0.5) -> StateEstimate:
    """Sharing estimate over column groups of the state vector."""
    z = _measurement_vector(model, snapshot)
    if partition.axis != "columns":
        raise ValueError("collaborative estimation needs a column partition")
    h = model.jacobian
    partition.check_covers(h.shape[1])
    cfg = _config_with_lambda(h, z, config, lambda_scale)
    result = sharing_group_lasso_admm(h, [list(g) for g in partition.groups],
                                      z, cfg, inner)
    return StateEstimate(method=METHOD_COLLABORATIVE, x_hat=result.solution,
                         converged=result.converged, iterations=result.iterations,
                         per_cluster=result.local_iterates)


def delta_state_estimate(model, query: DeltaQuery,
                         config: SolverConfig) -> DeltaEstimate:
    """Sparsest state change explaining the measurement difference.

    Solves min ||dz - H d||^2 + lam ||d||_1 with lam bisected upward to
    the loosest penalty whose residual still fits the gamma budget.
    config.lam is ignored; everything else (rho, stopping rule) is
    reused for the inner solves.
    """
    h = model.jacobian
    n, d = h.shape
    dz = query.measurement_difference
    if dz.size != n:
        raise ValueError("measurement difference has {} entries, model expects {}".format(dz.size, n))
    if query.previous_estimate.size != d:
        raise ValueError("previous estimate has {} entries, model expects {}".format(query.previous_estimate.size, d))

    def residual_sq(delta):
        gap = dz - h @ delta
        return float(gap @ gap)

    ls, *_ = np.linalg.lstsq(h, dz, rcond=None)
    floor = residual_sq(ls)
    if query.gamma < floor * (1.0 - 1e-9):
        raise InfeasibleError(
            "gamma {:.3e} is below the minimum achievable residual {:.3e}".format(
                query.gamma, floor))

    lam_max = float(np.abs(h.T @ dz).max())
    if residual_sq(np.zeros(d)) <= query.gamma:
        # the zero change already fits the budget; nothing sparser exists
        delta = np.zeros(d)
        return DeltaEstimate(delta=delta, changed_set=(),
                             updated_estimate=query.previous_estimate.copy(),
                             residual_sq=residual_sq(delta), lam=lam_max,
                             converged=True, iterations=0)

    def solve(lam):
        cfg = SolverConfig(lam=lam, rho=config.rho, eps_abs=config.eps_abs,
                           eps_rel=config.eps_rel, max_iter=config.max_iter)
        return lasso_admm(h, dz, cfg)

    # least squares is feasible at the floor, so it seeds the incumbent
    best_lam, best_delta, best_conv = 0.0, ls, True
    lo, hi = 0.0, lam_max
    iterations = 0
    for _ in range(DELTA_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        result = solve(mid)
        iterations += result.iterations
        if residual_sq(result.solution) <= query.gamma:
            lo = mid
            best_lam, best_delta, best_conv = mid, result.solution, result.converged
        else:
            hi = mid

    changed = tuple(int(i) for i in np.flatnonzero(np.abs(best_delta) >= query.epsilon))
    return DeltaEstimate(delta=best_delta, changed_set=changed,
                         updated_estimate=query.previous_estimate + best_delta,
                         residual_sq=residual_sq(best_delta), lam=best_lam,
                         converged=best_conv, iterations=iterations)
