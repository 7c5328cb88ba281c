"""Construction of sparse false-data injection vectors.

An injection a is unobservable to residual tests exactly when a = H c
for some state perturbation c: the attack then moves the estimate to
x + c without changing any residual.  The constructions here search for
sparse vectors of that kind under different attacker models:

* targeted: fixed injections on a chosen subset of states, remaining
  degrees of freedom spent on sparsity of a (lasso or cardinality-
  constrained regression on the projected system);
* strategic: a subset of meters is out of reach ("secure"); column
  elimination finds a state direction whose image avoids them;
* random: a dense-amplitude benchmark with no structure;
* distributed / collective: the sparse recovery itself is split across
  row clusters (consensus) or column groups (sharing).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .admm import (InnerSolverConfig, SolverConfig, consensus_lasso_admm,
                   lasso_admm, regressor_selection_admm,
                   sharing_group_lasso_admm)

logger = logging.getLogger(__name__)

#: |.| below this counts as zero when reporting achieved support sizes.
ZERO_TOL = 1e-6
#: secure-side image below this counts as leak-free.
LEAK_TOL = 1e-6
#: relative singular-value cutoff for the off-target projector.
PROJECTION_RCOND = 1e-10


@dataclass(frozen=True)
class AttackSpec:
    """Attacker inputs.

    targeted_values maps state indices to the injection the attacker
    wants on those states (targeted modes).  attacked_meters lists the
    measurement indices the attacker can touch (strategic modes; None
    means all of them).  k bounds the support; psi is the minimum
    injection magnitude enforced after scaling (strategic modes).
    """

    targeted_values: dict[int, float] = field(default_factory=dict)
    attacked_meters: tuple[int, ...] | None = None
    k: int = 0
    psi: float = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.psi < 0:
            raise ValueError("psi must be nonnegative")

    @classmethod
    def with_secure(cls, n_measurements: int, secure_meters,
                    k: int = 0, psi: float = 1.0) -> "AttackSpec":
        """Build a strategic spec from the secure set instead of its
        complement."""
        secure = set(int(i) for i in secure_meters)
        if secure and (min(secure) < 0 or max(secure) >= n_measurements):
            raise ValueError(
                "secure meter index out of range [0, {})".format(n_measurements))
        attacked = tuple(i for i in range(n_measurements) if i not in secure)
        return cls(attacked_meters=attacked, k=k, psi=psi)


@dataclass(frozen=True)
class ProjectionPair:
    """Projector onto the span of the off-target columns and its shift.

    complement maps any candidate a to B a = (P - I) a; target_image is
    B b for the targeted injection b, so candidates must solve
    B a = target_image.
    """

    projection: np.ndarray        # P, N x N
    complement: np.ndarray        # B = P - I
    target_image: np.ndarray      # y = B b
    off_target: tuple[int, ...]   # sorted state indices not targeted


@dataclass(frozen=True)
class UnobservabilityResult:
    unobservable: bool
    residual: float


@dataclass(frozen=True)
class AttackVector:
    """A constructed injection with its recovery metadata.

    a is the candidate injection used for support statistics; c is the
    state perturbation it encodes (absent for random attacks).  residual
    is the relative distance of a from the range of H; leak is the
    largest magnitude the injection shows on secure meters (strategic
    modes only).
    """

    kind: str
    a: np.ndarray
    c: np.ndarray | None
    k: int | None
    converged: bool
    residual: float | None
    leak: float | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "a": [float(v) for v in self.a],
            "c": None if self.c is None else [float(v) for v in self.c],
            "k": self.k,
            "converged": bool(self.converged),
            "residual": None if self.residual is None else float(self.residual),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


# ---------------------------------------------------------------------------
# helpers

def _check_jacobian(h) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    if h.ndim != 2:
        raise ValueError("H must be a 2-d matrix")
    return h


def _support_size(a: np.ndarray, tol: float = ZERO_TOL) -> int:
    return int(np.count_nonzero(np.abs(a) > tol))


def _recover_state(h: np.ndarray, a: np.ndarray) -> np.ndarray:
    c, *_ = np.linalg.lstsq(h, a, rcond=None)
    return c


def unobservability_check(h, a, tol: float = ZERO_TOL) -> UnobservabilityResult:
    """Relative distance of a from the range of H.

    residual = min_c ||a - H c|| / max(||a||, tiny); unobservable when
    it does not exceed tol.  The zero vector is trivially unobservable.
    """
    h = _check_jacobian(h)
    a = np.asarray(a, dtype=float).ravel()
    if a.size != h.shape[0]:
        raise ValueError("a must have one entry per measurement")
    c = _recover_state(h, a)
    gap = np.linalg.norm(a - h @ c)
    residual = float(gap / max(np.linalg.norm(a), np.finfo(float).tiny))
    return UnobservabilityResult(unobservable=residual <= tol, residual=residual)


def build_projection(h, targeted_values: dict[int, float],
                     off_target=None,
                     off_target_values: dict[int, float] | None = None
                     ) -> ProjectionPair:
    """Project onto the span of the non-targeted columns of H.

    The projector is built from the singular vectors of the off-target
    block with a relative cutoff, which equals the pseudoinverse form
    P = H_off (H_off^T H_off)^+ H_off^T and stays exactly idempotent.
    off_target defaults to the complement of the targeted set and must
    equal it when given.  off_target_values optionally folds explicit
    injections on off-target states into b; since B annihilates their
    span this cannot move the target image, it only exists to mirror a
    sampled-values formulation.
    """
    h = _check_jacobian(h)
    n, d = h.shape
    if not targeted_values:
        raise ValueError("targeted_values must not be empty")
    targeted = sorted(targeted_values)
    if targeted[0] < 0 or targeted[-1] >= d:
        raise ValueError("targeted state index out of range [0, {})".format(d))
    off = tuple(j for j in range(d) if j not in targeted_values)
    if not off:
        raise ValueError("every state is targeted; no off-target span to project on")
    if off_target is not None and tuple(sorted(off_target)) != off:
        raise ValueError("off_target must be the complement of the targeted set")

    u, s, _ = np.linalg.svd(h[:, off], full_matrices=False)
    keep = s > PROJECTION_RCOND * s[0] if s.size else np.zeros(0, dtype=bool)
    basis = u[:, keep]
    projection = basis @ basis.T
    complement = projection - np.eye(n)

    b = np.zeros(n)
    for j, value in targeted_values.items():
        b += h[:, j] * float(value)
    if off_target_values:
        extra = set(off_target_values) - set(off)
        if extra:
            raise ValueError("off_target_values keys must be off-target states")
        for j, value in off_target_values.items():
            b += h[:, j] * float(value)
    return ProjectionPair(projection=projection, complement=complement,
                          target_image=complement @ b, off_target=off)


def _partition_groups(partition, n: int, axis: str) -> list[np.ndarray]:
    """Accept a ClusterPartition or a bare iterable of index groups.

    The groups must be disjoint and cover 0..n-1; a ClusterPartition
    additionally has to carry the expected axis.
    """
    part_axis = getattr(partition, "axis", axis)
    if part_axis != axis:
        raise ValueError("need a partition along {}, got {}".format(axis, part_axis))
    groups = [np.asarray(tuple(g), dtype=int)
              for g in getattr(partition, "groups", partition)]
    flat = sorted(i for g in groups for i in g.tolist())
    if flat != list(range(n)):
        raise ValueError("partition must cover all {} {} exactly once".format(n, axis))
    return groups


def _lam_for(a_mat: np.ndarray, y: np.ndarray, config: SolverConfig,
             lambda_scale: float | None) -> SolverConfig:
    if lambda_scale is None:
        return config
    lam = float(lambda_scale * np.abs(a_mat.T @ y).max()) if y.size else 0.0
    return SolverConfig(lam=lam, rho=config.rho, eps_abs=config.eps_abs,
                        eps_rel=config.eps_rel, max_iter=config.max_iter)


# ---------------------------------------------------------------------------
# targeted attacks

def targeted_lasso_attack(h, spec: AttackSpec, config: SolverConfig,
                          lambda_scale: float | None = None) -> AttackVector:
    """l1-sparse solution of B a = y on the off-target projection.

    With lambda_scale set, the penalty is lambda_scale * ||B^T y||_inf
    computed per instance; otherwise config.lam is used as given.
    """
    h = _check_jacobian(h)
    pair = build_projection(h, spec.targeted_values)
    cfg = _lam_for(pair.complement, pair.target_image, config, lambda_scale)
    result = lasso_admm(pair.complement, pair.target_image, cfg)
    a = result.solution
    c = _recover_state(h, a)
    check = unobservability_check(h, a)
    return AttackVector(kind="tla", a=a, c=c, k=_support_size(a),
                        converged=result.converged, residual=check.residual)


def targeted_selective_attack(h, spec: AttackSpec,
                              config: SolverConfig) -> AttackVector:
    """Cardinality-constrained variant: ||a||_0 <= k exactly."""
    h = _check_jacobian(h)
    n = h.shape[0]
    if spec.k > n:
        raise ValueError("k must not exceed the number of measurements")
    pair = build_projection(h, spec.targeted_values)
    result = regressor_selection_admm(pair.complement, pair.target_image,
                                      spec.k, config)
    a = result.solution
    c = _recover_state(h, a)
    check = unobservability_check(h, a)
    return AttackVector(kind="tsa", a=a, c=c, k=spec.k,
                        converged=result.converged, residual=check.residual)


# ---------------------------------------------------------------------------
# strategic attacks

def _strategic_candidates(h, spec, solve_column):
    """Try every state column as the pivot.

    Leak-free candidates (secure image below LEAK_TOL) are preferred;
    among them the winner touches the fewest attackable meters, ties
    broken by smaller leak then lower column index.  When no candidate
    is leak-free the smallest-leak one is returned with a warning.
    """
    h = _check_jacobian(h)
    n, d = h.shape
    if spec.attacked_meters is None:
        attacked = np.arange(n)
    else:
        attacked = np.asarray(sorted(set(spec.attacked_meters)), dtype=int)
        if attacked.size and (attacked[0] < 0 or attacked[-1] >= n):
            raise ValueError("attacked meter index out of range [0, {})".format(n))
    secure = np.setdiff1d(np.arange(n), attacked)
    h_att = h[attacked]
    h_sec = h[secure]

    candidates = []
    for i in range(d):
        others = [j for j in range(d) if j != i]
        if secure.size:
            sigma, ok = solve_column(h_sec[:, others], -h_sec[:, i])
        else:
            sigma, ok = np.zeros(d - 1), True  # no secure constraint at all
        c = np.zeros(d)
        c[i] = 1.0
        c[others] = sigma
        count = _support_size(h_att @ c)
        leak = float(np.abs(h_sec @ c).max()) if secure.size else 0.0
        candidates.append((count, leak, i, c, ok))

    leak_free = [t for t in candidates if t[1] <= LEAK_TOL]
    if leak_free:
        count, leak, i, c, ok = min(leak_free, key=lambda t: t[:3])
    else:
        count, leak, i, c, ok = min(candidates, key=lambda t: (t[1], t[0], t[2]))
        logger.warning("no leak-free candidate; best residual leak %.3e", leak)
    scale = max(spec.psi, np.abs(c).max()) / np.abs(c).max()
    c = c * scale
    a = h @ c
    check = unobservability_check(h, a)
    return a, c, ok, leak * scale, check.residual


def strategic_lasso_attack(h, spec: AttackSpec, config: SolverConfig,
                           lambda_scale: float | None = None) -> AttackVector:
    """Column-elimination attack with l1-relaxed secure-side nulling.

    For each candidate state column the remaining columns absorb its
    secure-side image through a lasso solve; the winning candidate is
    scaled so the largest state injection reaches at least psi.
    """
    def solve_column(a_mat, rhs):
        cfg = _lam_for(a_mat, rhs, config, lambda_scale)
        result = lasso_admm(a_mat, rhs, cfg)
        return result.solution, result.converged

    a, c, ok, leak, residual = _strategic_candidates(h, spec, solve_column)
    return AttackVector(kind="sla", a=a, c=c, k=_support_size(a),
                        converged=ok, residual=residual, leak=leak)


def strategic_selective_attack(h, spec: AttackSpec,
                               config: SolverConfig) -> AttackVector:
    """Strategic attack with a hard support bound: ||c||_0 <= k + 1.

    k = 0 degenerates to picking the best single column.  k is capped at
    D - 1 (the elimination vector has D - 1 free entries).
    """
    h = _check_jacobian(h)
    d = h.shape[1]
    k = min(spec.k, d - 1)

    def solve_column(a_mat, rhs):
        result = regressor_selection_admm(a_mat, rhs, k, config)
        return result.solution, result.converged

    a, c, ok, leak, residual = _strategic_candidates(h, spec, solve_column)
    return AttackVector(kind="ssa", a=a, c=c, k=_support_size(c, 0.0),
                        converged=ok, residual=residual, leak=leak)


# ---------------------------------------------------------------------------
# unstructured and split constructions

def random_sparse_attack(n_measurements: int, k: int, amp_mean: float,
                         amp_var: float, rng) -> AttackVector:
    """k distinct uniformly chosen meters with Gaussian amplitudes.

    rng is an integer seed or a numpy Generator; identical inputs give
    identical vectors.  No state vector is attached (the attack is
    generally observable).
    """
    if not 0 <= k <= n_measurements:
        raise ValueError("k must lie in [0, {}]".format(n_measurements))
    if amp_var < 0:
        raise ValueError("amp_var must be nonnegative")
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    a = np.zeros(n_measurements)
    idx = gen.choice(n_measurements, size=k, replace=False)
    a[idx] = gen.normal(amp_mean, np.sqrt(amp_var), size=k)
    return AttackVector(kind="random", a=a, c=None, k=k, converged=True,
                        residual=None)


def distributed_sparse_attack(h, a_target, partition, config: SolverConfig,
                              lambda_scale: float | None = None) -> AttackVector:
    """Consensus recovery of a sparse state vector explaining a_target.

    partition lists row-index blocks; each cluster sees only its rows of
    H and of the target.  The realized injection is H c, which is
    unobservable by construction.
    """
    h = _check_jacobian(h)
    a_target = np.asarray(a_target, dtype=float).ravel()
    if a_target.size != h.shape[0]:
        raise ValueError("a_target must have one entry per measurement")
    cfg = _lam_for(h, a_target, config, lambda_scale)
    blocks = [(h[rows], a_target[rows])
              for rows in _partition_groups(partition, h.shape[0], "rows")]
    result = consensus_lasso_admm(blocks, cfg)
    c = result.solution
    a = h @ c
    check = unobservability_check(h, a)
    return AttackVector(kind="distributed", a=a, c=c, k=_support_size(c),
                        converged=result.converged, residual=check.residual)


def collective_sparse_attack(h, a_target, groups, config: SolverConfig,
                             inner: InnerSolverConfig | None = None,
                             lambda_scale: float | None = None) -> AttackVector:
    """Sharing-form recovery over column groups of H.

    Groups partition the state indices; each cluster fits its own block
    and only the average fitted injection is exchanged.
    """
    h = _check_jacobian(h)
    a_target = np.asarray(a_target, dtype=float).ravel()
    if a_target.size != h.shape[0]:
        raise ValueError("a_target must have one entry per measurement")
    cfg = _lam_for(h, a_target, config, lambda_scale)
    column_groups = _partition_groups(groups, h.shape[1], "columns")
    result = sharing_group_lasso_admm(h, column_groups, a_target, cfg, inner)
    c = result.solution
    a = h @ c
    check = unobservability_check(h, a)
    return AttackVector(kind="collective", a=a, c=c, k=_support_size(c),
                        converged=result.converged, residual=check.residual)
