"""Residual-based attack detection and scoring.

A meter is flagged when its squared fitted residual (z_i - (H x_hat)_i)^2
exceeds a threshold tau derived from the noise level and the hat matrix
of the weighted estimator.  The test runs in a single pass: flagged
meters are never removed and the estimate is never recomputed, since
removal perturbs the very data space the estimator relies on.

Scoring helpers turn flag masks into confusion counts and precision /
recall / accuracy, and compare constructed attack vectors against their
references support-wise.  Ratios with empty denominators are reported
as absent (None) rather than forced to 0 or 1, so sweeps with k = 0 do
not bias averages.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

#: |.| above this counts as a nonzero attack component.
DEFAULT_ZERO_TOL = 1e-6
#: default per-meter noise standard deviation.
DEFAULT_NOISE_SIGMA = 0.01


@dataclass(frozen=True)
class DetectionResult:
    residual_total: float
    per_measurement: np.ndarray
    attacked_mask: np.ndarray
    tau: float

    def to_dict(self) -> dict:
        return {
            "residual_total": float(self.residual_total),
            "per_measurement": [float(v) for v in self.per_measurement],
            "attacked_mask": [bool(v) for v in self.attacked_mask],
            "tau": float(self.tau),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricBundle:
    """Precision / recall / accuracy with the 0/0 cases absent."""

    precision: float | None
    recall: float | None
    accuracy: float | None
    error_vector: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
        }
        if self.error_vector is not None:
            out["error_vector"] = [float(v) for v in self.error_vector]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class ConstructionProbabilities:
    p_nonzero: float | None
    p_zero: float | None


# ---------------------------------------------------------------------------

def _fitted_gap(model, snapshot, estimate) -> np.ndarray:
    z = np.asarray(getattr(snapshot, "z", snapshot), dtype=float).ravel()
    x_hat = np.asarray(getattr(estimate, "x_hat", estimate), dtype=float).ravel()
    h = model.jacobian
    if z.size != h.shape[0]:
        raise ValueError("snapshot has {} entries, model expects {}".format(
            z.size, h.shape[0]))
    if x_hat.size != h.shape[1]:
        raise ValueError("estimate has {} entries, model expects {}".format(
            x_hat.size, h.shape[1]))
    return z - h @ x_hat


def residuals(model, snapshot, estimate):
    """Per-meter squared residuals and their sum.

    snapshot and estimate may be the domain objects or raw vectors.
    """
    gap = _fitted_gap(model, snapshot, estimate)
    per = gap * gap
    return per, float(per.sum())


def attack_error(model, snapshot, estimate) -> np.ndarray:
    """Attacker-side view of the same quantity: how far the realized
    injection (estimate side) lands from the intended one (snapshot
    side), per measurement."""
    gap = _fitted_gap(model, snapshot, estimate)
    return gap * gap


def tau_threshold(model, noise_sigma: float = DEFAULT_NOISE_SIGMA,
                  noise_cov=None) -> float:
    """Detection threshold 2 xi ||I - H (H' S^-1 H)^+ H' S^-1||_inf.

    noise_cov is the diagonal of S (vector or diagonal matrix); by
    default S = noise_sigma^2 I.  The pseudoinverse keeps the formula
    defined on rank-deficient grids, and the norm is the induced
    max-absolute-row-sum norm.
    """
    if noise_sigma <= 0:
        raise ValueError("noise_sigma must be positive")
    h = model.jacobian
    n = h.shape[0]
    if noise_cov is None:
        diag = np.full(n, noise_sigma ** 2)
    else:
        cov = np.asarray(noise_cov, dtype=float)
        if cov.ndim == 2:
            if cov.shape != (n, n):
                raise ValueError("noise covariance must be {}x{}".format(n, n))
            off = cov - np.diag(np.diag(cov))
            if np.abs(off).max() > 0:
                raise ValueError("noise covariance must be diagonal")
            diag = np.diag(cov).copy()
        else:
            diag = cov.ravel().copy()
            if diag.size != n:
                raise ValueError("noise covariance diagonal must have {} entries".format(n))
    if np.any(diag <= 0):
        raise ValueError("noise variances must be positive")

    weighted = h.T * (1.0 / diag)                   # H' S^-1
    hat = h @ np.linalg.pinv(weighted @ h) @ weighted
    gain = np.linalg.norm(np.eye(n) - hat, np.inf)  # max abs row sum
    return float(2.0 * noise_sigma * gain)


def detect(per_measurement, tau: float) -> np.ndarray:
    """Single-pass residual test; strictly greater than tau flags."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    per = np.asarray(per_measurement, dtype=float).ravel()
    return per > tau


def run_detection(model, snapshot, estimate, tau: float | None = None,
                  noise_sigma: float = DEFAULT_NOISE_SIGMA,
                  noise_cov=None) -> DetectionResult:
    """residuals + threshold + flags in one record."""
    per, total = residuals(model, snapshot, estimate)
    if tau is None:
        tau = tau_threshold(model, noise_sigma=noise_sigma, noise_cov=noise_cov)
    return DetectionResult(residual_total=total, per_measurement=per,
                           attacked_mask=detect(per, tau), tau=float(tau))


def confusion(mask, true_support) -> ConfusionCounts:
    """Count flag outcomes against the genuinely attacked meters.

    true_support is either a boolean mask of the same length or an
    iterable of attacked indices.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    n = mask.size
    support = np.asarray(true_support)
    if support.dtype == bool:
        if support.size != n:
            raise ValueError("boolean support must match the mask length")
        attacked = support.ravel()
    else:
        idx = np.asarray(sorted(set(int(i) for i in np.atleast_1d(support))), dtype=int)
        if idx.size and (idx[0] < 0 or idx[-1] >= n):
            raise ValueError("support index out of range [0, {})".format(n))
        attacked = np.zeros(n, dtype=bool)
        attacked[idx] = True
    tp = int(np.count_nonzero(mask & attacked))
    fp = int(np.count_nonzero(mask & ~attacked))
    fn = int(np.count_nonzero(~mask & attacked))
    tn = n - tp - fp - fn
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def metrics(counts: ConfusionCounts) -> MetricBundle:
    def ratio(num, den):
        return num / den if den else None

    return MetricBundle(
        precision=ratio(counts.tp, counts.tp + counts.fp),
        recall=ratio(counts.tp, counts.tp + counts.fn),
        accuracy=ratio(counts.tp + counts.tn, counts.total),
    )


def construction_probabilities(constructed, reference,
                               zero_tol: float = DEFAULT_ZERO_TOL
                               ) -> ConstructionProbabilities:
    """Support agreement between constructed and reference injections.

    Pools every (realization, index) pair: p_nonzero is the fraction of
    reference nonzeros the construction also makes nonzero, p_zero the
    fraction of reference zeros it keeps zero.  Entries may be attack
    vector records (their .a is used) or plain vectors.
    """
    if zero_tol <= 0:
        raise ValueError("zero_tol must be positive")
    if len(constructed) != len(reference):
        raise ValueError("constructed and reference lists must pair up")
    hit_nonzero = total_nonzero = hit_zero = total_zero = 0
    for built, ref in zip(constructed, reference):
        built = np.asarray(getattr(built, "a", built), dtype=float).ravel()
        ref = np.asarray(getattr(ref, "a", ref), dtype=float).ravel()
        if built.size != ref.size:
            raise ValueError("paired vectors must have equal length")
        ref_hot = np.abs(ref) > zero_tol
        built_hot = np.abs(built) > zero_tol
        total_nonzero += int(ref_hot.sum())
        hit_nonzero += int(np.count_nonzero(ref_hot & built_hot))
        total_zero += int((~ref_hot).sum())
        hit_zero += int(np.count_nonzero(~ref_hot & ~built_hot))
    return ConstructionProbabilities(
        p_nonzero=hit_nonzero / total_nonzero if total_nonzero else None,
        p_zero=hit_zero / total_zero if total_zero else None,
    )
