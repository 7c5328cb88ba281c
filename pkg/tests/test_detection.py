"""Residual detection and scoring tests."""

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridsparse import (
    AttackSpec,
    ConfusionCounts,
    MeasurementSnapshot,
    SolverConfig,
    confusion,
    construction_probabilities,
    detect,
    metrics,
    residuals,
    run_detection,
    strategic_lasso_attack,
    tau_threshold,
    wls_estimate,
)
from gridsparse.detection import attack_error


def toy_model(h, sigma=1.0):
    h = np.asarray(h, dtype=float)
    return SimpleNamespace(jacobian=h,
                           noise_variances=np.full(h.shape[0], sigma ** 2))


# ---------------------------------------------------------------------------
# residuals

def test_residuals_zero_on_exact_fit():
    h = np.array([[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]])
    x = np.array([1.0, -1.0])
    per, total = residuals(toy_model(h), h @ x, x)
    np.testing.assert_allclose(per, np.zeros(3))
    assert total == 0.0


def test_residuals_unit_gap():
    h = np.eye(3)
    z = np.array([1.0, 0.0, 0.0])
    per, total = residuals(toy_model(h), z, np.zeros(3))
    np.testing.assert_allclose(per, [1.0, 0.0, 0.0])
    assert total == 1.0


def test_residuals_total_is_sum():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(12, 5))
    z = rng.normal(size=12)
    x = rng.normal(size=5)
    per, total = residuals(toy_model(h), z, x)
    assert abs(total - per.sum()) < 1e-12


def test_attack_error_is_quadratic():
    h = np.eye(4)
    z = np.array([2.0, 0.0, -1.0, 0.0])
    base = attack_error(toy_model(h), z, np.zeros(4))
    doubled = attack_error(toy_model(h), 2 * z, np.zeros(4))
    np.testing.assert_allclose(doubled, 4 * base)


# ---------------------------------------------------------------------------
# threshold

def test_tau_identity_is_zero():
    assert tau_threshold(toy_model(np.eye(4)), noise_sigma=1.0) == pytest.approx(0.0, abs=1e-12)


def test_tau_single_column_projector():
    # H = (1, 0)^T: hat matrix diag(1, 0), so ||I - hat||_inf = 1 and
    # tau = 2 xi
    h = np.array([[1.0], [0.0]])
    assert tau_threshold(toy_model(h), noise_sigma=1.0) == pytest.approx(2.0)
    assert tau_threshold(toy_model(h), noise_sigma=0.25) == pytest.approx(0.5)


def test_tau_case57_baseline(model57):
    # frozen regression value for the bundled 57-bus model at xi = 0.01
    assert tau_threshold(model57, noise_sigma=0.01) == pytest.approx(
        0.0742533, abs=1e-6)


def test_tau_rejects_bad_noise(model9):
    with pytest.raises(ValueError):
        tau_threshold(model9, noise_sigma=0.0)
    with pytest.raises(ValueError):
        tau_threshold(model9, noise_sigma=0.01,
                      noise_cov=np.zeros(model9.n_measurements))
    with pytest.raises(ValueError, match="diagonal"):
        tau_threshold(model9, noise_sigma=0.01,
                      noise_cov=np.ones((model9.n_measurements,
                                         model9.n_measurements)))


def test_tau_accepts_diagonal_forms(model9):
    n = model9.n_measurements
    from_vector = tau_threshold(model9, noise_sigma=0.02,
                                noise_cov=np.full(n, 4e-4))
    from_matrix = tau_threshold(model9, noise_sigma=0.02,
                                noise_cov=np.diag(np.full(n, 4e-4)))
    assert from_vector == pytest.approx(from_matrix)


# ---------------------------------------------------------------------------
# detect

def test_detect_strict_inequality():
    mask = detect(np.zeros(5), 0.0)
    assert not mask.any()


def test_detect_example():
    np.testing.assert_array_equal(detect(np.array([3.0, 1.0]), 2.0), [True, False])


def test_detect_rejects_negative_tau():
    with pytest.raises(ValueError):
        detect(np.array([1.0]), -0.5)


def test_unobservable_attack_never_flagged(model30):
    # noiseless measurements plus a = H c: WLS absorbs the attack fully
    h = model30.jacobian
    rng = np.random.default_rng(1)
    z = h @ rng.normal(size=h.shape[1])
    secure = tuple(range(0, 10))
    att = strategic_lasso_attack(h, AttackSpec.with_secure(h.shape[0], secure),
                                 SolverConfig(lam=0.0, rho=1.0), lambda_scale=0.5)
    est = wls_estimate(model30, MeasurementSnapshot(z=z + att.a))
    result = run_detection(model30, MeasurementSnapshot(z=z + att.a), est,
                           noise_sigma=0.01)
    assert result.tau > 0
    assert not result.attacked_mask.any()


def test_run_detection_consistency(model9):
    rng = np.random.default_rng(2)
    z = rng.normal(size=model9.n_measurements)
    est = wls_estimate(model9, MeasurementSnapshot(z=z))
    result = run_detection(model9, MeasurementSnapshot(z=z), est, tau=1e-6)
    np.testing.assert_array_equal(result.attacked_mask,
                                  result.per_measurement > result.tau)
    doc = result.to_dict()
    assert set(doc) == {"residual_total", "per_measurement", "attacked_mask", "tau"}


# ---------------------------------------------------------------------------
# confusion and metrics

def test_confusion_exact_mask():
    mask = np.array([True, False, True, False])
    counts = confusion(mask, [0, 2])
    assert (counts.tp, counts.fp, counts.tn, counts.fn) == (2, 0, 2, 0)


def test_confusion_all_false():
    counts = confusion(np.zeros(10, dtype=bool), [1, 2, 3])
    assert (counts.tp, counts.fp, counts.tn, counts.fn) == (0, 0, 7, 3)


def test_confusion_all_true():
    counts = confusion(np.ones(10, dtype=bool), [1, 2, 3])
    assert (counts.tp, counts.fp, counts.tn, counts.fn) == (3, 7, 0, 0)


def test_confusion_accepts_boolean_support():
    support = np.array([True, True, False, False])
    counts = confusion(np.array([True, False, False, True]), support)
    assert (counts.tp, counts.fp, counts.tn, counts.fn) == (1, 1, 1, 1)


def test_confusion_rejects_bad_support():
    with pytest.raises(ValueError):
        confusion(np.zeros(4, dtype=bool), [7])


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_confusion_counts_sum_to_n(data):
    n = data.draw(st.integers(min_value=1, max_value=60))
    mask = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
    support = [i for i in range(n) if data.draw(st.booleans())]
    counts = confusion(mask, support)
    assert counts.tp + counts.fp + counts.tn + counts.fn == n
    assert min(counts.tp, counts.fp, counts.tn, counts.fn) >= 0


def test_metrics_perfect():
    bundle = metrics(ConfusionCounts(tp=5, fp=0, tn=10, fn=0))
    assert (bundle.precision, bundle.recall, bundle.accuracy) == (1.0, 1.0, 1.0)


def test_metrics_zero_over_zero_absent():
    bundle = metrics(ConfusionCounts(tp=0, fp=0, tn=7, fn=3))
    assert bundle.precision is None
    assert bundle.recall == 0.0
    assert bundle.accuracy == pytest.approx(0.7)


def test_metrics_arithmetic():
    bundle = metrics(ConfusionCounts(tp=3, fp=1, tn=4, fn=2))
    assert bundle.precision == pytest.approx(0.75)
    assert bundle.recall == pytest.approx(0.6)
    assert bundle.accuracy == pytest.approx(0.7)


def test_metrics_monotone_in_tp():
    base = metrics(ConfusionCounts(tp=3, fp=2, tn=4, fn=3))
    more = metrics(ConfusionCounts(tp=4, fp=2, tn=4, fn=2))
    assert more.precision >= base.precision
    assert more.recall >= base.recall


def test_confusion_counts_validation():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1, fp=0, tn=0, fn=0)


# ---------------------------------------------------------------------------
# construction probabilities

def test_construction_probabilities_identical():
    rng = np.random.default_rng(3)
    vecs = [np.where(rng.random(8) < 0.5, rng.normal(size=8), 0.0)
            for _ in range(5)]
    probs = construction_probabilities(vecs, vecs)
    assert probs.p_nonzero == 1.0
    assert probs.p_zero == 1.0


def test_construction_probabilities_all_zero_estimate():
    ref = [np.array([1.0, 0.0, 2.0, 0.0])]
    built = [np.zeros(4)]
    probs = construction_probabilities(built, ref)
    assert probs.p_nonzero == 0.0
    assert probs.p_zero == 1.0


def test_construction_probabilities_empty_denominator():
    probs = construction_probabilities([np.zeros(3)], [np.zeros(3)])
    assert probs.p_nonzero is None
    assert probs.p_zero == 1.0


def test_construction_probabilities_scale_invariant():
    rng = np.random.default_rng(4)
    ref = [np.where(rng.random(10) < 0.4, rng.normal(size=10), 0.0)
           for _ in range(6)]
    built = [3.7 * v for v in ref]
    probs = construction_probabilities(built, ref)
    assert probs.p_nonzero == 1.0
    assert probs.p_zero == 1.0


def test_construction_probabilities_pooled_counts():
    # 3 of 4 reference nonzeros hit, 1 of 2 reference zeros kept
    ref = [np.array([1.0, 1.0, 0.0]), np.array([1.0, 1.0, 0.0])]
    built = [np.array([1.0, 1.0, 5.0]), np.array([1.0, 0.0, 0.0])]
    probs = construction_probabilities(built, ref)
    assert probs.p_nonzero == pytest.approx(3 / 4)
    assert probs.p_zero == pytest.approx(1 / 2)


def test_construction_probabilities_validation():
    with pytest.raises(ValueError):
        construction_probabilities([np.zeros(3)], [])
    with pytest.raises(ValueError):
        construction_probabilities([np.zeros(3)], [np.zeros(4)])
    with pytest.raises(ValueError):
        construction_probabilities([], [], zero_tol=0.0)
