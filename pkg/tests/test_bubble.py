import numpy as np
import pytest

from src.bubble import (
    CapBubble,
    HalfspaceBubbleForms,
    GluedTrial,
    LimitProfile,
    beta_from_lambda,
    cap_bubble_eval,
    fit_expansion,
    glued_trial_field,
    halfspace_forms_eval,
    lambda_from_beta,
    limit_equation_report,
    limit_equation_residual,
    make_flat_K,
    trial_boundary_integral,
    trial_energy,
    trial_rayleigh,
)
from src.errors import (
    InvalidParametersError,
    NonpositiveDeficitError,
    UnsupportedDimensionError,
)
from src.functional import ScalarField, threshold
from src.geometry import unit_ball_volume

OMEGA3 = 4 * np.pi / 3


@pytest.mark.parametrize('lam', [0.05, 0.3, 0.9])
def test_beta_lambda_correspondence(lam):
    assert lambda_from_beta(beta_from_lambda(lam)) == pytest.approx(lam, rel=1e-12)


def test_lambda_one_is_flat_cap():
    assert beta_from_lambda(1.0) == float('inf')
    assert lambda_from_beta(float('inf')) == 1.0
    with pytest.raises(InvalidParametersError):
        beta_from_lambda(1.5)
    with pytest.raises(InvalidParametersError):
        lambda_from_beta(0.5)


def test_cap_bubble_peak_and_support():
    cap = CapBubble.from_lambda(0.25, np.array([0.0, 0.0, 1.0]))
    assert cap.evaluate(np.array([[0.0, 0.0, 1.0]]))[0] == pytest.approx(cap.peak, rel=1e-12)
    assert cap.peak == pytest.approx(2.0, rel=1e-12)
    assert cap.evaluate(np.array([[0.0, 0.0, -1.0]]))[0] == 0.0
    assert cap_bubble_eval(cap, np.array([0.0, 0.0, 1.0])) == pytest.approx(2.0, rel=1e-12)


def test_glued_trial_is_antipodal(sphere3):
    trial = GluedTrial(beta_from_lambda(0.2), np.array([0.0, 0.6, 0.8]))
    values = trial.evaluate(sphere3.nodes)
    assert np.allclose(values, values[sphere3.antipode], rtol=1e-13)
    field = glued_trial_field(trial.beta, trial.center, sphere3)
    assert np.array_equal(field.values, values)


def test_halfspace_closed_forms():
    forms = HalfspaceBubbleForms(lam=0.5)
    assert forms.W1(np.zeros((1, 3)))[0] == pytest.approx(2.0)
    assert forms.u1(np.array([[1.5, 0.0]]))[0] == 0.0
    assert forms.w2(np.array([[0.5, 0.0]]))[0] == 0.0
    # u は |y'| = 1 で連続
    assert forms.w2(np.array([[1.0, 0.0]]))[0] == pytest.approx(0.0, abs=1e-15)
    assert halfspace_forms_eval(0.5, 'w1', np.zeros(2)) == pytest.approx(2.0)
    with pytest.raises(InvalidParametersError):
        halfspace_forms_eval(0.5, 'nope', np.zeros(2))


def test_exterior_correction_vanishes_for_flat_trial():
    forms = HalfspaceBubbleForms(lam=1.0)
    assert np.all(forms.exterior_correction(np.array([[0.0, 0.0, 1.0]])) == 0.0)


def test_exterior_correction_is_positive_and_small():
    forms = HalfspaceBubbleForms(lam=0.1)
    correction = forms.exterior_correction(np.array([[0.0, 0.0, 0.5], [0.3, 0.0, 0.2]]))
    assert np.all(correction > 0)
    assert np.all(correction < forms.W1(np.array([[0.0, 0.0, 0.5], [0.3, 0.0, 0.2]])))


@pytest.mark.parametrize('lam', [0.05, 0.2, 0.5])
def test_boundary_integral_for_constant_K(lam):
    value = trial_boundary_integral(lam, ScalarField.constant(1.0))
    assert value == pytest.approx(8 * np.pi / (1 + lam ** 2), rel=1e-8)


def test_boundary_integral_does_not_depend_on_center():
    K = ScalarField.constant(1.0)
    tilted = trial_boundary_integral(0.1, K, np.array([1.0, 1.0, 0.0]))
    assert tilted == pytest.approx(trial_boundary_integral(0.1, K), rel=1e-12)


def test_trial_energy_exceeds_two_bubbles():
    assert trial_energy(0.1) > 2 * OMEGA3


def test_trial_energy_preconditions():
    with pytest.raises(InvalidParametersError):
        trial_energy(0.9)
    with pytest.raises(UnsupportedDimensionError):
        trial_energy(0.1, n=2)


def test_fit_recovers_synthetic_expansion():
    lambdas = np.array([0.05, 0.075, 0.1, 0.15])
    energies = 2 * (OMEGA3 + 7.0 * lambdas ** 2)
    fit = fit_expansion(lambdas, energies)
    assert fit.coefficient == pytest.approx(7.0, rel=1e-8)
    assert fit.exponent == pytest.approx(2.0, rel=1e-8)
    assert fit.remainder == pytest.approx(0.0, abs=1e-6)


def test_fit_separates_cubic_remainder():
    lambdas = np.array([0.05, 0.075, 0.1, 0.15])
    energies = 2 * (OMEGA3 + 12.7 * lambdas ** 2 - 42.5 * lambdas ** 3)
    # 両対数の直線では傾きが 2 から大きくずれる
    slope = np.polyfit(np.log(lambdas), np.log(energies / 2 - OMEGA3), 1)[0]
    assert slope < 1.7
    fit = fit_expansion(lambdas, energies)
    assert fit.exponent == pytest.approx(2.0, abs=1e-6)
    assert fit.coefficient == pytest.approx(12.7, rel=1e-5)
    assert fit.remainder == pytest.approx(-42.5, rel=1e-5)


def test_fit_rejects_bad_samples():
    lambdas = [0.05, 0.075, 0.1, 0.15]
    with pytest.raises(NonpositiveDeficitError):
        fit_expansion(lambdas, [2 * OMEGA3] * 4)
    with pytest.raises(InvalidParametersError):
        fit_expansion(lambdas[:3], [3 * OMEGA3] * 3)


@pytest.mark.slow
def test_trial_energy_expansion():
    fit = fit_expansion([0.05, 0.075, 0.1, 0.15])
    assert fit.exponent == pytest.approx(2.0, abs=0.15)
    assert fit.coefficient > 0
    assert np.all(fit.energies > 2 * unit_ball_volume(3))


@pytest.mark.slow
@pytest.mark.parametrize('K', [ScalarField.constant(1.0), make_flat_K(1.0, 1e-3, 3, np.array([0.0, 0.0, 1.0]))])
def test_trial_quotient_clears_threshold(K):
    quotients = [trial_rayleigh(lam, K).quotient for lam in (0.05, 0.1, 0.15)]
    assert min(quotients) > threshold(3, K)
    assert quotients == sorted(quotients)


def test_flat_K_family(sphere3):
    e3 = np.array([0.0, 0.0, 1.0])
    flat = make_flat_K(1.0, 0.0, 3, e3)
    assert np.allclose(flat.values(sphere3.nodes), 1.0)
    K = make_flat_K(1.0, 1e-3, 3, e3)
    K.validate(sphere3)
    assert K.values(np.array([[0.0, 0.0, -1.0]]))[0] == pytest.approx(1.0)
    assert K.min_on(sphere3) == pytest.approx(1.0)
    with pytest.raises(InvalidParametersError):
        make_flat_K(1.0, 1e-3, 1.5, e3)


def test_limit_profile_closed_forms():
    bubble = LimitProfile.bubble()
    assert bubble.boundary(np.zeros((1, 2)))[0] == pytest.approx(1.0)
    assert bubble.extension(np.array([[0.0, 0.0, 1.0]]))[0] == pytest.approx(np.sqrt(0.25))
    two = LimitProfile.two_scale()
    assert two.smallest_scale == pytest.approx(0.2)


def test_limit_equation_for_bubble():
    report = limit_equation_report([[0.5, 0.0], [0.0, 1.0]], lam=1.0, profile='bubble')
    assert report.residual <= 1e-2
    assert report.calibration == pytest.approx(1 / 6, rel=2e-2)
    assert report.tail_ratio <= 5e-3


def test_limit_equation_detects_non_solution():
    report = limit_equation_report([[0.5, 0.0], [0.0, 1.0]], lam=1.0, profile='two-scale')
    assert report.residual > 5e-2
    assert limit_equation_residual(1.0, [[0.5, 0.0], [0.0, 1.0]], profile="two-scale") == pytest.approx(report.residual)


def test_limit_equation_rejects_far_points():
    with pytest.raises(InvalidParametersError):
        limit_equation_report([[3.0, 0.0]])
