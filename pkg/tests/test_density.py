"""Tests for the closed-form invariant density and its functionals."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from refsde import (
    BarrierConfig,
    DriftSpec,
    InvariantDensity,
    ModelNotErgodicError,
    UndefinedVarianceError,
    builtin_drift,
    epanechnikov,
    f_eval,
    inner_integral,
    invariant_density,
    pi_eval,
    sigma_eval,
)

TWO_SIDED = BarrierConfig.two_sided(0.0, 3.0)
SIGMA = 0.2


def _const_drift(c):
    return DriftSpec(f"const{c}",
                     lambda x, c=c: np.full_like(np.asarray(x, dtype=float), c))


def _raw(drift, panels, hi=3.0, barrier=TWO_SIDED):
    # unnormalized evaluator: enough for inner_integral, which ignores Z
    return InvariantDensity(drift=drift, sigma=SIGMA, barrier=barrier,
                            normalizer=1.0, quad_panels=panels, support_hi=hi)


def test_inner_integral_constant_drift():
    d = _raw(_const_drift(1.5), 64)
    assert inner_integral(d, 2.0) == pytest.approx(3.0, abs=1e-12)
    assert inner_integral(d, 0.0) == 0.0


def test_inner_integral_vectorized_closed_form():
    d = _raw(builtin_drift(2), 256)
    xs = np.array([0.0, 1.0, 2.5])
    vals = inner_integral(d, xs)
    assert vals.shape == (3,)
    assert vals[0] == 0.0
    want = 0.5 * (xs * np.sqrt(1.0 + xs * xs) + np.arcsinh(xs))
    np.testing.assert_allclose(vals, want, atol=1e-10)


def test_inner_integral_sqrt_drift_high_resolution():
    # int_0^1 2 sqrt(y) dy = 4/3; the root kink at 0 needs heavy panel counts
    d = _raw(builtin_drift(3), 2 ** 20)
    assert abs(inner_integral(d, 1.0) - 4.0 / 3.0) < 1e-10


def test_invariant_density_validates_inputs():
    with pytest.raises(ValueError):
        invariant_density(_const_drift(0.0), 0.0, TWO_SIDED)
    with pytest.raises(ValueError):
        invariant_density(_const_drift(0.0), SIGMA, TWO_SIDED, quad_panels=0)
    with pytest.raises(ValueError):
        InvariantDensity(drift=_const_drift(0.0), sigma=SIGMA,
                         barrier=TWO_SIDED, normalizer=0.0, quad_panels=64,
                         support_hi=3.0)


def test_pi_uniform_for_zero_drift():
    dens = invariant_density(_const_drift(0.0), SIGMA, TWO_SIDED)
    xs = np.linspace(0.0, 3.0, 13)
    np.testing.assert_allclose(pi_eval(dens, xs), 1.0 / 3.0, atol=1e-12)


def test_pi_exponential_for_constant_drift():
    # b = 0.02, sigma = 0.2: 2b/sigma^2 = 1, so pi(x) = kappa e^-x on [0,3]
    dens = invariant_density(_const_drift(0.02), SIGMA, TWO_SIDED)
    xs = np.linspace(0.0, 3.0, 21)
    kappa = 1.0 / (1.0 - math.exp(-3.0))
    np.testing.assert_allclose(pi_eval(dens, xs), kappa * np.exp(-xs),
                               atol=1e-8)


def test_pi_scalar_and_array_agree():
    dens = invariant_density(builtin_drift(1), SIGMA, TWO_SIDED)
    xs = np.array([0.3, 1.1, 2.7])
    arr = pi_eval(dens, xs)
    for x, v in zip(xs, arr):
        assert pi_eval(dens, float(x)) == pytest.approx(v, rel=1e-14)


def test_pi_integrates_to_one_all_cases_and_modes():
    for cid in (1, 2, 3):
        for barrier in (TWO_SIDED, BarrierConfig.one_sided(0.0)):
            dens = invariant_density(builtin_drift(cid), SIGMA, barrier)
            total, _ = quad(lambda x: pi_eval(dens, x), 0.0, dens.support_hi,
                            limit=200)
            assert abs(total - 1.0) < 1e-8


def test_one_sided_support_covers_the_mass():
    dens = invariant_density(builtin_drift(2), SIGMA,
                             BarrierConfig.one_sided(0.0))
    assert dens.support_hi >= 1.0
    assert pi_eval(dens, dens.support_hi) < 1e-8


def test_nonintegrable_tail_raises():
    # drift pulling away from the lone barrier has no stationary law
    with np.errstate(over="ignore"):
        with pytest.raises(ModelNotErgodicError):
            invariant_density(_const_drift(-1.0), SIGMA,
                              BarrierConfig.one_sided(0.0))


def test_stationarity_residual_small():
    # central-difference residual of (sigma^2/2) pi'' + (b pi)'
    drifts = [_const_drift(0.02),
              DriftSpec("wavy",
                        lambda x: 0.02 * (1.0 + np.sin(np.asarray(x, float))))]
    dx = 1e-3
    for drift in drifts:
        dens = invariant_density(drift, SIGMA, TWO_SIDED, quad_panels=512)
        worst = 0.0
        for x in np.linspace(0.2, 2.8, 50):
            p_m, p_0, p_p = (pi_eval(dens, x - dx), pi_eval(dens, x),
                             pi_eval(dens, x + dx))
            second = (p_p - 2.0 * p_0 + p_m) / dx ** 2
            flux = (float(drift(x + dx)) * p_p
                    - float(drift(x - dx)) * p_m) / (2.0 * dx)
            worst = max(worst, abs(0.5 * SIGMA ** 2 * second + flux))
        assert worst < 1e-4


def test_f_eval_uniform_interior_and_boundary():
    dens = invariant_density(_const_drift(0.0), SIGMA, TWO_SIDED)
    k = epanechnikov(0.3)
    assert f_eval(dens, k, 1.5) == pytest.approx(1.0 / 3.0, abs=1e-12)
    # at a barrier only half the kernel window is inside the domain
    assert f_eval(dens, k, 0.0) == pytest.approx(1.0 / 6.0, abs=1e-12)
    assert f_eval(dens, k, 3.0) == pytest.approx(1.0 / 6.0, abs=1e-12)


def test_f_eval_tracks_pi_as_h_shrinks():
    dens = invariant_density(builtin_drift(2), SIGMA, TWO_SIDED)
    target = pi_eval(dens, 1.5)
    errs = [abs(f_eval(dens, epanechnikov(h), 1.5) - target)
            for h in (1e-2, 1e-3)]
    assert errs[1] < errs[0]


def test_sigma_eval_uniform_values():
    dens = invariant_density(_const_drift(0.0), SIGMA, TWO_SIDED)
    k = epanechnikov(0.3)
    assert sigma_eval(dens, k, 1.5) == pytest.approx(0.12, abs=1e-12)
    assert sigma_eval(dens, k, 0.0) == pytest.approx(0.24, abs=1e-12)


def test_sigma_eval_is_sigma_squared_over_f():
    dens = invariant_density(_const_drift(0.02), SIGMA, TWO_SIDED)
    k = epanechnikov(0.2)
    for x in (0.4, 1.1, 2.0):
        f = f_eval(dens, k, x)
        assert sigma_eval(dens, k, x) == pytest.approx(SIGMA ** 2 / f,
                                                       rel=1e-12)


def test_sigma_eval_raises_where_mass_vanishes():
    # b = 6 piles the (pinned-form) density so hard against the lower barrier
    # that F underflows to exactly 0 near the opposite end
    dens = invariant_density(_const_drift(6.0), SIGMA, TWO_SIDED)
    with pytest.raises(UndefinedVarianceError):
        sigma_eval(dens, epanechnikov(0.005), 2.99)
