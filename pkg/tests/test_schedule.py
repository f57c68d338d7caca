import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from mixdiff import DomainError, NoiseSchedule, ShapeError, SingularityError, ValidationError

times = st.floats(0.0, 1.0, allow_nan=False)
schedules = st.builds(
    lambda b0, gap: NoiseSchedule(beta0=b0, beta1=b0 + gap),
    st.floats(1e-3, 1.0), st.floats(0.0, 30.0),
)


def time_where_lambda_is(sched, target):
    return optimize.brentq(lambda t: sched.lambda_var(t) - target, 1e-9, 1.0, xtol=1e-15)


def test_beta_at_endpoints_and_midpoint(sched):
    assert sched.beta_at(0.0) == 0.05
    assert sched.beta_at(1.0) == 20.0
    assert sched.beta_at(0.5) == pytest.approx(10.025, abs=1e-12)


def test_beta_integral_values(sched):
    assert sched.beta_integral(0.0) == 0.0
    assert sched.beta_integral(1.0) == pytest.approx(10.025, abs=1e-12)


@given(t=times, sched=schedules)
@settings(max_examples=60, deadline=None)
def test_beta_integral_matches_quadrature(t, sched):
    quad, _ = integrate.quad(lambda s: sched.beta0 + (sched.beta1 - sched.beta0) * s, 0.0, t,
                             epsabs=1e-13, epsrel=1e-13)
    assert abs(sched.beta_integral(t) - quad) <= 1e-10


def test_alpha_values(sched):
    assert sched.alpha(0.0) == 1.0
    # exp(-5.0125) written out independently of the schedule code
    assert sched.alpha(1.0) == pytest.approx(math.exp(-5.0125), rel=1e-14)
    assert sched.alpha(1.0) == pytest.approx(6.657e-3, rel=1e-3)
    assert sched.alpha(0.3) > sched.alpha(0.7)


def test_lambda_values(sched):
    assert sched.lambda_var(0.0) == 0.0
    assert sched.lambda_var(1.0) == pytest.approx(1.0 - math.exp(-10.025), rel=1e-14)
    assert sched.lambda_var(1.0) == pytest.approx(0.99996, abs=5e-6)
    grid = np.arange(1, 10) / 10
    np.testing.assert_allclose(sched.alpha(grid) ** 2 + sched.lambda_var(grid), 1.0, atol=1e-12)


@given(sched=schedules, t=st.lists(times, min_size=2, max_size=30))
@settings(max_examples=60, deadline=None)
def test_identity_and_monotonicity(sched, t):
    t = np.sort(np.array(t))
    a, lam = sched.alpha(t), sched.lambda_var(t)
    assert np.max(np.abs(a * a + lam - 1.0)) <= 1e-12
    assert np.all(np.diff(lam) >= 0.0)
    assert np.all(np.diff(a) <= 0.0)
    assert np.all((lam >= 0) & (lam < 1))


@pytest.mark.parametrize("bad", [-0.1, 1.0 + 1e-9, np.nan])
def test_time_outside_horizon_is_domain_error(sched, bad):
    for fn in (sched.beta_at, sched.beta_integral, sched.alpha, sched.lambda_var):
        with pytest.raises(DomainError):
            fn(bad)


@pytest.mark.parametrize("kw", [dict(beta0=0.0), dict(beta0=-1.0), dict(beta0=2.0, beta1=1.0),
                                dict(horizon=2.0)])
def test_invalid_schedule_rejected(kw):
    with pytest.raises(ValidationError):
        NoiseSchedule(**kw)


def test_forward_sample_edge_cases(sched):
    x0 = np.array([1.5, -2.0])
    assert np.array_equal(sched.forward_sample(x0, 0.0, np.array([3.0, 4.0])), x0)
    np.testing.assert_allclose(sched.forward_sample(x0, 0.4, np.zeros(2)), sched.alpha(0.4) * x0,
                               rtol=0, atol=0)
    with pytest.raises(ShapeError):
        sched.forward_sample(x0, 0.4, np.zeros(3))


def test_forward_sample_moments(sched):
    rng = np.random.default_rng(5)
    n, t = 100_000, 0.5
    x0 = np.array([1.0, -0.5])
    xs = sched.forward_sample(np.tile(x0, (n, 1)), t, rng.standard_normal((n, 2)))
    a = math.exp(-0.5 * (0.05 * t + 0.5 * 19.95 * t * t))
    lam = 1.0 - a * a
    se_mean = math.sqrt(lam / n)
    assert np.all(np.abs(xs.mean(axis=0) - a * x0) < 3 * se_mean)
    se_var = lam * math.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(xs.var(axis=0, ddof=1) - lam) < 3 * se_var)


def test_forward_sample_per_row_times(sched):
    x0 = np.ones((3, 2))
    t = np.array([0.0, 0.5, 1.0])
    out = sched.forward_sample(x0, t, np.zeros((3, 2)))
    np.testing.assert_allclose(out[:, 0], sched.alpha(t))


def test_score_target(sched):
    assert np.array_equal(sched.score_target(np.zeros(2), 0.3), np.zeros(2))
    t_half = time_where_lambda_is(sched, 0.5)
    np.testing.assert_allclose(sched.score_target(np.array([1.0, -2.0]), t_half), [-2.0, 4.0],
                               rtol=1e-12)
    with pytest.raises(SingularityError):
        sched.score_target(np.array([1.0, 0.0]), 0.0)
