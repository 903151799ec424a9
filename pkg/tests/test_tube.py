import math

import numpy as np
import pytest

from tubeplan.tube import (TubeParams, epsilon_coeffs, mean_square_gap_bound,
                           tube_curve, tube_radius)

SQRT01 = math.sqrt(0.1)


def test_epsilon_coeffs_oracle_09():
    # frozen from a 40-digit mpmath evaluation of the closed forms
    e1, e2 = epsilon_coeffs(0.9)
    assert e1 == pytest.approx(2.0502854405205567, abs=1e-12)
    assert e2 == pytest.approx(2.4691358024691358, abs=1e-12)


def test_epsilon_coeffs_oracle_15_16():
    e1, e2 = epsilon_coeffs(15.0 / 16.0)
    assert e1 == pytest.approx(2.4020653397269802, abs=1e-12)
    assert e2 == pytest.approx(2.2755555555555556, abs=1e-12)


def test_epsilon_coeffs_limits():
    grid = np.linspace(0.5, 0.999, 40)
    e1s = np.array([epsilon_coeffs(e)[0] for e in grid])
    e2s = np.array([epsilon_coeffs(e)[1] for e in grid])
    assert np.all(np.diff(e1s) > 0)  # monotone growth toward +inf
    assert e2s[-1] == pytest.approx(2.0, rel=1e-2)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            epsilon_coeffs(bad)


def test_tube_radius_contracting_branch():
    params = TubeParams(c=-0.5, sigma=SQRT01, n=1, delta=1e-3, eps=15.0 / 16.0,
                        horizon=5.0, dt_param=0.05)
    assert tube_radius(params, 5.0) == pytest.approx(2.124659458861274, rel=1e-12)
    assert tube_radius(params, 1.0) == pytest.approx(1.7745059991254817, rel=1e-12)


def test_tube_radius_expanding_branch():
    params = TubeParams(c=1.0, sigma=SQRT01, n=1, delta=1e-3, eps=15.0 / 16.0,
                        horizon=2.0)
    r0 = tube_radius(params, 0.0)
    r2 = tube_radius(params, 2.0)
    assert r0 == pytest.approx(0.94311048403653433, rel=1e-12)
    assert r2 == pytest.approx(6.9686962740355916, rel=1e-12)
    assert r2 / r0 == pytest.approx(math.exp(2.0), rel=1e-12)


def test_tube_radius_zero_sigma():
    params = TubeParams(c=1.0, sigma=0.0, n=3, delta=1e-3, eps=0.9, horizon=2.0)
    assert tube_radius(params, 1.0) == 0.0
    neg = TubeParams(c=-1.0, sigma=0.0, n=3, delta=1e-3, eps=0.9, horizon=2.0,
                     dt_param=0.01)
    assert tube_radius(neg, 2.0) == 0.0


def test_tube_radius_domain_errors():
    params = TubeParams(c=1.0, sigma=1.0, n=1, delta=1e-3, eps=0.9, horizon=2.0)
    with pytest.raises(ValueError):
        tube_radius(params, -0.5)
    with pytest.raises(ValueError):
        tube_radius(params, 2.5)


def test_tube_params_validation():
    for kwargs in (
        dict(delta=0.0), dict(delta=1.0), dict(eps=0.0), dict(eps=1.0),
        dict(sigma=-1.0), dict(n=0), dict(horizon=0.0), dict(dt_param=5.0),
    ):
        full = dict(c=1.0, sigma=1.0, n=1, delta=1e-3, eps=0.9, horizon=2.0)
        full.update(kwargs)
        with pytest.raises(ValueError):
            TubeParams(**full)


def test_tube_radius_c_zero_limit():
    # the c >= 0 branch must be continuous at its own c -> 0 limit
    base = dict(sigma=1.0, n=2, delta=1e-2, eps=0.9, horizon=3.0)
    exact = tube_radius(TubeParams(c=0.0, **base), 1.5)
    near = tube_radius(TubeParams(c=1e-12, **base), 1.5)
    assert near == pytest.approx(exact, rel=1e-9)


def test_tube_radius_monotonicity():
    ts = np.linspace(0.0, 4.0, 25)
    for c in (-0.8, 0.0, 0.7):
        params = TubeParams(c=c, sigma=0.3, n=2, delta=1e-3, eps=0.9,
                            horizon=4.0, dt_param=0.02)
        r = tube_radius(params, ts)
        assert np.all(np.diff(r) >= -1e-15)
    # monotone in n, sigma, horizon and log(1/delta)
    ref = dict(c=-0.5, sigma=0.3, n=2, delta=1e-3, eps=0.9, horizon=4.0,
               dt_param=0.02)
    r_ref = tube_radius(TubeParams(**ref), 2.0)
    for key, value in (("n", 3), ("sigma", 0.4), ("horizon", 5.0), ("delta", 1e-4)):
        bumped = dict(ref)
        bumped[key] = value
        assert tube_radius(TubeParams(**bumped), 2.0) > r_ref


def test_tube_curve_pointwise_and_single_point():
    params = TubeParams(c=0.5, sigma=0.2, n=2, delta=1e-3, eps=0.9, horizon=2.0)
    a = tube_curve(params, np.linspace(0.0, 2.0, 9))
    b = tube_curve(params, np.linspace(0.0, 2.0, 5))
    # shared grid points agree exactly
    assert np.array_equal(a.radii[::2], b.radii)
    e1, e2 = epsilon_coeffs(0.9)
    expect = 0.2 * math.sqrt((1.0 - math.exp(-2.0)) / 1.0
                             * (e1 * 2 + e2 * math.log(1e3)))
    single = tube_curve(params, [0.0])
    assert single.radii[0] == pytest.approx(expect, rel=1e-12)


def test_tube_curve_default_dt_recorded():
    params = TubeParams(c=-0.5, sigma=0.1, n=1, delta=1e-3, eps=0.9, horizon=5.0)
    curve = tube_curve(params, [0.0, 5.0])
    assert curve.params.dt_param == pytest.approx(0.01)
    assert curve.params.dt_defaulted


def test_mean_square_gap_bound():
    assert mean_square_gap_bound(-0.5, 1.0, 1, 0.0) == 0.0
    assert mean_square_gap_bound(0.0, 1.0, 1, 3.0) == pytest.approx(3.0)
    assert mean_square_gap_bound(1e-12, 1.0, 1, 3.0) == pytest.approx(3.0)
    # stationary value sigma^2/(-2c) for the contracting case
    assert mean_square_gap_bound(-0.5, math.sqrt(0.1), 1, 1e6) == pytest.approx(0.1)
