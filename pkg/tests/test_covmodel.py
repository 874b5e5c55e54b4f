import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftwind.covmodel import (JITTER, DriftParams, InvalidParamsError,
                                correlation, cov_matrix, cross_cov)
from driftwind.gridstore import TargetWindow

from oracles import correlation_scalar, cov_double_loop, window_points

# exp(-sqrt(5/2 + 1/3)) at 30 digits
CORR_REFERENCE = 0.185769090940161884721557255575


def test_zero_lag_is_one():
    assert correlation((0, 0), 0, DriftParams(0.3, 7.0, (4, -2))) == 1.0


def test_lag_along_drift():
    p = DriftParams(1.0, 1.0, (1.0, 0.0))
    assert correlation((1, 0), 1, p) == pytest.approx(math.exp(-1), abs=1e-15)


def test_reference_value():
    p = DriftParams.from_squared(2, 3, (1, 2))
    assert correlation((2, 4), 1, p) == pytest.approx(CORR_REFERENCE, rel=1e-14)
    assert round(correlation((2, 4), 1, p), 5) == 0.18577


def test_params_validated():
    for bad in [dict(alpha1=0, alpha2=1), dict(alpha1=1, alpha2=-1),
                dict(alpha1=1, alpha2=1, u=(np.nan, 0)),
                dict(alpha1=1, alpha2=1, sigma2=0)]:
        with pytest.raises(InvalidParamsError):
            DriftParams(**bad)


def test_nonfinite_lag_rejected():
    with pytest.raises(InvalidParamsError):
        correlation((np.inf, 0), 0, DriftParams(1, 1))


params_st = st.builds(
    DriftParams, st.floats(0.1, 20), st.floats(0.1, 20),
    st.tuples(st.floats(-8, 8), st.floats(-8, 8)))
lag_st = st.tuples(st.floats(-20, 20), st.floats(-20, 20))


@settings(max_examples=200, deadline=None)
@given(params_st, lag_st, st.floats(-3, 3))
def test_matches_scalar_oracle(p, d, h):
    ref = correlation_scalar(d, h, p.alpha1, p.alpha2, p.u)
    assert correlation(d, h, p) == pytest.approx(ref, rel=1e-13, abs=1e-300)


@settings(max_examples=200, deadline=None)
@given(params_st, lag_st, st.floats(-3, 3))
def test_stationary_symmetry(p, d, h):
    assert abs(correlation(d, h, p) - correlation((-d[0], -d[1]), -h, p)) <= 1e-14


@settings(max_examples=200, deadline=None)
@given(params_st, lag_st, st.floats(-3, 3))
def test_drift_shift_identity(p, d, h):
    shifted = (d[0] - p.u[0] * h, d[1] - p.u[1] * h)
    assert abs(correlation(d, h, p) - correlation(shifted, h, p.with_drift((0, 0)))) <= 1e-14


def test_covariance_blocks():
    w = TargetWindow((2, 2), 1, 1)
    c = cov_matrix(w, DriftParams(1.5, 2.0, (0.7, -1.1)))
    assert np.all(np.diag(c) == 1.0)
    assert np.allclose(c, c.T, atol=0, rtol=0)


def test_temporal_pair():
    w = TargetWindow.from_points([[0, 3, 3], [1, 3, 3]])
    c = cov_matrix(w, DriftParams(1.0, 1.0))
    assert c[0, 1] == pytest.approx(math.exp(-1), abs=1e-15)


@pytest.mark.parametrize("pixel_size,time_step", [(1.0, 1.0), (0.2, 3.0)])
def test_matches_double_loop(pixel_size, time_step):
    p = DriftParams.from_squared(2, 3, (1, 2))
    w = TargetWindow((4, 4), 1, 1, pixel_size, time_step)
    ref = cov_double_loop(window_points((4, 4), 1, 1, pixel_size, time_step),
                          p.alpha1, p.alpha2, p.u)
    assert np.max(np.abs(cov_matrix(w, p) - ref)) <= 1e-12


def test_irregular_window_matches_oracle():
    rng = np.random.default_rng(3)
    tij = np.column_stack([rng.integers(0, 3, 20), rng.integers(0, 9, 20),
                           rng.integers(0, 9, 20)])
    w = TargetWindow.from_points(tij, pixel_size=0.5)
    p = DriftParams(1.2, 0.8, (0.3, 0.4))
    pts = [(j * 0.5, i * 0.5, t) for t, i, j in tij]
    ref = cov_double_loop(pts, p.alpha1, p.alpha2, p.u)
    assert np.max(np.abs(cov_matrix(w, p) - ref)) <= 1e-12


def test_cross_cov_matches_cov_matrix():
    w = TargetWindow((3, 3), 1, 1)
    p = DriftParams(1.3, 2.2, (0.5, 1.5))
    xy, t = w.locations(), w.times()
    assert np.array_equal(cross_cov(xy, t, xy, t, p), cov_matrix(w, p))


def test_positive_definite_over_supported_range():
    rng = np.random.default_rng(11)
    w = TargetWindow((7, 7), 1, 7)
    for _ in range(8):
        u = rng.normal(size=2)
        u *= rng.uniform(0, 8) / np.linalg.norm(u)
        p = DriftParams(rng.uniform(0.5, 10), rng.uniform(0.5, 10), u)
        sigma = cov_matrix(w, p) + JITTER * np.eye(len(w))
        np.linalg.cholesky(sigma)
