import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from swssb.hydro_gaussian import (
    _logdet_pd,
    bhattacharyya_distance,
    bhattacharyya_scan,
    cmi_vs_RB,
    condition,
    continuum_covariance,
    covariance_matrix,
    covariance_row,
    fisher_cmi_closed_form,
    fisher_row,
    gaussian_cmi,
    gaussian_entropy,
    interval_regions,
    momenta,
    renyi_scaling,
    tridiagonal_fisher_entropy,
)


def test_momenta_folded():
    k = momenta(8)
    assert np.all(k > -np.pi) and np.all(k <= np.pi)
    assert np.isclose(sorted(np.abs(k))[-1], np.pi)


def test_zero_time_is_zero():
    assert np.array_equal(covariance_row(32, 0.0, 1.0, 1.0), np.zeros(32))


def test_late_time_white_noise_minus_zero_mode():
    L, D, g = 64, 0.7, 1.3
    row = covariance_row(L, 1e6, D, g)
    spec = np.fft.fft(row).real
    assert abs(spec[0]) < 1e-10
    assert np.allclose(spec[1:], g / (2 * D), atol=1e-10)


def test_real_space_matches_continuum_form():
    L, t, D, g = 2000, 40.0, 1.0, 1.0
    row = covariance_row(L, t, D, g)
    x = np.arange(1, 60)
    ref = continuum_covariance(x, t, D, g)
    assert np.max(np.abs(row[x] - ref)) < 1e-3 * np.max(np.abs(ref))
    # the delta term carries the on-site weight
    assert abs(row[0] - (g / (2 * D) + continuum_covariance(0.0, t, D, g))) < 1e-3 * g


def test_covariance_row_validation():
    with pytest.raises(ValueError):
        covariance_row(1, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        covariance_row(8, -1.0, 1.0, 1.0)


def test_fisher_closed_form_RB1():
    row = fisher_row(64)
    val = gaussian_cmi(row, *interval_regions(1, 1, 1))
    expected = np.log(3) - 0.5 * np.log(2) - 0.5 * np.log(4)
    assert abs(val - expected) < 1e-9
    assert abs(val - 0.0588915) < 1e-7
    assert abs(fisher_cmi_closed_form(1) - expected) < 1e-15


@pytest.mark.parametrize("R_B", [1, 2, 5, 17, 50])
def test_fisher_cmi_matches_closed_form(R_B):
    row = fisher_row(128)
    assert abs(cmi_vs_RB(row, [R_B])[0] - fisher_cmi_closed_form(R_B)) < 1e-10


@pytest.mark.parametrize("n", list(range(1, 51)))
def test_tridiagonal_determinant_recurrence(n):
    S = covariance_matrix(fisher_row(128, c=1.7), np.arange(n))
    # D(n) = 2 D(n-1) - D(n-2) in units of c gives n + 1
    assert abs(gaussian_entropy(S) - tridiagonal_fisher_entropy(n, c=1.7)) < 1e-10


def test_fisher_entropy_small_cases():
    base = 0.5 * np.log(2 * np.pi * np.e)
    assert abs(tridiagonal_fisher_entropy(1) - (base + 0.5 * np.log(2))) < 1e-15
    assert abs(tridiagonal_fisher_entropy(2) - (2 * base + 0.5 * np.log(3))) < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_logdet_against_lu(n, seed):
    r = np.random.default_rng(seed)
    M = r.normal(size=(n, n))
    S = M @ M.T + 0.1 * np.eye(n)
    lu, piv = linalg.lu_factor(S)
    ref = float(np.log(np.abs(np.diag(lu))).sum())
    assert abs(_logdet_pd(S) - ref) < 1e-9 * max(1.0, abs(ref))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 50.0), st.integers(1, 5), st.integers(1, 12), st.integers(1, 5))
def test_cmi_nonnegative_and_symmetric(t, R_A, R_B, R_C):
    row = covariance_row(128, t, 1.0, 1.0)
    A, B, C = interval_regions(R_A, R_B, R_C)
    val = gaussian_cmi(row, A, B, C)
    assert val >= -1e-12
    assert abs(val - gaussian_cmi(row, C, B, A)) < 1e-10


def test_cmi_rejects_overlap():
    with pytest.raises(ValueError):
        gaussian_cmi(fisher_row(16), [0, 1], [1, 2], [3])


def test_conditioning_sign_symmetry():
    row = covariance_row(48, 5.0, 1.0, 1.0)
    plus = condition(row, [0, 7], [1.0, -1.0], drop=[30])
    minus = condition(row, [0, 7], [-1.0, 1.0], drop=[30])
    assert np.allclose(plus.cov, minus.cov, atol=1e-14)
    assert np.allclose(plus.mean, -minus.mean, atol=1e-14)


def test_bhattacharyya_trivial_cases():
    row = covariance_row(40, 5.0, 1.0, 1.0)
    assert bhattacharyya_distance(row, 5, q=0.0) == 0.0
    assert bhattacharyya_distance(row, 5, q=0.0, coefficient=True) == 1.0
    with pytest.raises(ValueError):
        bhattacharyya_distance(row, 0)


def test_bhattacharyya_against_explicit_gaussians():
    # conditional laws built directly from the joint covariance, then the general overlap formula
    L, r, q = 30, 6, 0.8
    row = covariance_row(L, 4.0, 1.0, 1.0)
    keep = np.array([i for i in range(L) if i != 18])
    S = covariance_matrix(row, keep)
    obs = [0, int(np.flatnonzero(keep == r)[0])]
    free = [i for i in range(len(keep)) if i not in obs]
    S11, S12, S22 = S[np.ix_(free, free)], S[np.ix_(free, obs)], S[np.ix_(obs, obs)]
    cov = S11 - S12 @ np.linalg.solve(S22, S12.T)
    m1 = S12 @ np.linalg.solve(S22, [q, -q])
    m2 = S12 @ np.linalg.solve(S22, [-q, q])
    dm = m1 - m2
    ref = dm @ np.linalg.solve(cov, dm) / 8
    assert abs(bhattacharyya_distance(row, r, q) - ref) < 1e-9 * ref


def test_bhattacharyya_scan_matches_direct():
    row = covariance_row(60, 6.0, 1.0, 1.0)
    rs = [1, 3, 10, 25, 40]
    scan = bhattacharyya_scan(row, rs, q=1.0)
    direct = [bhattacharyya_distance(row, r, 1.0) for r in rs]
    # the dropped site differs between the two routes, which must not matter
    assert np.allclose(scan, direct, rtol=1e-8)
    with pytest.raises(ValueError):
        bhattacharyya_scan(row, [59])


def test_bhattacharyya_scales_as_q_squared():
    row = covariance_row(50, 3.0, 1.0, 1.0)
    b1 = bhattacharyya_distance(row, 7, 1.0)
    assert abs(bhattacharyya_distance(row, 7, 2.0) - 4 * b1) < 1e-10 * b1


def test_renyi_scaling_one_dimension_linear_in_t():
    p = [renyi_scaling(1, np.arange(2, 40, 2), t).parameter for t in (1.0, 2.0, 4.0)]
    assert abs(p[1] / p[0] - 2) < 0.1 and abs(p[2] / p[1] - 2) < 0.1


def test_renyi_scaling_two_dimensions_exponent_inverse_t():
    r = np.geomspace(4, 200, 12)
    p = [renyi_scaling(2, r, t).parameter for t in (1.0, 2.0)]
    assert abs(p[0] / p[1] - 2) < 0.2


def test_renyi_scaling_three_dimensions_plateau():
    res = renyi_scaling(3, np.array([10.0, 20.0, 40.0, 80.0]), 1.0)
    assert res.kind == "plateau"
    assert abs(res.values[-1] - res.values[-2]) < 0.02 * res.values[-1]
    assert 0 < res.parameter < 1
    with pytest.raises(ValueError):
        renyi_scaling(4, [1.0, 2.0], 1.0)
