import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swssb.rotor_analytic import (
    T_CRITICAL,
    RGState,
    ThetaEvaluator,
    bkt_invariant,
    correlation_exponent,
    coulomb_energy,
    find_separatrix,
    flow_field,
    renyi2_cmi_rotor,
    replica_coefficient,
    rg_flow,
    rotor1d_lengths,
    rotor2d_exponents,
    separatrix_slope,
    stiffness_constants,
    theta_product,
    transfer_eigenvalue,
)

mpmath.mp.dps = 40


def _mp_theta(n, y):
    return float(mpmath.jtheta(n, 0, mpmath.exp(-mpmath.pi * y)))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 20.0))
def test_theta_against_mpmath(y):
    th = ThetaEvaluator(y)
    for n, val in ((2, th.theta2()), (3, th.theta3()), (4, th.theta4())):
        ref = _mp_theta(n, y)
        if ref > 1e-250:
            assert abs(val - ref) <= 1e-12 * ref


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 5.0))
def test_log_ratio_against_mpmath(y):
    # the ratio differs from one by about 4 exp(-pi / y), so resolve that many digits
    with mpmath.workdps(int(1.4 / y) + 40):
        q = mpmath.exp(-mpmath.pi * y)
        ref = float(mpmath.log(mpmath.jtheta(2, 0, q) / mpmath.jtheta(3, 0, q)))
    got = ThetaEvaluator(y).log_ratio_23()
    assert abs(got - ref) <= 1e-12 * abs(ref)


@pytest.mark.parametrize("y", [0.3, 1.0, 2.5])
def test_product_representation(y):
    th = ThetaEvaluator(y)
    assert abs(theta_product(y, 2) - th.theta2()) < 1e-12 * th.theta2()
    assert abs(theta_product(y, 3) - th.theta3()) < 1e-12 * th.theta3()
    # Jacobi identity theta3^4 = theta2^4 + theta4^4
    assert abs(th.theta3() ** 4 - th.theta2() ** 4 - th.theta4() ** 4) < 1e-12 * th.theta3() ** 4
    with pytest.raises(ValueError):
        theta_product(y, 4)


def test_theta_rejects_nonpositive():
    with pytest.raises(ValueError):
        ThetaEvaluator(0.0)


def test_lengths_examples():
    r = rotor1d_lengths(1.0)
    assert r.xi2 == 4.0 and r.xi1_spinwave == 8.0
    half = rotor1d_lengths(0.5)
    assert abs(half.theta_ratio - (1 - 4 * math.exp(-math.pi**2))) < 1e-7
    assert abs(half.xi1_exact / 4.0 - 1) < 1e-3
    big = rotor1d_lengths(1e3)
    assert abs(big.xi1_exact / big.xi2 - 2) < 1e-12
    with pytest.raises(ValueError):
        rotor1d_lengths(0.0)


def test_length_correction_monotone_and_bounded():
    ts = np.linspace(0.3, 20.0, 60)
    # the correction to 1 / xi1 is -log(theta2 / theta3), resolved separately from 1 / (8 t)
    corr = np.array([-ThetaEvaluator(1 / (2 * np.pi * t)).log_ratio_23() for t in ts])
    assert np.all(corr > 0)
    assert np.all(np.diff(corr) < 0)
    q = np.exp(-2 * np.pi**2 * ts)
    assert np.all(np.abs(corr / (4 * q) - 1) < 8 * q + 1e-12)
    inv = np.array([1 / rotor1d_lengths(t).xi1_exact for t in ts])
    assert np.all(np.diff(inv * 8 * ts) <= 1e-15) and np.all(inv * 8 * ts >= 1 - 1e-15)


def test_asymptotic_branch_continuous():
    t_switch = 700.0 / (2 * math.pi**2)
    lo, hi = t_switch * (1 - 1e-9), t_switch * (1 + 1e-9)
    a = rotor1d_lengths(lo).xi1_exact / (8 * lo)
    b = rotor1d_lengths(hi).xi1_exact / (8 * hi)
    assert abs(a - b) < 1e-14


def test_2d_exponents_and_stiffness():
    assert abs(rotor2d_exponents(T_CRITICAL, 2) - 0.25) < 1e-15
    assert abs(rotor2d_exponents(T_CRITICAL, 1) - 0.125) < 1e-15
    assert stiffness_constants(1.0) == (2.0, 1.0)
    r2, r1 = stiffness_constants(T_CRITICAL)
    assert abs(r2 - 2 / math.pi) < 1e-15 and abs(r1 - 1 / math.pi) < 1e-15
    with pytest.raises(ValueError):
        rotor2d_exponents(1.0, 0.5)


def test_coulomb_examples():
    assert coulomb_energy([], np.zeros(0), 1.0) == 0.0
    x, t = 6.0, 0.7
    assert abs(coulomb_energy([1, -1], [0.0, x], t) - x / (2 * t)) < 1e-14
    # half-charge test dipole gives the Renyi-1 length 8 t
    assert abs(coulomb_energy([0.5, -0.5], [0.0, x], t) - x / (8 * t)) < 1e-14
    assert coulomb_energy([1, 1], [0.0, 1.0], t) == math.inf
    with pytest.raises(ValueError):
        coulomb_energy([1, -1], [[0.0, 0.0], [0.0, 0.0]], 1.0, d=2)


@settings(max_examples=30)
@given(st.lists(st.integers(-2, 2), min_size=4, max_size=4), st.lists(st.integers(-20, 20), min_size=4, max_size=4, unique=True), st.floats(0.1, 5.0))
def test_coulomb_brute_force(charges, xs, t):
    charges = charges[:3] + [-sum(charges[:3])]
    e = 0.0
    for j, k in itertools.combinations(range(4), 2):
        e += charges[j] * charges[k] * abs(xs[j] - xs[k])
    assert abs(coulomb_energy(charges, np.array(xs), t) + e / (2 * t)) < 1e-9 * (1 + abs(e / t))
    pos2 = np.column_stack([xs, np.zeros(4)])
    pos2[:, 1] = [0, 1, 0, 1]
    e2 = sum(charges[j] * charges[k] * math.log(np.linalg.norm(pos2[j] - pos2[k])) for j, k in itertools.combinations(range(4), 2))
    assert abs(coulomb_energy(charges, pos2, t, d=2) + e2 / (2 * math.pi * t)) < 1e-9 * (1 + abs(e2 / t))


def test_edge_cmi_example_and_asymptote():
    t = 1.0
    ex = renyi2_cmi_rotor(11, t)
    asym = renyi2_cmi_rotor(11, t, method="asymptote")
    assert abs(asym - 2 * math.exp(-3)) < 1e-15
    assert abs(ex / asym - 1) < 0.05
    # approach to the asymptote from below, monotone in (R_B + 1) / t
    gaps = [1 - renyi2_cmi_rotor(r, t) / renyi2_cmi_rotor(r, t, method="asymptote") for r in (7, 11, 15, 23, 31)]
    assert all(g > 0 for g in gaps) and np.all(np.diff(gaps) < 0)


def test_edge_cmi_large_t_integral_branch():
    for R_B in (1, 3, 6):
        ex = renyi2_cmi_rotor(R_B, 400.0)
        it = renyi2_cmi_rotor(R_B, 400.0, method="integral")
        assert abs(ex - it) < 1e-9 * abs(it)


def test_interior_cmi_power_law():
    t = 1e6
    R = np.array([50, 100, 200])
    vals = np.array([renyi2_cmi_rotor(r, t, geometry="interior") for r in R])
    integ = np.array([renyi2_cmi_rotor(r, t, geometry="interior", method="integral") for r in R])
    assert np.allclose(vals, integ, rtol=1e-3)
    assert np.all(vals > 0)
    slopes = np.diff(np.log(vals)) / np.diff(np.log(R))
    assert np.all(np.abs(slopes + 2) < 0.1)
    # the tail is 1 / (2 (R_B + 2)^2) up to O(R_B^-4)
    assert np.allclose(integ * 2 * (R + 2.0) ** 2, 1, rtol=1e-3)


def test_cmi_argument_errors():
    with pytest.raises(ValueError):
        renyi2_cmi_rotor(0, 1.0)
    with pytest.raises(ValueError):
        renyi2_cmi_rotor(3, 1.0, geometry="bulk")
    with pytest.raises(ValueError):
        renyi2_cmi_rotor(3, 1.0, geometry="interior", method="asymptote")


def test_replica_coefficient_and_slope():
    assert replica_coefficient(2) == 0.0
    assert abs(replica_coefficient(1) + math.sqrt(2)) < 1e-15
    for A in (-math.sqrt(2), 0.0, 0.7):
        k = separatrix_slope(A)
        assert abs(k * k + A * k - 1) < 1e-14


def test_fixed_line_is_stationary():
    tr = rg_flow(RGState(0.0, 0.4, 0.0), l_max=100.0)
    assert tr.ordered
    assert np.all(tr.y == 0) and np.allclose(tr.s, 0.4)


def test_separatrix_ray_is_invariant():
    for A in (0.0, -math.sqrt(2)):
        k = separatrix_slope(A)
        y0 = 1e-3
        tr = rg_flow(RGState(y0, y0 / k, A), l_max=1e4)
        assert np.allclose(tr.y / tr.s, k, rtol=1e-8)


def test_bkt_invariant_conserved_at_A0():
    tr = rg_flow(RGState(0.05, 0.03, 0.0), l_max=50.0, threshold=10.0)
    inv = bkt_invariant(tr)
    assert np.max(np.abs(inv - inv[0])) < 1e-6


def test_bisection_brackets_ray():
    A = 0.0
    s_star = find_separatrix(A, y0=1e-2, tol=1e-6, l_max=1e4)
    assert abs(s_star / (1e-2 / separatrix_slope(A)) - 1) < 1e-2


def test_exponent_A0():
    fit = correlation_exponent(0.0)
    assert abs(fit.p - 0.5) < 0.03


def test_exponent_Q1_reported():
    fit = correlation_exponent(replica_coefficient(1))
    assert 0 < fit.p < 2 and np.isfinite(fit.stderr)


def test_exponent_ordered_side_error():
    with pytest.raises(RuntimeError):
        correlation_exponent(0.0, deltas=[-1e-4, -2e-4, -3e-4], l_max=1e3)


def test_flow_field_shapes():
    ds, dy = flow_field(np.linspace(0, 1, 5), np.linspace(0, 1, 4), 0.0)
    assert ds.shape == dy.shape == (5, 4)
    assert np.all(ds <= 0)
