"""Closed forms for the decohered rotor model and its modified BKT flow.

Theta functions are evaluated at purely imaginary argument ``tau = i y``:

    theta3(y) = sum_n exp(-pi y n^2)
    theta2(y) = sum_n exp(-pi y (n + 1/2)^2)

For ``y < 1`` the series are replaced by their Jacobi-transformed forms, whose
terms fall off as ``exp(-pi n^2 / y)``; either way the truncation error is
below ``1e-18`` relative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp

_TERM_TOL = 1e-18


def _q_sum(y: float, shift: float, alternating: bool = False) -> float:
    """``sum_{n=-inf}^{inf} (+-1)^n exp(-pi y (n + shift)^2)`` by direct summation."""
    total = 0.0
    n = 0
    while True:
        terms = 0.0
        for m in {n, -n - 1 if shift else -n}:
            sign = -1.0 if alternating and m % 2 else 1.0
            terms += sign * math.exp(-math.pi * y * (m + shift) ** 2)
        total += terms
        if abs(terms) < _TERM_TOL * max(abs(total), 1e-300) and n > 0:
            return total
        n += 1


@dataclass(frozen=True)
class ThetaEvaluator:
    """Jacobi theta functions ``theta_2, theta_3, theta_4`` at ``tau = i y``."""

    y: float

    def __post_init__(self):
        if not self.y > 0:
            raise ValueError("theta argument must have positive imaginary part")

    def theta3(self) -> float:
        if self.y >= 1.0:
            return _q_sum(self.y, 0.0)
        return _q_sum(1.0 / self.y, 0.0) / math.sqrt(self.y)

    def theta2(self) -> float:
        if self.y >= 1.0:
            return _q_sum(self.y, 0.5)
        return _q_sum(1.0 / self.y, 0.0, alternating=True) / math.sqrt(self.y)

    def theta4(self) -> float:
        if self.y >= 1.0:
            return _q_sum(self.y, 0.0, alternating=True)
        return _q_sum(1.0 / self.y, 0.5) / math.sqrt(self.y)

    def log_ratio_23(self) -> float:
        """``log(theta2 / theta3)`` without cancellation when the ratio is near 1."""
        if self.y >= 1.0:
            return math.log(self.theta2() / self.theta3())
        w = 1.0 / self.y
        # theta3(w) - 1 and theta4(w) - 1 as tails of their series
        s3 = s4 = 0.0
        n = 1
        while True:
            term = 2.0 * math.exp(-math.pi * w * n * n)
            s3 += term
            s4 += -term if n % 2 else term
            if term < _TERM_TOL * max(s3, 1e-300):
                break
            n += 1
        return math.log1p(s4) - math.log1p(s3)


def theta_product(y: float, which: int, max_terms: int = 1_000_000) -> float:
    """Product representation of ``theta_2`` or ``theta_3``; an independent check on the series."""
    q = math.exp(-math.pi * y)
    out = 2.0 * q**0.25 if which == 2 else 1.0
    for m in range(1, max_terms + 1):
        f = (1.0 - q ** (2 * m))
        if which == 2:
            f *= (1.0 + q ** (2 * m)) ** 2
        elif which == 3:
            f *= (1.0 + q ** (2 * m - 1)) ** 2
        else:
            raise ValueError("which must be 2 or 3")
        out *= f
        if q ** (2 * m - 1) < _TERM_TOL:
            break
    return out


# 1d and 2d lengths and exponents


@dataclass(frozen=True)
class RotorLengths:
    xi2: float
    xi1_spinwave: float
    xi1_exact: float
    theta_ratio: float


def rotor1d_lengths(t_tilde: float) -> RotorLengths:
    """Renyi-2 and Renyi-1 correlation lengths of the 1d rotor model.

    The exact Renyi-1 length is ``1 / (-log(theta2/theta3) + 1/(8 t))`` with the
    theta functions at ``tau = i / (2 pi t)``. When ``exp(-2 pi^2 t)``
    underflows the asymptotic ratio ``1 - 4 exp(-2 pi^2 t)`` is used.
    """
    if not t_tilde > 0:
        raise ValueError("t_tilde must be positive")
    y = 1.0 / (2.0 * math.pi * t_tilde)
    if 2.0 * math.pi**2 * t_tilde > 700.0:
        log_ratio = -4.0 * math.exp(-2.0 * math.pi**2 * t_tilde)
    else:
        log_ratio = ThetaEvaluator(y).log_ratio_23()
    xi1 = 1.0 / (-log_ratio + 1.0 / (8.0 * t_tilde))
    return RotorLengths(4.0 * t_tilde, 8.0 * t_tilde, xi1, math.exp(log_ratio))


def rotor2d_exponents(t_tilde: float, Q: float) -> float:
    """Scaling dimension ``Q / (8 pi t)`` of the 2d Renyi-Q correlator."""
    if not t_tilde > 0 or Q < 1:
        raise ValueError("need t_tilde > 0 and Q >= 1")
    return Q / (8.0 * math.pi * t_tilde)


def stiffness_constants(t_tilde: float) -> tuple[float, float]:
    """Renyi-2 and disorder-averaged stiffness ``(2 t, t)``."""
    if not t_tilde > 0:
        raise ValueError("t_tilde must be positive")
    return 2.0 * t_tilde, t_tilde


T_CRITICAL = 1.0 / math.pi


def coulomb_energy(
    charges: Sequence[float], positions: np.ndarray, t_tilde: float, d: int = 1
) -> float:
    """Coulomb-gas energy of a charge configuration.

    ``d = 1`` uses the linear kernel ``-(1/2t) sum_{j<k} m_j m_k |x_j - x_k|``,
    ``d = 2`` the logarithmic one with prefactor ``1/(2 pi t)``. A non-neutral
    configuration has zero probability and returns ``inf``. Charges may be
    fractional, as for the half-charge test dipole of the Renyi-1 correlator.
    """
    m = np.asarray(charges, dtype=np.float64)
    if m.size == 0:
        return 0.0
    if abs(m.sum()) > 1e-12:
        return math.inf
    x = np.asarray(positions, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) != len(m):
        raise ValueError("one position per charge")
    iu = np.triu_indices(len(m), 1)
    r = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)[iu]
    mm = (m[:, None] * m[None, :])[iu]
    if d == 1:
        return float(-(mm * r).sum() / (2.0 * t_tilde))
    if d == 2:
        if np.any(r == 0):
            raise ValueError("coincident charges in 2d")
        return float(-(mm * np.log(r)).sum() / (2.0 * math.pi * t_tilde))
    raise ValueError("d must be 1 or 2")


# Renyi-2 CMI


def transfer_eigenvalue(m: np.ndarray, t: float) -> np.ndarray:
    """Renyi-2 transfer-matrix eigenvalues ``lambda_m``, normalised by ``theta3``."""
    m = np.asarray(m)
    ratio = math.exp(ThetaEvaluator(1.0 / (math.pi * t)).log_ratio_23())
    return np.exp(-(m * m) / (4.0 * t)) * np.where(m % 2 == 0, 1.0, ratio)


def _z_sum(n: int, t: float) -> float:
    """``sum_m (lambda_m / lambda_0)^n`` over all integers ``m``."""
    m_max = int(math.ceil(math.sqrt(4.0 * t * 50.0 / n))) + 2
    m = np.arange(-m_max, m_max + 1)
    return float(np.sum(transfer_eigenvalue(m, t) ** n))


def renyi2_cmi_rotor(
    R_B: int,
    t: float,
    geometry: str = "edge",
    method: str = "exact",
    R_A: int = 1,
    R_C: int = 1,
) -> float:
    """Renyi-2 CMI of the 1d rotor chain.

    ``edge``: ``A`` and ``C`` cover the rest of the chain, so
    ``Z_ABC Z_B / (Z_AB Z_BC) = theta3(i y) + (theta2/theta3)^{R_B+1} theta2(i y)``
    with ``y = (R_B + 1) / (pi t)``.
    ``interior``: all four partition functions are sums ``sum_m lambda_m^n``.

    ``method`` selects the exact sum, the ``integral`` (Gaussian) replacement
    valid for ``R_B + 1 << t``, or the ``asymptote`` ``2 exp(-(R_B+1)/(4t))``
    (edge geometry only).
    """
    if R_B < 1 or not t > 0:
        raise ValueError("need R_B >= 1 and t > 0")
    n = R_B + 1
    if geometry == "edge":
        if method == "asymptote":
            return 2.0 * math.exp(-n / (4.0 * t))
        pw = math.exp(n * ThetaEvaluator(1.0 / (math.pi * t)).log_ratio_23())
        if method == "exact":
            th = ThetaEvaluator(n / (math.pi * t))
            return math.log(th.theta3() + pw * th.theta2())
        if method == "integral":
            return math.log(math.sqrt(math.pi * t / n) * (1.0 + pw))
        raise ValueError(f"unknown method {method!r}")
    if geometry == "interior":
        nb, nab, nbc, nabc = n, R_A + R_B + 1, R_B + R_C + 1, R_A + R_B + R_C + 1
        if method == "exact":
            z = {k: _z_sum(k, t) for k in (nb, nab, nbc, nabc)}
            return math.log(z[nabc] * z[nb] / (z[nab] * z[nbc]))
        if method == "integral":
            return 0.5 * math.log(nab * nbc / (nabc * nb))
        raise ValueError(f"unknown method {method!r}")
    raise ValueError(f"unknown geometry {geometry!r}")


# RG flow


def replica_coefficient(Q: float) -> float:
    """``A = (Q - 2) sqrt(2 / Q)``."""
    return (Q - 2.0) * math.sqrt(2.0 / Q)


def separatrix_slope(A: float) -> float:
    """Slope ``kappa`` of the invariant ray ``y = kappa s`` (root of ``k^2 + A k - 1``)."""
    return 0.5 * (-A + math.sqrt(A * A + 4.0))


def rg_rhs(s: float, y: float, A: float) -> tuple[float, float]:
    return -y * y, -s * y + A * y * y


@dataclass
class RGState:
    y: float
    s: float
    A: float

    def __post_init__(self):
        if self.y < 0:
            raise ValueError("fugacity must be non-negative")


@dataclass
class RGTrajectory:
    l: np.ndarray
    y: np.ndarray
    s: np.ndarray
    l_star: float | None

    @property
    def ordered(self) -> bool:
        """True when ``y`` never reached the threshold in the span."""
        return self.l_star is None


def rg_flow(
    state: RGState,
    l_max: float = 1e4,
    threshold: float = 1.0,
    rtol: float = 1e-10,
    atol: float = 1e-13,
) -> RGTrajectory:
    """Integrate ``dy/dl = -s y + A y^2``, ``ds/dl = -y^2`` until ``y`` hits ``threshold``."""

    def f(_, u):
        return [-u[1] * u[1], -u[0] * u[1] + state.A * u[1] * u[1]]

    def hit(_, u):
        return u[1] - threshold

    hit.terminal = True
    hit.direction = 1
    sol = solve_ivp(f, (0.0, l_max), [state.s, state.y], method="DOP853", rtol=rtol, atol=atol, events=hit)
    l_star = float(sol.t_events[0][0]) if sol.t_events[0].size else None
    return RGTrajectory(sol.t, sol.y[1], sol.y[0], l_star)


def find_separatrix(A: float, y0: float = 1e-3, tol: float = 1e-14, l_max: float = 1e6) -> float:
    """Initial ``s`` on the separatrix at fixed ``y(0) = y0``, by bisection.

    Below the separatrix ``y`` runs away; above it ``y`` flows to zero.
    """
    kappa = separatrix_slope(A)
    lo, hi = 0.5 * y0 / kappa, 2.0 * y0 / kappa

    def runs_away(s0):
        tr = rg_flow(RGState(y0, s0, A), l_max=l_max, threshold=10.0 * y0)
        return not tr.ordered and tr.s[-1] < 0

    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if runs_away(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class ExponentFit:
    A: float
    p: float
    stderr: float
    deltas: np.ndarray
    log_xi: np.ndarray
    threshold: float


def correlation_exponent(
    A: float,
    deltas: Sequence[float] | None = None,
    y0: float = 1e-3,
    threshold: float = 1.0,
    l_max: float = 1e10,
) -> ExponentFit:
    """Fit ``log log xi = const - p log delta`` with ``xi = exp(l*)``.

    ``delta`` is the detuning of ``s(0)`` below the separatrix ray
    ``s = y0 / kappa``.
    """
    if deltas is None:
        deltas = np.geomspace(1e-9, 1e-6, 10)
    deltas = np.asarray(deltas, dtype=np.float64)
    s_sep = y0 / separatrix_slope(A)
    log_xi = np.empty(len(deltas))
    for k, d in enumerate(deltas):
        tr = rg_flow(RGState(y0, s_sep - d, A), threshold=threshold, l_max=l_max)
        if tr.ordered:
            raise RuntimeError(f"detuning {d:g} did not reach the threshold")
        log_xi[k] = tr.l_star
    fit = stats.linregress(np.log(deltas), np.log(log_xi))
    return ExponentFit(A, -fit.slope, fit.stderr, deltas, log_xi, threshold)


def threshold_sensitivity(A: float, thresholds: Sequence[float] = (0.5, 1.0, 2.0), **kw) -> dict[float, float]:
    return {th: correlation_exponent(A, threshold=th, **kw).p for th in thresholds}


def flow_field(s: np.ndarray, y: np.ndarray, A: float) -> tuple[np.ndarray, np.ndarray]:
    """``(ds/dl, dy/dl)`` on a grid, for quiver plots."""
    S, Y = np.meshgrid(np.asarray(s, float), np.asarray(y, float), indexing="ij")
    return -Y * Y, -S * Y + A * Y * Y


def bkt_invariant(traj: RGTrajectory) -> np.ndarray:
    """``y^2 - s^2`` along a trajectory; constant when ``A = 0``."""
    return traj.y**2 - traj.s**2
