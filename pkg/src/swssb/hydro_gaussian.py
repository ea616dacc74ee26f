"""Gaussian fluctuating hydrodynamics of a diffusive conserved density.

Starting from a flat, noiseless density the structure factor evolves as

    S_t(k) = exp(-2 D k^2 t) S_0(k) + (gamma_n / 2D) (1 - exp(-2 D k^2 t)),

so density correlations build up only below the diffusive length
``sqrt(2 D t)``. On a ring of ``L`` sites the covariance is circulant; every
quantity here is computed from its first row. Momenta are folded into
``(-pi/a, pi/a]`` so the covariance is real and symmetric. The ``k = 0`` mode
carries the conserved total charge and has zero variance when ``S_0(0) = 0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg, special

logger = logging.getLogger(__name__)


def momenta(L: int, a: float = 1.0) -> np.ndarray:
    """Lattice momenta ``2 pi n / (L a)`` folded into the first Brillouin zone."""
    n = np.arange(L)
    n = np.where(n > L // 2, n - L, n)
    return 2.0 * np.pi * n / (L * a)


def structure_factor(
    k: np.ndarray, t: float, D: float, gamma_n: float, S0: Callable | np.ndarray | None = None
) -> np.ndarray:
    """``S_t(k)`` for an initial structure factor ``S0`` (zero by default)."""
    k = np.asarray(k, dtype=np.float64)
    decay = np.exp(-2.0 * D * k * k * t)
    growth = -np.expm1(-2.0 * D * k * k * t)
    s0 = 0.0 if S0 is None else (S0(k) if callable(S0) else np.asarray(S0))
    return decay * s0 + gamma_n / (2.0 * D) * growth


def covariance_row(
    L: int, t: float, D: float, gamma_n: float, S0=None, a: float = 1.0
) -> np.ndarray:
    """First row ``S(x_0, x_j)`` of the circulant real-space covariance."""
    if L < 2 or D <= 0 or gamma_n <= 0 or t < 0:
        raise ValueError("need L >= 2, D > 0, gamma_n > 0, t >= 0")
    k = momenta(L, a)
    s = structure_factor(k, t, D, gamma_n, S0)
    return np.fft.ifft(s).real / a


def fisher_row(L: int, c: float = 1.0) -> np.ndarray:
    """Covariance row for the surrogate ``S(k) = c (2 - 2 cos k)``."""
    row = np.zeros(L)
    row[0] = 2.0 * c
    row[1] -= c
    row[-1] -= c
    return row


def covariance_matrix(row: np.ndarray, sites: Sequence[int] | None = None) -> np.ndarray:
    """Dense covariance restricted to ``sites`` (all sites by default)."""
    L = len(row)
    s = np.arange(L) if sites is None else np.asarray(sites, dtype=np.int64)
    return row[(s[:, None] - s[None, :]) % L]


def continuum_covariance(x: np.ndarray, t: float, D: float, gamma_n: float) -> np.ndarray:
    """Smooth part of the 1d real-space covariance (the delta term is omitted)."""
    x = np.asarray(x, dtype=np.float64)
    return -gamma_n / (2 * D) * np.exp(-x * x / (8 * D * t)) / np.sqrt(8 * np.pi * D * t)


# determinants and CMI


def _logdet_pd(S: np.ndarray, eps: float | None = None) -> float:
    try:
        c, _ = linalg.cho_factor(S, lower=True, check_finite=False)
    except linalg.LinAlgError:
        if eps is None:
            eps = 1e-12 * np.trace(S) / S.shape[0]
        logger.info("covariance not positive definite; adding %.3e to the diagonal", eps)
        c, _ = linalg.cho_factor(S + eps * np.eye(S.shape[0]), lower=True)
    return 2.0 * float(np.log(np.diag(c)).sum())


def gaussian_entropy(S: np.ndarray) -> float:
    """Differential entropy ``(1/2) log det(2 pi e S)``."""
    n = S.shape[0]
    return 0.5 * (n * np.log(2 * np.pi * np.e) + _logdet_pd(S))


def gaussian_cmi(
    row: np.ndarray, A: Sequence[int], B: Sequence[int], C: Sequence[int]
) -> float:
    """``I(A:C|B) = (1/2) log(|S_AB| |S_BC| / (|S_ABC| |S_B|))`` for a circulant field."""
    A, B, C = list(A), list(B), list(C)
    if len(set(A) | set(B) | set(C)) != len(A) + len(B) + len(C):
        raise ValueError("regions must be disjoint")
    if len(A) + len(B) + len(C) >= len(row):
        logger.warning("ABC covers the whole ring; the zero mode is regularised")

    def ld(s):
        return _logdet_pd(covariance_matrix(row, s)) if s else 0.0

    return 0.5 * (ld(A + B) + ld(B + C) - ld(A + B + C) - ld(B))


def interval_regions(R_A: int, R_B: int, R_C: int, start: int = 0):
    a = list(range(start, start + R_A))
    b = list(range(start + R_A, start + R_A + R_B))
    c = list(range(start + R_A + R_B, start + R_A + R_B + R_C))
    return a, b, c


def cmi_vs_RB(row: np.ndarray, R_B: Sequence[int], R_A: int = 1, R_C: int = 1) -> np.ndarray:
    """CMI for contiguous ``A | B | C`` intervals as a function of ``R_B``."""
    return np.array([gaussian_cmi(row, *interval_regions(R_A, r, R_C)) for r in R_B])


def fisher_cmi_closed_form(R_B, R_A: int = 1, R_C: int = 1):
    """CMI of the surrogate field from ``det`` of the tridiagonal Toeplitz matrix ``= (n+1) c^n``."""
    R_B = np.asarray(R_B, dtype=np.float64)
    return 0.5 * np.log(
        (R_A + R_B + 1) * (R_B + R_C + 1) / ((R_A + R_B + R_C + 1) * (R_B + 1))
    )


def tridiagonal_fisher_entropy(R_B: int, c: float = 1.0) -> float:
    """Entropy of ``R_B`` sites of the surrogate field: ``(R_B/2) log(2 pi e c) + (1/2) log(R_B + 1)``."""
    return 0.5 * R_B * np.log(2 * np.pi * np.e * c) + 0.5 * np.log(R_B + 1)


# conditioned Gaussians


@dataclass
class ConditionedGaussian:
    """Gaussian of the unconditioned sites given values on ``sites``."""

    sites: np.ndarray
    values: np.ndarray
    free: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)
    cov: np.ndarray = field(repr=False)


def condition(row: np.ndarray, sites: Sequence[int], values: Sequence[float], drop: Sequence[int] = ()) -> ConditionedGaussian:
    """Condition a zero-mean circulant field on ``n[sites] = values``.

    Sites listed in ``drop`` are marginalised out first. Dropping one site
    removes the zero mode of a charge-conserving field without changing any
    overlap between conditioned states, because the dropped density is fixed
    by the others.
    """
    L = len(row)
    sites = np.asarray(sites, dtype=np.int64)
    excl = set(sites.tolist()) | set(int(d) for d in drop)
    free = np.array([i for i in range(L) if i not in excl], dtype=np.int64)
    S12 = row[(free[:, None] - sites[None, :]) % L]
    S22 = covariance_matrix(row, sites)
    S11 = covariance_matrix(row, free)
    sol = linalg.solve(S22, np.column_stack([np.asarray(values, float), S12.T]), assume_a="pos")
    mean = S12 @ sol[:, 0]
    cov = S11 - S12 @ sol[:, 1:]
    return ConditionedGaussian(sites, np.asarray(values, float), free, mean, 0.5 * (cov + cov.T))


def _far_site(L: int, r: int) -> int:
    return int(((r + L) // 2) % L) if r % L else L // 2


def bhattacharyya_distance(row: np.ndarray, r: int, q: float = 1.0, coefficient: bool = False) -> float:
    """Distance between the states conditioned on ``(n_0, n_r) = (q, -q)`` and ``(-q, q)``.

    Both conditioned states share the covariance and have opposite means, so
    the distance is ``(1/2) mu^T S_cond^{-1} mu``. One site far from both
    conditioning points is dropped to remove the conserved zero mode.
    """
    L = len(row)
    if not 0 < r < L:
        raise ValueError("need 0 < r < L")
    g = condition(row, [0, r], [q, -q], drop=[_far_site(L, r)])
    c, _ = linalg.cho_factor(g.cov, lower=True)
    B = 0.5 * float(g.mean @ linalg.cho_solve((c, True), g.mean))
    return float(np.exp(-B)) if coefficient else B


def bhattacharyya_scan(row: np.ndarray, r_values: Sequence[int], q: float = 1.0) -> np.ndarray:
    """Distances for many separations from one inverse of the covariance.

    Uses ``mu^T S_cond^{-1} mu = q2^T [(S^{-1})_22 - S_22^{-1}] q2`` on the
    field with the last site dropped, so ``r`` must be at most ``L - 2``.
    """
    L = len(row)
    r_values = np.asarray(list(r_values), dtype=np.int64)
    if r_values.min() < 1 or r_values.max() > L - 2:
        raise ValueError("separations must lie in [1, L - 2]")
    S = covariance_matrix(row, np.arange(L - 1))
    c, _ = linalg.cho_factor(S, lower=True)
    P = linalg.cho_solve((c, True), np.eye(L - 1))
    q2 = np.array([q, -q])
    out = np.empty(len(r_values))
    for k, r in enumerate(r_values):
        idx = [0, int(r)]
        Pinv22 = P[np.ix_(idx, idx)]
        S22 = S[np.ix_(idx, idx)]
        out[k] = 0.5 * float(q2 @ (Pinv22 - np.linalg.inv(S22)) @ q2)
    return out


# Renyi correlator scaling


@dataclass
class RenyiScaling:
    """Renyi correlator ``C(r) / C(0)`` from the Gaussian dipole energy.

    ``parameter`` is the fitted decay length (d = 1), the power-law exponent
    (d = 2) or the large-``r`` plateau (d = 3).
    """

    d: int
    t: float
    r: np.ndarray
    values: np.ndarray
    parameter: float
    kind: str


def _radial_kernel(d: int, k: np.ndarray, r: float) -> np.ndarray:
    kr = k * r
    if d == 1:
        return (np.cos(kr) - 1.0) / np.pi
    if d == 2:
        return k * (special.j0(kr) - 1.0) / (2 * np.pi)
    if d == 3:
        return k * k * (np.sinc(kr / np.pi) - 1.0) / (2 * np.pi**2)
    raise ValueError("d must be 1, 2 or 3")


def dipole_potential(r: float, d: int, D: float, gamma_n: float, t: float, n: int = 4096, tol: float = 1e-6) -> float:
    """``V(r) - V(0)`` with ``V(r) = int d^dk/(2pi)^d e^{ikr} / S_t(k)`` over ``|k| <= pi``.

    The ``k -> 0`` singularity cancels in the difference. Simpson's rule is
    refined by a factor of four until successive values agree to ``tol``.
    """
    pref = 2.0 * D / gamma_n

    def val(m):
        k = np.linspace(0.0, np.pi, m + 1)
        denom = -np.expm1(-2.0 * D * k * k * t)
        with np.errstate(invalid="ignore", divide="ignore"):
            f = _radial_kernel(d, k, r) / denom
        # limits at k = 0
        if d == 1:
            f[0] = -(r * r) / (2 * np.pi) / (2 * D * t)
        else:
            f[0] = 0.0
        return pref * integrate.simpson(f, x=k)

    prev = val(n)
    for _ in range(6):
        n *= 4
        cur = val(n)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    raise RuntimeError("dipole potential quadrature did not converge")


def renyi_scaling(
    d: int, r: Sequence[float], t: float, D: float = 1.0, gamma_n: float = 1.0, q: float = 1.0, Q: int = 1
) -> RenyiScaling:
    """Renyi correlator ``exp((q^2 Q^2 / 4) (V(r) - V(0)))`` and its scaling parameter."""
    r = np.asarray(list(r), dtype=np.float64)
    dv = np.array([dipole_potential(x, d, D, gamma_n, t) for x in r])
    vals = np.exp(q * q * Q * Q / 4.0 * dv)
    half = r >= np.median(r)
    if d == 1:
        slope = np.polyfit(r[half], np.log(vals[half]), 1)[0]
        return RenyiScaling(d, t, r, vals, float(-1.0 / slope), "decay_length")
    if d == 2:
        slope = np.polyfit(np.log(r[half]), np.log(vals[half]), 1)[0]
        return RenyiScaling(d, t, r, vals, float(-slope), "exponent")
    return RenyiScaling(d, t, r, vals, float(vals[-1]), "plateau")
