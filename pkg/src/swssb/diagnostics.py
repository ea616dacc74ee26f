"""Correlators, entropies and length-scale fits for sector distributions.

For a diagonal density matrix ``rho = sum_s P(s) |s><s|`` and the hop
operator ``O_ij = S_i^+ S_j^-`` (moves a particle from ``j`` to ``i``):

* ``C2(i, j) = sum' P(s) P(s') / sum P(s)^2``
* ``C1(i, j) = sum' sqrt(P(s) P(s'))``

where ``sum'`` runs over configurations with ``i`` empty and ``j`` occupied
and ``s'`` is ``s`` with that particle moved. ``symmetric=True`` inserts
``O_ij + O_ji`` instead, which adds the two orientations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .config_space import SectorDistribution, marginal

logger = logging.getLogger(__name__)


def _moved_pairs(dist: SectorDistribution, i: int, j: int):
    if i == j:
        raise ValueError("correlators need two distinct sites")
    n = dist.lattice.n_sites
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError("site out of range")
    masks = dist.basis.masks
    one = np.uint64(1)
    sel = (((masks >> np.uint64(i)) & one) == 0) & (((masks >> np.uint64(j)) & one) == 1)
    src = np.flatnonzero(sel)
    moved = masks[src] + (one << np.uint64(i)) - (one << np.uint64(j))
    return dist.probs[src], dist.probs[dist.basis.rank(moved)]


def _orientations(i, j, symmetric):
    return [(i, j), (j, i)] if symmetric else [(i, j)]


def renyi2(dist: SectorDistribution, i: int, j: int, symmetric: bool = False) -> float:
    """Renyi-2 correlator ``Tr(O rho O^dag rho) / Tr(rho^2)``."""
    num = 0.0
    for a, b in _orientations(i, j, symmetric):
        p, q = _moved_pairs(dist, a, b)
        num += float(p @ q)
    return num / float(dist.probs @ dist.probs)


def renyi1(dist: SectorDistribution, i: int, j: int, symmetric: bool = False) -> float:
    """Renyi-1 correlator ``sum' sqrt(P(s) P(s'))``."""
    num = 0.0
    for a, b in _orientations(i, j, symmetric):
        p, q = _moved_pairs(dist, a, b)
        num += float(np.sqrt(p * q).sum())
    return num


def correlator(dist: SectorDistribution, i: int, j: int, Q: int, symmetric: bool = False) -> float:
    if Q == 1:
        return renyi1(dist, i, j, symmetric)
    if Q == 2:
        return renyi2(dist, i, j, symmetric)
    raise ValueError(f"unsupported Renyi index {Q}")


def _hop_operator(n_sites: int, i: int, j: int) -> np.ndarray:
    """Dense ``S_i^+ S_j^-`` on the full ``2**n`` configuration space."""
    dim = 1 << n_sites
    op = np.zeros((dim, dim))
    for s in range(dim):
        if not (s >> i) & 1 and (s >> j) & 1:
            op[s + (1 << i) - (1 << j), s] = 1.0
    return op


def fidelity_correlator(
    dist: SectorDistribution, i: int, j: int, symmetric: bool = False
) -> float:
    """Root fidelity ``Tr sqrt(sqrt(rho) sigma sqrt(rho))`` with ``sigma = O rho O^dag``.

    Evaluated with dense matrices on the full configuration space, so it is
    only meant for small systems (at most 10 sites).
    """
    from scipy.linalg import sqrtm

    n = dist.lattice.n_sites
    if n > 10:
        raise ValueError("dense fidelity correlator limited to 10 sites")
    rho = np.zeros((1 << n, 1 << n))
    idx = dist.basis.masks.astype(np.int64)
    rho[idx, idx] = dist.probs
    op = _hop_operator(n, i, j)
    if symmetric:
        op = op + _hop_operator(n, j, i)
    sigma = op @ rho @ op.T
    sr = sqrtm(rho)
    val = np.trace(sqrtm(sr @ sigma @ sr))
    return float(np.real(val))


def renyi_susceptibility(dist: SectorDistribution, Q: int = 2) -> float:
    """``chi^(Q) = L^-2 sum_{i != j} C^(Q)(i, j)`` with ``L`` the linear size."""
    n = dist.lattice.n_sites
    total = sum(correlator(dist, i, j, Q) for i in range(n) for j in range(n) if i != j)
    return total / float(dist.lattice.linear_size) ** 2


# entropies


def shannon_entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability entries are skipped."""
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def subsystem_entropy(dist: SectorDistribution, sites: Sequence[int]) -> float:
    if len(sites) == 0:
        return 0.0
    return shannon_entropy(marginal(dist, sites))


def cmi(
    dist: SectorDistribution, A: Sequence[int], B: Sequence[int], C: Sequence[int]
) -> float:
    """Classical conditional mutual information ``S_AB + S_BC - S_B - S_ABC``.

    Raises
    ------
    ValueError
        If the regions overlap.
    """
    A, B, C = list(A), list(B), list(C)
    if len(set(A) | set(B) | set(C)) != len(A) + len(B) + len(C):
        raise ValueError("regions A, B, C must be disjoint")
    return (
        subsystem_entropy(dist, A + B)
        + subsystem_entropy(dist, B + C)
        - subsystem_entropy(dist, B)
        - subsystem_entropy(dist, A + B + C)
    )


def cmi_regions(n_sites: int, R_B: int, geometry: str) -> tuple[list, list, list]:
    """Regions on an open chain with ``B`` centred.

    ``covering``: ``A`` and ``C`` fill the rest of the chain.
    ``interior``: ``A`` and ``C`` are single sites flanking ``B``.
    """
    if geometry == "covering":
        if R_B > n_sites - 2:
            raise ValueError("B too large for the chain")
        a = (n_sites - R_B) // 2
        return list(range(a)), list(range(a, a + R_B)), list(range(a + R_B, n_sites))
    if geometry == "interior":
        if R_B > n_sites - 2:
            raise ValueError("B too large for the chain")
        a = (n_sites - R_B) // 2
        return [a - 1], list(range(a, a + R_B)), [a + R_B]
    raise ValueError(f"unknown geometry {geometry!r}")


# fits


@dataclass
class LengthFit:
    """Exponential fit ``y ~ exp(-x / xi)`` over an explicit window."""

    xi: float
    stderr: float
    window: tuple[float, float]
    n_points: int
    intercept: float
    residual: float
    algebraic_window: tuple[float, float] | None = None
    local_exponents: np.ndarray | None = field(default=None, repr=False)


def fit_exponential_length(
    x: Sequence[float],
    y: Sequence[float],
    window: tuple[float, float] | None = None,
    floor: float = 1e-300,
) -> LengthFit:
    """Least-squares fit of ``log y`` against ``x``.

    Points with ``y <= floor`` are discarded before the window is applied.

    Raises
    ------
    ValueError
        If fewer than three points remain or the fitted slope is not negative.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = y > floor
    if window is not None:
        keep &= (x >= window[0]) & (x <= window[1])
    if keep.sum() < 3:
        raise ValueError("fit window holds fewer than three points")
    xs, ly = x[keep], np.log(y[keep])
    res = stats.linregress(xs, ly)
    if res.slope >= 0:
        raise ValueError("data do not decay in the fit window")
    xi = -1.0 / res.slope
    resid = float(np.sqrt(np.mean((ly - (res.intercept + res.slope * xs)) ** 2)))
    return LengthFit(
        xi=float(xi),
        stderr=float(res.stderr / res.slope**2),
        window=(float(xs.min()), float(xs.max())),
        n_points=int(keep.sum()),
        intercept=float(res.intercept),
        residual=resid,
    )


def local_log_slopes(x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """``-d log y / d log x`` from neighbouring points."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return -np.diff(ly) / np.diff(lx)


def algebraic_window(x, y, tol: float = 0.15, min_points: int = 3):
    """Longest run of ``x`` over which the local power-law exponent is stable.

    Returns ``None`` when no run of ``min_points`` consecutive points has local
    exponents within ``tol`` (relative) of their mean.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = y > 0
    x, y = x[ok], y[ok]
    if len(x) < min_points:
        return None
    a = local_log_slopes(x, y)
    best = None
    for lo in range(len(a)):
        for hi in range(lo + min_points - 1, len(a) + 1):
            seg = a[lo:hi]
            m = seg.mean()
            if m > 0 and np.all(np.abs(seg - m) <= tol * m):
                if best is None or hi - lo > best[1] - best[0]:
                    best = (lo, hi)
    if best is None:
        return None
    return float(x[best[0]]), float(x[best[1]])


@dataclass
class CorrelatorSeries:
    """Correlator against separation from a reference site."""

    Q: int
    t: float
    reference: int
    separations: np.ndarray
    values: np.ndarray
    symmetric: bool

    def fit(self, window: tuple[float, float] | None = None, floor: float = 1e-14) -> LengthFit:
        return fit_exponential_length(self.separations, self.values, window, floor)


def correlator_series(
    dist: SectorDistribution,
    Q: int,
    separations: Sequence[int],
    reference: int | None = None,
    symmetric: bool = True,
    t: float = float("nan"),
) -> CorrelatorSeries:
    """Correlator between ``reference`` and ``reference + x`` on a chain.

    With ``reference=None`` the values are averaged over every reference site
    for which ``reference + x`` lies on the lattice, which removes the
    sublattice alternation of the Neel initial state.
    """
    n = dist.lattice.n_sites
    seps = np.asarray(list(separations), dtype=np.int64)
    vals = np.empty(len(seps))
    for k, x in enumerate(seps):
        if reference is not None:
            refs = [reference]
        else:
            refs = [i for i in range(n) if 0 <= i + x < n]
        if not refs or any(not 0 <= r + x < n for r in refs):
            raise ValueError(f"separation {x} leaves the lattice")
        vals[k] = np.mean([correlator(dist, r, r + x, Q, symmetric) for r in refs])
    return CorrelatorSeries(Q, t, -1 if reference is None else reference, seps, vals, symmetric)


def markov_length(
    dists: Mapping[float, SectorDistribution],
    R_B: Sequence[int],
    geometry: str = "interior",
    window: tuple[float, float] | None = None,
    floor: float = 1e-14,
) -> dict[float, LengthFit]:
    """Fit ``I(A:C|B) ~ exp(-R_B / xi_M)`` for each time.

    Each fit also carries the local power-law exponents and the algebraic
    window, if any, where they are stable.
    """
    out = {}
    for t, dist in dists.items():
        vals = np.array(
            [cmi(dist, *cmi_regions(dist.lattice.n_sites, r, geometry)) for r in R_B]
        )
        fit = fit_exponential_length(R_B, vals, window, floor)
        ok = vals > floor
        xs = np.asarray(R_B, float)[ok]
        fit.algebraic_window = algebraic_window(xs, vals[ok])
        fit.local_exponents = local_log_slopes(xs, vals[ok]) if ok.sum() > 1 else np.array([])
        out[t] = fit
    return out


def cmi_series(dist: SectorDistribution, R_B: Sequence[int], geometry: str) -> np.ndarray:
    return np.array([cmi(dist, *cmi_regions(dist.lattice.n_sites, r, geometry)) for r in R_B])
