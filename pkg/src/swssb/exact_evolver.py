"""Exact evolution of the swap master equation inside one charge sector.

The generator is ``G = gamma * sum_b (SWAP_b - 1)``: every bond exchanges the
contents of its two sites at rate ``gamma``. In a fixed-charge basis the
generator is a symmetric matrix with zero row sums, so a Lanczos
approximation of ``exp(tau * G) v`` applies directly.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .config_space import (
    DEFAULT_SECTOR_CAP,
    Lattice,
    SectorBasis,
    SectorDistribution,
    _binom_table,
    enumerate_sector,
)

logger = logging.getLogger(__name__)

KRYLOV_DIM = 30
KRYLOV_TOL = 1e-10


@numba.njit(cache=True)
def _partner_table(masks, bonds, table, n_sites):
    n_b = bonds.shape[0]
    dim = masks.shape[0]
    out = np.empty((n_b, dim), dtype=np.int32)
    for s in range(dim):
        m = masks[s]
        for b in range(n_b):
            i = bonds[b, 0]
            j = bonds[b, 1]
            bi = (m >> np.uint64(i)) & np.uint64(1)
            bj = (m >> np.uint64(j)) & np.uint64(1)
            if bi == bj:
                out[b, s] = s
                continue
            f = m ^ ((np.uint64(1) << np.uint64(i)) | (np.uint64(1) << np.uint64(j)))
            r = 0
            c = 0
            for pos in range(n_sites):
                if (f >> np.uint64(pos)) & np.uint64(1):
                    c += 1
                    r += table[pos, c]
            out[b, s] = r
    return out


@numba.njit(cache=True)
def _apply(partner, v, gamma, out):
    n_b, dim = partner.shape
    for s in range(dim):
        acc = 0.0
        vs = v[s]
        for b in range(n_b):
            acc += v[partner[b, s]] - vs
        out[s] = gamma * acc


@dataclass
class DiagonalGenerator:
    """Sparse swap generator restricted to one charge sector.

    ``partner[b, s]`` is the index reached from state ``s`` by swapping the
    two sites of bond ``b`` (``s`` itself when their occupations agree).
    """

    lattice: Lattice
    gamma: float
    basis: SectorBasis
    partner: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v, dtype=np.float64)
        _apply(self.partner, np.ascontiguousarray(v, dtype=np.float64), float(self.gamma), out)
        return out

    def diagonal(self) -> np.ndarray:
        idx = np.arange(self.dim)
        return -self.gamma * (self.partner != idx[None, :]).sum(axis=0).astype(np.float64)

    def to_sparse(self) -> sp.csr_matrix:
        n_b, dim = self.partner.shape
        rows = np.repeat(np.arange(dim)[None, :], n_b, axis=0).ravel()
        cols = self.partner.ravel().astype(np.int64)
        keep = rows != cols
        off = sp.csr_matrix(
            (np.full(keep.sum(), self.gamma), (rows[keep], cols[keep])), shape=(dim, dim)
        )
        return (off + sp.diags(self.diagonal())).tocsr()

    def spectral_bound(self) -> float:
        """Upper bound on the spectral radius (Gershgorin)."""
        return 2.0 * self.gamma * self.lattice.n_bonds


def build_generator(
    lattice: Lattice, gamma: float, charge: int, cap: int = DEFAULT_SECTOR_CAP
) -> DiagonalGenerator:
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    basis = enumerate_sector(lattice, charge, cap)
    partner = _partner_table(
        basis.masks, lattice.bonds, _binom_table(lattice.n_sites), lattice.n_sites
    )
    return DiagonalGenerator(lattice, float(gamma), basis, partner)


def _lanczos(matvec, v, m):
    n = v.shape[0]
    beta = np.linalg.norm(v)
    V = np.zeros((m + 1, n))
    V[0] = v / beta
    alphas, betas = [], []
    h_next = 0.0
    breakdown = False
    scale = 0.0
    for j in range(m):
        w = matvec(V[j])
        a = V[j] @ w
        w -= a * V[j]
        if j > 0:
            w -= betas[-1] * V[j - 1]
        # full reorthogonalisation keeps the small basis clean
        w -= V[: j + 1].T @ (V[: j + 1] @ w)
        b = np.linalg.norm(w)
        alphas.append(a)
        scale = max(scale, abs(a), b)
        if b <= 1e-13 * max(scale, 1e-300):
            breakdown = True
            break
        if j < m - 1:
            betas.append(b)
            V[j + 1] = w / b
        h_next = b
    k = len(alphas)
    T = np.diag(alphas) + np.diag(betas[: k - 1], 1) + np.diag(betas[: k - 1], -1)
    evals, U = np.linalg.eigh(T)
    return beta, V[:k], evals, U, h_next, breakdown


def expm_multiply_krylov(
    matvec,
    v: np.ndarray,
    t: float,
    krylov_dim: int = KRYLOV_DIM,
    tol: float = KRYLOV_TOL,
    max_steps: int = 100000,
) -> np.ndarray:
    """Compute ``exp(t A) v`` for symmetric ``A`` by adaptive Lanczos sub-stepping.

    Each sub-step builds one Krylov basis and then takes the longest step
    ``tau`` whose a-posteriori error estimate
    ``beta * h_{m+1,m} * |e_m^T exp(tau T) e_1|`` stays below ``tol * tau / t``.

    Raises
    ------
    RuntimeError
        If the step size underflows before reaching ``t``.
    """
    w = np.array(v, dtype=np.float64)
    if t == 0 or not np.any(w):
        return w
    done = 0.0
    steps = 0
    while done < t:
        remaining = t - done
        beta, V, evals, U, h, breakdown = _lanczos(matvec, w, min(krylov_dim, w.shape[0]))

        def coeffs(tau):
            return U @ (np.exp(tau * evals) * U[0])

        def err(tau):
            return beta * h * abs(coeffs(tau)[-1])

        if breakdown or w.shape[0] <= krylov_dim or err(remaining) <= tol * remaining / t:
            tau = remaining
        else:
            lo, hi = 0.0, remaining
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if err(mid) <= tol * mid / t:
                    lo = mid
                else:
                    hi = mid
            tau = lo
            if tau <= 1e-14 * t:
                raise RuntimeError("Krylov step size underflow")
        w = beta * (V.T @ coeffs(tau))
        done += tau
        steps += 1
        if steps > max_steps:
            raise RuntimeError("Krylov sub-stepping did not converge")
    return w


def _clean(p: np.ndarray) -> np.ndarray:
    neg = p.min(initial=0.0)
    if neg < -1e-9:
        logger.warning("clipping negative probability %.3e", neg)
    p = np.clip(p, 0.0, None)
    defect = p.sum() - 1.0
    if abs(defect) > 1e-12:
        logger.info("renormalising probability vector, defect %.3e", defect)
    return p / p.sum()


def evolve(
    dist: SectorDistribution,
    gamma: float,
    t: float,
    generator: DiagonalGenerator | None = None,
    krylov_dim: int = KRYLOV_DIM,
    tol: float = KRYLOV_TOL,
) -> SectorDistribution:
    """Evolve a sector distribution for time ``t`` under swap rate ``gamma``."""
    if t < 0:
        raise ValueError("time must be non-negative")
    gen = generator or build_generator(dist.lattice, gamma, dist.charge, cap=max(dist.dim, 1))
    p = expm_multiply_krylov(gen.matvec, dist.probs, t, krylov_dim, tol)
    return SectorDistribution(dist.lattice, dist.charge, _ro(_clean(p)), dist.basis)


def evolve_times(
    dist: SectorDistribution,
    gamma: float,
    times: Sequence[float],
    krylov_dim: int = KRYLOV_DIM,
    tol: float = KRYLOV_TOL,
) -> list[SectorDistribution]:
    """Evolve to each of an increasing list of times, reusing the previous result."""
    times = [float(x) for x in times]
    if any(b < a for a, b in zip(times, times[1:])) or (times and times[0] < 0):
        raise ValueError("times must be non-negative and non-decreasing")
    gen = build_generator(dist.lattice, gamma, dist.charge, cap=max(dist.dim, 1))
    out, cur, t0 = [], dist, 0.0
    for t in times:
        cur = evolve(cur, gamma, t - t0, gen, krylov_dim, tol)
        out.append(cur)
        t0 = t
    return out


def _ro(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def graph_laplacian(lattice: Lattice) -> np.ndarray:
    n = lattice.n_sites
    lap = np.zeros((n, n))
    for i, j in lattice.bonds:
        lap[i, i] += 1
        lap[j, j] += 1
        lap[i, j] -= 1
        lap[j, i] -= 1
    return lap


def density_profile_oracle(
    lattice: Lattice, n0: np.ndarray, gamma: float, times: Iterable[float]
) -> np.ndarray:
    """Mean occupations from the closed linear equation ``dn/dt = -gamma * Lap n``.

    The one-point function of the swap process obeys this discrete heat
    equation exactly, for any initial distribution with mean ``n0``.
    """
    lam, U = np.linalg.eigh(graph_laplacian(lattice))
    c = U.T @ np.asarray(n0, dtype=np.float64)
    return np.array([U @ (np.exp(-gamma * t * lam) * c) for t in times])


def write_density_csv(path, times: Sequence[float], profiles: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "site", "density"])
        for t, prof in zip(times, profiles):
            for i, v in enumerate(prof):
                w.writerow([repr(float(t)), i, repr(float(v))])


def _tilt_matrices(gen: DiagonalGenerator, axis: int):
    """First and second derivatives of the current-tilted generator along ``axis``."""
    n_b, dim = gen.partner.shape
    lat = gen.lattice
    rows, cols, d = [], [], []
    idx = np.arange(dim)
    for b in range(n_b):
        if lat.bond_axis[b] != axis:
            continue
        i = lat.bonds[b, 0]
        moved = gen.partner[b] != idx
        src = idx[moved]
        occ_i = ((gen.basis.masks[src] >> np.uint64(i)) & np.uint64(1)).astype(np.int64)
        rows.append(gen.partner[b][moved])
        cols.append(src)
        d.append(np.where(occ_i == 1, 1.0, -1.0))
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    d = np.concatenate(d) if d else np.zeros(0)
    g1 = sp.csr_matrix((gen.gamma * d, (rows, cols)), shape=(dim, dim))
    g2 = sp.csr_matrix((gen.gamma * d * d, (rows, cols)), shape=(dim, dim))
    return g1, g2


@dataclass
class CurrentMoments:
    """Joint moments ``E[J^k 1{final = s}]`` of the net hop count ``J`` along one axis."""

    prob: np.ndarray
    first: np.ndarray
    second: np.ndarray


def current_moments(
    dist: SectorDistribution, gamma: float, t: float, axis: int
) -> CurrentMoments:
    """Exact current moments from the block-triangular tilted generator.

    With ``G(l) = G + l G1 + l^2 G2 / 2`` the Taylor coefficients of
    ``exp(t G(l))`` in ``l`` are the blocks of ``exp(t M)`` for
    ``M = [[G, G1, G2/2], [0, G, G1], [0, 0, G]]``.
    """
    from scipy.sparse.linalg import expm_multiply

    gen = build_generator(dist.lattice, gamma, dist.charge, cap=max(dist.dim, 1))
    g0 = gen.to_sparse()
    g1, g2 = _tilt_matrices(gen, axis)
    z = sp.csr_matrix(g0.shape)
    M = sp.bmat([[g0, g1, 0.5 * g2], [z, g0, g1], [z, z, g0]]).tocsr()
    n = gen.dim
    v = np.concatenate([np.zeros(2 * n), dist.probs])
    w = expm_multiply(M * t, v)
    return CurrentMoments(w[2 * n :], w[n : 2 * n], 2.0 * w[:n])
