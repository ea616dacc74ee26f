"""Lattice Langevin dynamics of a phase coupled to a conserved density.

With free energy ``F = (K/2) sum_j n_j^2 - J sum_<ij> cos(phi_i - phi_j)``:

    dphi_j/dt = K n_j - beta gamma_phi dF/dphi_j + eta_j
    dn_j/dt   = -dF/dphi_j + beta gamma_n (lap K n)_j + xi_j

``eta`` is white with ``<eta eta> = 2 gamma_phi``. ``xi`` is the lattice
divergence of independent bond noises of variance ``2 gamma_n / dt``, so its
covariance is ``2 gamma_n (-lap)`` and ``sum_j xi_j = 0`` at every step.
Every density update is a bond flux, which conserves ``sum_j n_j`` exactly
up to rounding. The stationary measure is ``exp(-beta F)`` restricted to the
initial total charge.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba as nb
import numpy as np
from scipy import signal

from .config_space import Lattice, make_lattice

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelFParams:
    J: float
    K: float
    beta: float
    gamma_phi: float
    gamma_n: float
    dt: float

    def __post_init__(self):
        if min(self.J, self.K, self.gamma_phi, self.gamma_n) < 0 or self.beta <= 0 or self.dt <= 0:
            raise ValueError("need J, K, gamma >= 0 and beta, dt > 0")


def stability_bound(params: ModelFParams, lattice: Lattice) -> float:
    """Largest allowed step ``0.1 / max(4 d beta gamma_phi J, 4 d beta gamma_n K)``.

    ``4 d`` bounds the spectrum of the lattice Laplacian, so the two entries
    are the fastest phase and density relaxation rates.
    """
    lam = 4.0 * lattice.dim
    rate = max(params.beta * params.gamma_phi * params.J * lam, params.beta * params.gamma_n * params.K * lam)
    rate = max(rate, math.sqrt(params.J * params.K * lam))
    return math.inf if rate == 0 else 0.1 / rate


@dataclass
class ModelFState:
    """Ensemble of ``M`` independent copies, arrays of shape ``(M, n_sites)``."""

    lattice: Lattice
    params: ModelFParams
    phi: np.ndarray
    n: np.ndarray
    time: float = 0.0
    seed: int = 0
    wrapped: bool = False
    steps: int = 0
    rng: np.random.Generator = field(default=None, repr=False)

    def __post_init__(self):
        if self.rng is None:
            self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    @property
    def n_copies(self) -> int:
        return self.phi.shape[0]

    def total_charge(self) -> np.ndarray:
        return self.n.sum(axis=1)

    def free_energy(self) -> np.ndarray:
        b = self.lattice.bonds
        dphi = self.phi[:, b[:, 0]] - self.phi[:, b[:, 1]]
        return 0.5 * self.params.K * (self.n**2).sum(axis=1) - self.params.J * np.cos(dphi).sum(axis=1)


def initial_state(
    lattice: Lattice,
    params: ModelFParams,
    n_copies: int = 1,
    seed: int = 0,
    phi0: np.ndarray | None = None,
    n0: np.ndarray | None = None,
    wrapped: bool = False,
) -> ModelFState:
    if not all(lattice.periodic):
        raise ValueError("Model F runs on periodic lattices")
    if params.dt > stability_bound(params, lattice):
        raise ValueError(f"dt={params.dt} exceeds the stability bound {stability_bound(params, lattice):.3g}")
    shape = (n_copies, lattice.n_sites)
    phi = np.zeros(shape) if phi0 is None else np.broadcast_to(phi0, shape).astype(np.float64)
    n = np.zeros(shape) if n0 is None else np.broadcast_to(n0, shape).astype(np.float64)
    return ModelFState(lattice, params, phi.copy(), n.copy(), 0.0, seed, wrapped)


@nb.njit(cache=True)
def _em_steps(phi, n, bi, bj, J, K, beta, gphi, gn, dt, bond_noise, site_noise, wrapped):
    S, M, nbond = bond_noise.shape
    N = phi.shape[1]
    sphi = math.sqrt(2.0 * gphi * dt)
    sbond = math.sqrt(2.0 * gn * dt)
    fphi = np.empty(N)
    flux = np.empty(nbond)
    for st in range(S):
        for m in range(M):
            p = phi[m]
            d = n[m]
            for j in range(N):
                fphi[j] = 0.0
            for b in range(nbond):
                i = bi[b]
                j = bj[b]
                s = J * math.sin(p[i] - p[j]) if J != 0.0 else 0.0
                fphi[i] += s
                fphi[j] -= s
                # net transfer i -> j: Josephson term, diffusion, noise
                flux[b] = dt * (s + beta * gn * K * (d[i] - d[j])) + sbond * bond_noise[st, m, b]
            for j in range(N):
                p[j] += dt * (K * d[j] - beta * gphi * fphi[j])
                if gphi > 0.0:
                    p[j] += sphi * site_noise[st, m, j]
            for b in range(nbond):
                d[bi[b]] -= flux[b]
                d[bj[b]] += flux[b]
            if wrapped:
                for j in range(N):
                    p[j] = (p[j] + math.pi) % (2.0 * math.pi) - math.pi


_NOISE_BLOCK = 1 << 22


def step(state: ModelFState, n_steps: int = 1) -> ModelFState:
    """Advance every copy by ``n_steps`` Euler-Maruyama steps.

    Returns a new state; the input state and its generator are not modified.
    Noise is drawn step by step in a fixed order, so splitting a run into
    chunks does not change the result.

    Raises
    ------
    FloatingPointError
        If any field becomes non-finite.
    """
    pr = state.params
    phi, n = state.phi.copy(), state.n.copy()
    b = state.lattice.bonds
    bi, bj = b[:, 0].astype(np.int64), b[:, 1].astype(np.int64)
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state.rng.bit_generator.state
    M, N, nb_ = phi.shape[0], phi.shape[1], len(bi)
    per_step = M * (nb_ * (pr.gamma_n > 0) + N * (pr.gamma_phi > 0))
    block = max(1, _NOISE_BLOCK // max(per_step, 1))
    done = 0
    while done < n_steps:
        S = min(block, n_steps - done)
        if pr.gamma_n > 0 and pr.gamma_phi > 0:
            noise = rng.standard_normal((S, M, nb_ + N))
            bond_noise, site_noise = noise[:, :, :nb_], noise[:, :, nb_:]
        elif pr.gamma_n > 0:
            bond_noise, site_noise = rng.standard_normal((S, M, nb_)), np.zeros((1, 1, 1))
        elif pr.gamma_phi > 0:
            bond_noise, site_noise = np.zeros((S, M, nb_)), rng.standard_normal((S, M, N))
        else:
            bond_noise, site_noise = np.zeros((S, M, nb_)), np.zeros((1, 1, 1))
        _em_steps(
            phi, n, bi, bj, pr.J, pr.K, pr.beta, pr.gamma_phi, pr.gamma_n, pr.dt,
            np.ascontiguousarray(bond_noise), np.ascontiguousarray(site_noise), state.wrapped,
        )
        done += S
    if not (np.isfinite(phi).all() and np.isfinite(n).all()):
        bad = np.argwhere(~(np.isfinite(phi) & np.isfinite(n)))[0]
        raise FloatingPointError(
            f"non-finite field in copy {bad[0]} site {bad[1]} after t={state.time + n_steps * pr.dt:g}"
            f" (dt={pr.dt}, bound={stability_bound(pr, state.lattice):.3g})"
        )
    return replace(state, phi=phi, n=n, time=state.time + n_steps * pr.dt, steps=state.steps + n_steps, rng=rng)


def run(state: ModelFState, t_total: float, record_every: int | None = None, observables=None):
    """Evolve for ``t_total`` and optionally record observables.

    ``observables`` maps names to callables of the state returning arrays.
    Returns the final state and a dict of ``times`` and stacked records.
    """
    n_total = int(round(t_total / state.params.dt))
    chunk = n_total if not record_every else record_every
    rec = {"times": []}
    observables = observables or {}
    for k in observables:
        rec[k] = []
    done = 0
    while done < n_total:
        m = min(chunk, n_total - done)
        state = step(state, m)
        done += m
        if record_every:
            rec["times"].append(state.time)
            for k, f in observables.items():
                rec[k].append(f(state))
    return state, {k: np.asarray(v) for k, v in rec.items()}


def bond_cosine(state: ModelFState) -> np.ndarray:
    b = state.lattice.bonds
    return np.cos(state.phi[:, b[:, 0]] - state.phi[:, b[:, 1]]).mean(axis=1)


def density_second_moment(state: ModelFState) -> np.ndarray:
    return (state.n**2).mean(axis=1)


# reference values


def laplacian_eigenvalues(lattice: Lattice) -> np.ndarray:
    """Spectrum of the graph Laplacian of a periodic hypercubic lattice."""
    lam = 0.0
    for ax, L in enumerate(lattice.extents):
        k = 2 * np.pi * np.arange(L) / L
        shape = [1] * lattice.dim
        shape[ax] = L
        lam = lam + (2 - 2 * np.cos(k)).reshape(shape)
    return np.asarray(lam).ravel()


def density_variance_reference(params: ModelFParams, lattice: Lattice, discrete: bool = True) -> float:
    """Stationary ``<n_j^2>`` at ``J = 0`` with zero total charge.

    ``discrete=False`` gives ``(1 - 1/N) / (beta K)``. ``discrete=True`` adds
    the Euler-Maruyama factor ``1 / (1 - dt beta gamma_n K lambda / 2)`` per
    Laplacian mode.
    """
    lam = laplacian_eigenvalues(lattice)
    lam = lam[lam > 1e-12]
    base = 1.0 / (params.beta * params.K)
    if not discrete:
        return base * len(lam) / lattice.n_sites
    a = params.dt * params.beta * params.gamma_n * params.K * lam
    if np.any(a >= 2):
        raise ValueError("Euler-Maruyama step unstable for this lattice")
    return float(base * np.sum(1.0 / (1.0 - a / 2.0)) / lattice.n_sites)


def ring_quadrature(J: float, beta: float, L: int = 3, n_grid: int = 128) -> dict[str, float]:
    """Equilibrium ``<cos(phi_0 - phi_1)>`` on a ring of ``L <= 4`` sites.

    Integrates ``exp(beta J sum cos(phi_i - phi_{i+1}))`` over the relative
    phases with the periodic trapezoid rule, which converges exponentially.
    """
    if not 2 <= L <= 4:
        raise ValueError("quadrature ring limited to 2..4 sites")
    g = 2 * np.pi * np.arange(n_grid) / n_grid
    grids = np.meshgrid(*([g] * (L - 1)), indexing="ij")
    phases = [np.zeros_like(grids[0])] + list(grids)
    energy = sum(np.cos(phases[i] - phases[(i + 1) % L]) for i in range(L))
    w = np.exp(beta * J * (energy - L))
    c01 = np.cos(phases[0] - phases[1])
    return {"cos_nn": float((w * c01).sum() / w.sum())}


def goldstone_frequency(J: float, K: float, k: np.ndarray) -> np.ndarray:
    """Undamped lattice dispersion ``2 sqrt(J K) |sin(k/2)|``."""
    return 2.0 * np.sqrt(J * K) * np.abs(np.sin(np.asarray(k) / 2.0))


@dataclass
class DispersionResult:
    k: np.ndarray
    omega_measured: np.ndarray
    omega_theory: np.ndarray
    resolution: float


def measure_dispersion(
    L: int,
    params: ModelFParams,
    modes: np.ndarray,
    t_burn: float,
    t_record: float,
    sample_every: int,
    n_copies: int = 4,
    seed: int = 0,
) -> DispersionResult:
    """Peak frequency of the phase power spectrum for the given ring modes.

    The phase is Fourier transformed in space every ``sample_every`` steps;
    the power spectrum of each mode is averaged over copies with Welch's
    method and its peak located by parabolic interpolation.
    """
    lat = make_lattice((L,), True)
    st = initial_state(lat, params, n_copies, seed)
    st, _ = run(st, t_burn)
    n_rec = int(round(t_record / (params.dt * sample_every)))
    series = np.empty((n_rec, n_copies, len(modes)), dtype=np.complex128)
    x = np.arange(L)
    basis = np.exp(-2j * np.pi * np.outer(x, modes) / L)
    for r in range(n_rec):
        st = step(st, sample_every)
        series[r] = st.phi @ basis
    fs = 1.0 / (params.dt * sample_every)
    nper = min(n_rec, 2 ** int(np.log2(n_rec // 4)))
    omegas = np.empty(len(modes))
    res = 2 * np.pi * fs / nper
    for q in range(len(modes)):
        f, P = signal.welch(series[:, :, q].real, fs=fs, nperseg=nper, axis=0)
        P = P.mean(axis=1)
        i = int(np.argmax(P[1:])) + 1
        shift = 0.0
        if 0 < i < len(P) - 1:
            den = P[i - 1] - 2 * P[i] + P[i + 1]
            shift = 0.5 * (P[i - 1] - P[i + 1]) / den if den != 0 else 0.0
        omegas[q] = 2 * np.pi * (f[i] + shift * (f[1] - f[0]))
    k = 2 * np.pi * np.asarray(modes) / L
    return DispersionResult(k, omegas, goldstone_frequency(params.J, params.K, k), res)
