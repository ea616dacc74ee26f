"""Decoders that infer the left-half charge from a window of the right half.

Geometry: a chain of ``2L`` sites labelled ``1 .. 2L`` starts with particles
on the odd sites. Region ``A`` is ``[1, L]``; the observed window ``B`` is
``[L + 1, L + R_B]``. A decoder sees the occupations of ``B`` and guesses
the charge ``N_A`` left of the cut. The swap dynamics never lets particles
pass each other, so the ``k``-th particle in ``B`` descends from a block of
consecutive initial particles.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numba
import numpy as np
from scipy import stats

from .config_space import SectorDistribution, chain, neel_state
from .exact_evolver import evolve

DECODE_COLUMNS = ["decoder", "t", "R_B", "trials", "successes", "p", "ci_lo", "ci_hi"]


@dataclass(frozen=True)
class DecodingInstance:
    """Occupations of ``B`` together with the true charge of ``A``."""

    L: int
    t: float
    R_B: int
    occupations: np.ndarray = field(repr=False)
    true_NA: int
    gamma: float = 0.1

    def __post_init__(self):
        if self.R_B < 1 or self.L + self.R_B > 2 * self.L:
            raise ValueError("window B must fit inside the right half")
        if len(self.occupations) != self.R_B:
            raise ValueError("occupation vector length differs from R_B")

    @property
    def positions(self) -> np.ndarray:
        """1-indexed sites of the particles observed in ``B``."""
        return self.L + 1 + np.flatnonzero(np.asarray(self.occupations))

    @property
    def N_B(self) -> int:
        return int(np.sum(self.occupations))


def charge_left_of(x1: int) -> int:
    """Number of odd positive integers strictly below ``x1``."""
    return int(x1) // 2 if x1 > 1 else 0


def _com_origin(pos: np.ndarray) -> int:
    nb = len(pos)
    ybar = pos.mean()
    parity = nb % 2
    # nearest integer with the parity of N_B; exact ties go to the lower one
    lo = math.floor(ybar)
    if lo % 2 != parity:
        lo -= 1
    x_star = lo if ybar - lo <= lo + 2 - ybar else lo + 2
    return x_star - (nb - 1)


def decode_com(inst: DecodingInstance) -> int | None:
    """Centre-of-mass decoder; ``None`` (a failure) when ``B`` is empty.

    The block of ``N_B`` initial particles at ``x1, x1 + 2, ...`` has centre
    ``x1 + N_B - 1``; rounding the observed centre to the admissible parity
    gives ``x1``.
    """
    pos = inst.positions
    if len(pos) == 0:
        return None
    return charge_left_of(_com_origin(pos))


def mwpm_candidates(inst: DecodingInstance) -> np.ndarray:
    """Odd origins in ``[1 - 2 * drift, 2L]`` with ``drift = ceil(6 sqrt(gamma t N_B))``."""
    drift = math.ceil(6.0 * math.sqrt(inst.gamma * inst.t * max(inst.N_B, 1)))
    lo = 1 - 2 * drift
    return np.arange(lo, 2 * inst.L + 1, 2)


def mwpm_costs(pos: np.ndarray, cand: np.ndarray) -> np.ndarray:
    """``sum_i |y_i - (x1 + 2 (i - 1))|`` for every candidate ``x1``."""
    z = np.sort(pos - 2 * np.arange(len(pos)))
    csum = np.concatenate([[0], np.cumsum(z)])
    k = np.searchsorted(z, cand, side="right")
    n = len(z)
    return (cand * k - csum[k]) + (csum[n] - csum[k] - cand * (n - k))


def decode_mwpm(inst: DecodingInstance, rng: np.random.Generator) -> int | None:
    """Minimum-cost assignment of the observed particles to an initial block.

    Cost ties are broken uniformly at random with ``rng``. The cost is convex
    in the origin, so only candidates within one step of the shifted
    positions can be minimisers; the rest of the window is skipped.
    """
    pos = inst.positions
    if len(pos) == 0:
        return None
    full = mwpm_candidates(inst)
    z = pos - 2 * np.arange(len(pos))
    lo = max(full[0], int(z.min()) - 2)
    hi = min(full[-1], int(z.max()) + 2)
    lo += (1 - lo) % 2
    cand = np.arange(lo, hi + 1, 2)
    cost = mwpm_costs(pos, cand)
    best = np.flatnonzero(cost == cost.min())
    pick = best[0] if len(best) == 1 else rng.choice(best)
    return charge_left_of(int(cand[pick]))


def _pick_offset(target, par):
    lo = np.floor(target).astype(np.int64)
    lo = lo - ((lo - par) % 2)
    hi = lo + 2
    dlo, dhi = target - lo, hi - target
    tie_lo = np.abs(lo) <= np.abs(hi)
    return np.where(dlo < dhi, lo, np.where(dhi < dlo, hi, np.where(tie_lo, lo, hi)))


def height_offset(occupations: Sequence[int], L: int) -> int:
    """Offset ``h(L)`` that brings the window-averaged height closest to 1/2.

    ``h(L) = 2 N_A - L`` shares the parity of ``L``. Ties go to the smaller
    ``|h(L)|``.
    """
    occ = np.asarray(occupations, dtype=np.int64)
    h_rel = np.cumsum(2 * occ - 1)
    return int(_pick_offset(np.array([0.5 - h_rel.mean()]), L % 2)[0])


def decode_height(inst: DecodingInstance) -> int:
    """Height-function decoder; works for an empty window as well."""
    return (height_offset(inst.occupations, inst.L) + inst.L) // 2


# optimal decoder


@dataclass
class OptimalDecoder:
    """Bayes-optimal decoder built from the exact distribution on ``2L`` sites.

    ``joint[n, b]`` is the probability that ``A`` holds ``n`` particles and
    ``B`` shows the bit pattern ``b`` (site ``L + 1 + m`` on bit ``m``).
    """

    L: int
    R_B: int
    joint: np.ndarray = field(repr=False)

    @classmethod
    def from_distribution(cls, dist: SectorDistribution, L: int, R_B: int) -> "OptimalDecoder":
        if dist.lattice.n_sites != 2 * L:
            raise ValueError("distribution must live on 2L sites")
        masks = dist.basis.masks
        a_mask = np.uint64((1 << L) - 1)
        na = np.array([int(m).bit_count() for m in (masks & a_mask)], dtype=np.int64)
        b = ((masks >> np.uint64(L)) & np.uint64((1 << R_B) - 1)).astype(np.int64)
        joint = np.zeros((L + 1, 1 << R_B))
        np.add.at(joint, (na, b), dist.probs)
        return cls(L, R_B, joint)

    @staticmethod
    def pattern(occupations: Sequence[int]) -> int:
        return int(sum(int(v) << m for m, v in enumerate(occupations)))

    def posterior(self, occupations: Sequence[int]) -> np.ndarray:
        col = self.joint[:, self.pattern(occupations)]
        tot = col.sum()
        if tot <= 0:
            raise ValueError("observed pattern has zero probability")
        return col / tot

    def decode(self, inst: DecodingInstance) -> tuple[int, float]:
        """Most likely ``N_A`` and its posterior probability."""
        post = self.posterior(inst.occupations)
        k = int(np.argmax(post))
        return k, float(post[k])

    def bayes_success(self) -> float:
        """Exact success probability ``sum_b max_n P(n, b)``."""
        return float(self.joint.max(axis=0).sum())

    def success_of(self, decoder: Callable[[np.ndarray], float | np.ndarray]) -> float:
        """Exact success probability of a heuristic on the same distribution.

        ``decoder`` maps an occupation pattern to a probability vector over
        ``N_A`` (a one-hot vector for deterministic rules).
        """
        total = 0.0
        for b in range(1 << self.R_B):
            col = self.joint[:, b]
            if col.sum() == 0:
                continue
            occ = np.array([(b >> m) & 1 for m in range(self.R_B)], dtype=np.uint8)
            total += float(col @ decoder(occ))
        return total


def exact_chain_distribution(L: int, gamma: float, t: float) -> SectorDistribution:
    """Exact distribution on ``2L`` sites evolved from the Neel state."""
    lat = chain(2 * L)
    cap = math.comb(2 * L, L)
    d0 = SectorDistribution.point_mass(lat, neel_state(lat), cap=cap)
    return evolve(d0, gamma, t)


# large-L sampling


def lightcone_margin(gamma: float, t: float, n_paths: float, eps: float = 1e-12) -> int:
    """Distance ``M`` beyond which the dynamics cannot influence a region.

    A site's occupation at time ``t`` is its initial occupation at the end of
    a backward path that hops whenever an adjacent bond fires (rate
    ``2 gamma``). Leaving a window needs at least ``M`` hops, so ``n_paths``
    paths stay inside with probability ``1 - n_paths * P(Poisson(2 gamma t) >= M)``.
    """
    lam = 2.0 * gamma * t
    M = max(1, int(lam))
    while n_paths * stats.poisson.sf(M - 1, lam) > eps:
        M += 1
    return M


@numba.njit(cache=True)
def _window_kernel(occ0, cut, gamma, t, n_trials, b_lo, r_max, seed):
    np.random.seed(seed)
    n = occ0.shape[0]
    n_b = n - 1
    obs = np.empty((n_trials, r_max), dtype=np.uint8)
    flux = np.empty(n_trials, dtype=np.int64)
    for k in range(n_trials):
        occ = occ0.copy()
        f = 0
        n_ev = np.random.poisson(gamma * n_b * t)
        for _ in range(n_ev):
            i = np.random.randint(0, n_b)
            a = occ[i]
            c = occ[i + 1]
            if a != c:
                occ[i] = c
                occ[i + 1] = a
                if i == cut:
                    f += 1 if a == 1 else -1
        obs[k] = occ[b_lo : b_lo + r_max]
        flux[k] = f
    return obs, flux


@dataclass
class WindowSamples:
    L: int
    t: float
    gamma: float
    observations: np.ndarray = field(repr=False)
    true_NA: np.ndarray = field(repr=False)
    margin: int = 0

    def instance(self, k: int, R_B: int) -> DecodingInstance:
        return DecodingInstance(
            self.L, self.t, R_B, self.observations[k, :R_B], int(self.true_NA[k]), self.gamma
        )


def sample_window(
    L: int, gamma: float, t: float, r_max: int, n_trials: int, seed: int, eps: float = 1e-12
) -> WindowSamples:
    """Sample ``B`` occupations and the true ``N_A`` on a long chain.

    Only sites within the light-cone margin of the cut and of ``B`` are
    simulated; the truncation changes the joint law of the returned data by
    at most ``eps`` in total variation.
    """
    n_paths = r_max + 2 + 4.0 * gamma * t + 10.0
    M = lightcone_margin(gamma, t, n_paths, eps)
    lo = max(1, L - M + 1)
    hi = min(2 * L, L + r_max + M)
    sites = np.arange(lo, hi + 1)
    occ0 = (sites % 2 == 1).astype(np.uint8)
    cut = L - lo  # local index of site L; bond (L, L+1)
    b_lo = L + 1 - lo
    obs, flux = _window_kernel(occ0, cut, float(gamma), float(t), int(n_trials), b_lo, int(r_max), int(seed))
    na0 = (L + 1) // 2
    return WindowSamples(L, float(t), float(gamma), obs, na0 - flux, M)


# vectorised decoders for benchmarks


def com_batch(obs: np.ndarray, L: int) -> np.ndarray:
    """Centre-of-mass guesses for every row; -1 marks an empty window."""
    R = obs.shape[1]
    nb = obs.sum(axis=1).astype(np.int64)
    pos = L + 1 + np.arange(R)
    s = obs.astype(np.int64) @ pos
    out = np.full(obs.shape[0], -1, dtype=np.int64)
    ok = nb > 0
    ybar = s[ok] / nb[ok]
    par = nb[ok] % 2
    lo = np.floor(ybar).astype(np.int64)
    lo -= (lo % 2) != par
    x_star = np.where(ybar - lo <= lo + 2 - ybar, lo, lo + 2)
    x1 = x_star - (nb[ok] - 1)
    out[ok] = np.where(x1 > 1, x1 // 2, 0)
    return out


def height_batch(obs: np.ndarray, L: int) -> np.ndarray:
    h_rel = np.cumsum(2 * obs.astype(np.int64) - 1, axis=1)
    return (_pick_offset(0.5 - h_rel.mean(axis=1), L % 2) + L) // 2


def wilson_interval(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(level, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class BenchmarkRow:
    decoder: str
    t: float
    R_B: int
    trials: int
    successes: int
    p: float
    ci_lo: float
    ci_hi: float

    def as_list(self) -> list:
        return [self.decoder, self.t, self.R_B, self.trials, self.successes, self.p, self.ci_lo, self.ci_hi]


def benchmark(
    L: int,
    gamma: float,
    times: Iterable[float],
    R_B: Sequence[int],
    trials: int,
    seed: int,
    decoders: Sequence[str] = ("com", "mwpm", "height"),
) -> list[BenchmarkRow]:
    """Success probabilities of the heuristic decoders on a long chain.

    All decoders see the same sampled windows. Failures on an empty window
    count as wrong guesses.
    """
    unknown = set(decoders) - {"com", "mwpm", "height"}
    if unknown:
        raise ValueError(f"unknown decoders {sorted(unknown)}")
    R_B = [int(r) for r in R_B]
    if min(R_B) < 1 or max(R_B) > L:
        raise ValueError("R_B must lie in [1, L]")
    rows = []
    ss = np.random.SeedSequence(int(seed))
    times = list(times)
    for t, child in zip(times, ss.spawn(len(times))):
        sim_seed, tie_seed = (int(c.generate_state(1)[0]) for c in child.spawn(2))
        ws = sample_window(L, gamma, t, max(R_B), trials, sim_seed)
        rng = np.random.default_rng(tie_seed)
        for r in R_B:
            obs = ws.observations[:, :r]
            for name in decoders:
                if name == "com":
                    guess = com_batch(obs, L)
                elif name == "height":
                    guess = height_batch(obs, L)
                else:
                    guess = np.array(
                        [
                            -1 if (g := decode_mwpm(ws.instance(k, r), rng)) is None else g
                            for k in range(trials)
                        ]
                    )
                succ = int((guess == ws.true_NA).sum())
                lo, hi = wilson_interval(succ, trials)
                rows.append(BenchmarkRow(name, float(t), r, trials, succ, succ / trials, lo, hi))
    return rows


def write_benchmark_csv(path, rows: Sequence[BenchmarkRow], header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(DECODE_COLUMNS)
        for r in rows:
            w.writerow(r.as_list())
