"""Continuous-time Monte Carlo of the swap process and winding estimators.

Two samplers are provided. :func:`sample_trajectory` keeps one exponential
clock per bond in a binary heap and records every event, which is what the
trajectory logs and replay use. The batch kernels exploit that all bonds
share the rate ``gamma``: the superposition of the clocks is a Poisson
process of rate ``gamma * n_bonds`` whose events pick a bond uniformly, so
only the event count and the bond sequence need to be drawn.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .config_space import Lattice, config_to_mask, mask_to_config

TRAJ_MAGIC = b"SWSSBTRJ"
TRAJ_VERSION = 1
_EVENT_DTYPE = np.dtype([("t", "<f8"), ("bond", "<i4"), ("dir", "<i1")])

DEFAULT_ACCEPTANCE_FLOOR = 1e-4


class AcceptanceFloorError(RuntimeError):
    """Rejection sampling accepted too small a fraction of trajectories."""


class VarianceBoundError(RuntimeError):
    """An estimator's standard error exceeds the requested bound."""


@dataclass
class TrajectoryRecord:
    """Event log of one trajectory.

    ``directions[k]`` is +1 when the particle moved from ``bonds[b, 0]`` to
    ``bonds[b, 1]``, -1 for the reverse hop and 0 when the swap exchanged two
    equal occupations.
    """

    lattice: Lattice
    initial: np.ndarray
    times: np.ndarray
    bonds: np.ndarray
    directions: np.ndarray
    final: np.ndarray
    duration: float = 0.0

    @property
    def n_events(self) -> int:
        return int(self.times.shape[0])

    def hop_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Forward and backward hop counts ``(N_plus, N_minus)`` per axis."""
        ax = self.lattice.bond_axis[self.bonds]
        d = self.lattice.dim
        plus = np.bincount(ax[self.directions > 0], minlength=d)
        minus = np.bincount(ax[self.directions < 0], minlength=d)
        return plus, minus

    def windings(self) -> np.ndarray:
        plus, minus = self.hop_counts()
        return (plus - minus) / np.asarray(self.lattice.extents, dtype=np.float64)

    def replay(self) -> np.ndarray:
        """Re-apply the event log to the initial configuration."""
        occ = self.initial.copy()
        for b, d in zip(self.bonds, self.directions):
            i, j = self.lattice.bonds[b]
            expect = 0 if occ[i] == occ[j] else (1 if occ[i] else -1)
            if expect != d:
                raise ValueError("event log inconsistent with configuration")
            occ[i], occ[j] = occ[j], occ[i]
        return occ


def sample_trajectory(
    lattice: Lattice,
    initial: Sequence[int],
    gamma: float,
    t: float,
    rng: np.random.Generator,
) -> TrajectoryRecord:
    """Gillespie trajectory with per-bond exponential clocks kept in a heap."""
    occ = np.array(initial, dtype=np.uint8)
    if occ.shape != (lattice.n_sites,):
        raise ValueError("initial configuration has the wrong length")
    start = occ.copy()
    times, bonds, dirs = [], [], []
    if gamma > 0 and lattice.n_bonds:
        heap = [(rng.exponential(1.0 / gamma), b) for b in range(lattice.n_bonds)]
        heapq.heapify(heap)
        while heap[0][0] <= t:
            tb, b = heapq.heappop(heap)
            i, j = lattice.bonds[b]
            d = 0 if occ[i] == occ[j] else (1 if occ[i] else -1)
            occ[i], occ[j] = occ[j], occ[i]
            times.append(tb)
            bonds.append(b)
            dirs.append(d)
            heapq.heappush(heap, (tb + rng.exponential(1.0 / gamma), b))
    return TrajectoryRecord(
        lattice,
        start,
        np.array(times, dtype=np.float64),
        np.array(bonds, dtype=np.int32),
        np.array(dirs, dtype=np.int8),
        occ,
        float(t),
    )


# trajectory logs


def write_trajectory(path, rec: TrajectoryRecord) -> None:
    """Binary log: magic, version, lattice hash, initial state, events, final state."""
    ev = np.empty(rec.n_events, dtype=_EVENT_DTYPE)
    ev["t"], ev["bond"], ev["dir"] = rec.times, rec.bonds, rec.directions
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<H", TRAJ_VERSION))
        fh.write(rec.lattice.hash())
        fh.write(struct.pack("<Id", rec.lattice.n_sites, rec.duration))
        fh.write(rec.initial.astype(np.uint8).tobytes())
        fh.write(struct.pack("<Q", rec.n_events))
        fh.write(ev.tobytes())
        fh.write(rec.final.astype(np.uint8).tobytes())


def read_trajectory(path, lattice: Lattice) -> TrajectoryRecord:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != TRAJ_MAGIC:
        raise ValueError("not a trajectory log")
    (version,) = struct.unpack_from("<H", data, 8)
    if version != TRAJ_VERSION:
        raise ValueError(f"unsupported trajectory log version {version}")
    if data[10:42] != lattice.hash():
        raise ValueError("trajectory log belongs to a different lattice")
    n, duration = struct.unpack_from("<Id", data, 42)
    off = 54
    initial = np.frombuffer(data, np.uint8, n, off).copy()
    off += n
    (m,) = struct.unpack_from("<Q", data, off)
    off += 8
    ev = np.frombuffer(data, _EVENT_DTYPE, m, off)
    off += m * _EVENT_DTYPE.itemsize
    final = np.frombuffer(data, np.uint8, n, off).copy()
    return TrajectoryRecord(
        lattice,
        initial,
        ev["t"].copy(),
        ev["bond"].astype(np.int32),
        ev["dir"].astype(np.int8),
        final,
        duration,
    )


def write_trajectory_jsonl(path, rec: TrajectoryRecord) -> None:
    """Text fallback: header line, one ``[t, bond, dir]`` line per event, footer."""
    with open(path, "w") as fh:
        head = {
            "magic": TRAJ_MAGIC.decode(),
            "version": TRAJ_VERSION,
            "lattice": rec.lattice.to_dict(),
            "lattice_hash": rec.lattice.hash().hex(),
            "duration": rec.duration,
            "initial": rec.initial.tolist(),
        }
        fh.write(json.dumps(head) + "\n")
        for t, b, d in zip(rec.times, rec.bonds, rec.directions):
            fh.write(json.dumps([float(t), int(b), int(d)]) + "\n")
        fh.write(json.dumps({"final": rec.final.tolist()}) + "\n")


def read_trajectory_jsonl(path) -> TrajectoryRecord:
    from .config_space import Lattice as _L

    with open(path) as fh:
        lines = fh.read().splitlines()
    head = json.loads(lines[0])
    if head.get("magic") != TRAJ_MAGIC.decode() or head.get("version") != TRAJ_VERSION:
        raise ValueError("not a version-1 trajectory log")
    lat = _L.from_dict(head["lattice"])
    if lat.hash().hex() != head["lattice_hash"]:
        raise ValueError("lattice hash mismatch")
    ev = [json.loads(x) for x in lines[1:-1]]
    final = np.array(json.loads(lines[-1])["final"], dtype=np.uint8)
    arr = np.array(ev, dtype=np.float64).reshape(-1, 3)
    return TrajectoryRecord(
        lat,
        np.array(head["initial"], dtype=np.uint8),
        arr[:, 0].copy(),
        arr[:, 1].astype(np.int32),
        arr[:, 2].astype(np.int8),
        final,
        float(head["duration"]),
    )


# batch kernels


@numba.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _batch_arrays(s0, bonds, rate_total, t, n_samples, seed):
    np.random.seed(seed)
    n_b = bonds.shape[0]
    out = np.empty((n_samples, s0.shape[0]), dtype=np.uint8)
    for k in range(n_samples):
        occ = s0.copy()
        n_ev = np.random.poisson(rate_total * t)
        for _ in range(n_ev):
            b = np.random.randint(0, n_b)
            i = bonds[b, 0]
            j = bonds[b, 1]
            tmp = occ[i]
            occ[i] = occ[j]
            occ[j] = tmp
        out[k] = occ
    return out


@numba.njit(cache=True)
def _run_mask(mask, bonds, bond_axis, n_axes, rate_total, t, cur):
    n_b = bonds.shape[0]
    for a in range(n_axes):
        cur[a] = 0
    n_ev = np.random.poisson(rate_total * t)
    one = np.uint64(1)
    for _ in range(n_ev):
        b = np.random.randint(0, n_b)
        i = np.uint64(bonds[b, 0])
        j = np.uint64(bonds[b, 1])
        bi = (mask >> i) & one
        bj = (mask >> j) & one
        if bi != bj:
            mask ^= (one << i) | (one << j)
            if bi == one:
                cur[bond_axis[b]] += 1
            else:
                cur[bond_axis[b]] -= 1
    return mask


@numba.njit(cache=True)
def _batch_masks(mask0, bonds, bond_axis, n_axes, rate_total, t, n_samples, seed):
    np.random.seed(seed)
    finals = np.empty(n_samples, dtype=np.uint64)
    currents = np.empty((n_samples, n_axes), dtype=np.int64)
    cur = np.zeros(n_axes, dtype=np.int64)
    for k in range(n_samples):
        finals[k] = _run_mask(mask0, bonds, bond_axis, n_axes, rate_total, t, cur)
        currents[k] = cur
    return finals, currents


@numba.njit(cache=True)
def _conditioned(mask0, target, bonds, bond_axis, n_axes, rate_total, t, n_accept, max_trials):
    out = np.empty((n_accept, n_axes), dtype=np.int64)
    cur = np.zeros(n_axes, dtype=np.int64)
    got = 0
    trials = 0
    while got < n_accept and trials < max_trials:
        trials += 1
        m = _run_mask(mask0, bonds, bond_axis, n_axes, rate_total, t, cur)
        if m == target:
            out[got] = cur
            got += 1
    return out[:got], trials


def _mask_of(initial) -> np.uint64:
    return np.uint64(config_to_mask(np.asarray(initial)))


def _check_mask_lattice(lattice: Lattice):
    if lattice.n_sites > 62:
        raise ValueError("mask kernels support at most 62 sites")


def sample_final_configs(
    lattice: Lattice, initial: Sequence[int], gamma: float, t: float, n: int, seed: int
) -> np.ndarray:
    """Final occupation arrays of ``n`` independent trajectories, shape ``(n, sites)``."""
    s0 = np.asarray(initial, dtype=np.uint8)
    return _batch_arrays(s0, lattice.bonds, gamma * lattice.n_bonds, float(t), int(n), int(seed))


def sample_final_masks(
    lattice: Lattice, initial: Sequence[int], gamma: float, t: float, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Final bitmasks and net per-axis hop currents of ``n`` trajectories."""
    _check_mask_lattice(lattice)
    return _batch_masks(
        _mask_of(initial),
        lattice.bonds,
        lattice.bond_axis,
        lattice.dim,
        gamma * lattice.n_bonds,
        float(t),
        int(n),
        int(seed),
    )


@dataclass
class DensityEstimate:
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int


def density_profile_mc(
    lattice: Lattice, initial: Sequence[int], gamma: float, t: float, n: int, seed: int
) -> DensityEstimate:
    finals = sample_final_configs(lattice, initial, gamma, t, n, seed)
    mean = finals.mean(axis=0)
    return DensityEstimate(mean, finals.std(axis=0, ddof=1) / np.sqrt(n), n)


# winding


@dataclass
class WindingStatistics:
    """Moments of ``W_mu = (N_plus - N_minus) / L_mu`` over a path ensemble.

    ``stiffness`` is the estimator of the chosen ensemble averaged over the
    measured axes; ``per_axis`` holds the same quantity for every axis.
    """

    ensemble: str
    t: float
    stiffness: float
    stderr: float
    mean_w: np.ndarray
    mean_w2: np.ndarray
    per_axis: np.ndarray
    per_axis_stderr: np.ndarray
    n_accepted: int
    n_trials: int
    windings: np.ndarray | None = field(default=None, repr=False)

    @property
    def acceptance(self) -> float:
        return self.n_accepted / max(self.n_trials, 1)


def _axes(lattice: Lattice, axes):
    if axes is None:
        axes = [a for a, p in enumerate(lattice.periodic) if p]
    if not axes:
        raise ValueError("winding needs at least one periodic axis")
    return list(axes)


def renyi2_winding(
    lattice: Lattice,
    initial: Sequence[int],
    gamma: float,
    t: float,
    n_accept: int,
    seed: int,
    acceptance_floor: float = DEFAULT_ACCEPTANCE_FLOOR,
    axes: Sequence[int] | None = None,
    max_trials: int | None = None,
) -> WindingStatistics:
    """Winding statistics of the doubled-time ensemble.

    Trajectories of duration ``2 t`` are drawn from ``initial`` and kept only
    when they return to it, which samples the path weight of ``sum_s P_t(s)^2``.
    The estimator is the mean of ``W_mu**2``.

    Raises
    ------
    AcceptanceFloorError
        If the return probability falls below ``acceptance_floor``.
    """
    _check_mask_lattice(lattice)
    ax = _axes(lattice, axes)
    m0 = _mask_of(initial)
    if max_trials is None:
        max_trials = int(np.ceil(n_accept / acceptance_floor))
    _seed(int(seed))
    cur, trials = _conditioned(
        m0, m0, lattice.bonds, lattice.bond_axis, lattice.dim,
        gamma * lattice.n_bonds, 2.0 * t, int(n_accept), int(max_trials),
    )
    if cur.shape[0] < n_accept and cur.shape[0] / max(trials, 1) < acceptance_floor:
        raise AcceptanceFloorError(
            f"accepted {cur.shape[0]} of {trials} trajectories, below floor {acceptance_floor}"
        )
    ext = np.asarray(lattice.extents, dtype=np.float64)
    W = cur[:, ax] / ext[ax]
    w2 = W**2
    n = W.shape[0]
    per = w2.mean(axis=0)
    per_se = w2.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.full(len(ax), np.inf)
    avg = w2.mean(axis=1)
    se = avg.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
    return WindingStatistics(
        "renyi2", float(t), float(avg.mean()), float(se), W.mean(axis=0), per,
        per, per_se, n, int(trials), W,
    )


def _grouped_variance(finals, W):
    """Return ``sum_g (n_g / M) * Var_g(W)`` over final-state groups with ``n_g >= 2``."""
    order = np.argsort(finals, kind="stable")
    f = finals[order]
    w = W[order]
    cuts = np.flatnonzero(np.diff(f)) + 1
    starts = np.concatenate([[0], cuts])
    sizes = np.diff(np.concatenate([starts, [len(f)]]))
    s1 = np.add.reduceat(w, starts, axis=0)
    s2 = np.add.reduceat(w * w, starts, axis=0)
    big = sizes >= 2
    n = sizes[big][:, None].astype(np.float64)
    var = (s2[big] - s1[big] ** 2 / n) / (n - 1)
    est = (n * var).sum(axis=0) / len(f)
    return est, int(sizes[big].sum())


def disorder_averaged_winding(
    lattice: Lattice,
    initial: Sequence[int],
    gamma: float,
    t: float,
    n_samples: int,
    seed: int,
    acceptance_floor: float = DEFAULT_ACCEPTANCE_FLOOR,
    axes: Sequence[int] | None = None,
    n_groups: int = 20,
) -> WindingStatistics:
    """Disorder-averaged stiffness ``sum_s P_t(s) Var(W | s)``.

    Forward trajectories of duration ``t`` are grouped by their final
    configuration ``s``. The trajectories inside one group are exactly the
    accepted draws of a rejection sampler conditioned on ending in ``s``, and
    the group frequencies estimate ``P_t(s)``. Each group with at least two
    members contributes ``(n_s / M) * Var_s(W)`` with the unbiased sample
    variance. Groups with a single member cannot contribute, which biases the
    estimate low by at most ``sum_s P(s) (1 - P(s))^(M-1) Var(W | s)``.

    The acceptance reported is the fraction of trajectories that landed in a
    group of size two or more; it must exceed ``acceptance_floor``.
    """
    _check_mask_lattice(lattice)
    ax = _axes(lattice, axes)
    m0 = _mask_of(initial)
    finals, cur = _batch_masks(
        m0, lattice.bonds, lattice.bond_axis, lattice.dim,
        gamma * lattice.n_bonds, float(t), int(n_samples), int(seed),
    )
    ext = np.asarray(lattice.extents, dtype=np.float64)[ax]
    W = cur[:, ax] / ext
    per, used = _grouped_variance(finals, W)
    acc = used / n_samples
    if acc < acceptance_floor:
        raise AcceptanceFloorError(
            f"only {used} of {n_samples} trajectories share a final state (floor {acceptance_floor})"
        )
    jk = []
    for g in np.array_split(np.arange(n_samples), n_groups):
        keep = np.ones(n_samples, dtype=bool)
        keep[g] = False
        e, _ = _grouped_variance(finals[keep], W[keep])
        jk.append(e)
    jk = np.array(jk)
    fac = (n_groups - 1) / n_groups
    per_se = np.sqrt(fac * ((jk - jk.mean(axis=0)) ** 2).sum(axis=0))
    avg_jk = jk.mean(axis=1)
    se = float(np.sqrt(fac * ((avg_jk - avg_jk.mean()) ** 2).sum()))
    return WindingStatistics(
        "disorder", float(t), float(per.mean()), se, W.mean(axis=0), (W**2).mean(axis=0),
        per, per_se, used, int(n_samples),
    )


# collision estimator


@dataclass
class CollisionEstimate:
    value: float
    stderr: float
    n_samples: int


def _shift_counts(uniq, counts, i, j):
    one = np.uint64(1)
    sel = (((uniq >> np.uint64(i)) & one) == 0) & (((uniq >> np.uint64(j)) & one) == 1)
    x = uniq[sel]
    xs = x + (one << np.uint64(i)) - (one << np.uint64(j))
    pos = np.searchsorted(uniq, xs)
    pos = np.minimum(pos, len(uniq) - 1)
    hit = uniq[pos] == xs
    return float((counts[sel][hit] * counts[pos[hit]]).sum())


def _collision_ratio(masks, pairs):
    uniq, counts = np.unique(masks, return_counts=True)
    counts = counts.astype(np.float64)
    den = float((counts * (counts - 1)).sum())
    num = sum(_shift_counts(uniq, counts, i, j) for i, j in pairs)
    return num, den


def collision_c2(
    masks: np.ndarray,
    i: int,
    j: int,
    symmetric: bool = False,
    n_groups: int = 20,
    max_stderr: float | None = None,
) -> CollisionEstimate:
    """Estimate the Renyi-2 correlator from independent configuration samples.

    The numerator counts ordered sample pairs whose second member equals the
    first with the particle on ``j`` moved to ``i``; the denominator counts
    ordered pairs of identical samples. Both are unbiased pair statistics of
    ``sum P(s) P(s')`` and ``sum P(s)^2``. The error bar is a
    delete-one-group jackknife.
    """
    masks = np.asarray(masks, dtype=np.uint64)
    pairs = [(i, j), (j, i)] if symmetric else [(i, j)]
    num, den = _collision_ratio(masks, pairs)
    if den == 0:
        raise VarianceBoundError("no repeated configurations among the samples")
    value = num / den
    m = masks.shape[0]
    groups = np.array_split(np.arange(m), n_groups)
    jk = []
    for g in groups:
        keep = np.ones(m, dtype=bool)
        keep[g] = False
        nn, dd = _collision_ratio(masks[keep], pairs)
        jk.append(nn / dd if dd > 0 else np.nan)
    jk = np.array(jk)
    if np.any(np.isnan(jk)):
        se = np.inf
    else:
        se = float(np.sqrt((n_groups - 1) / n_groups * ((jk - jk.mean()) ** 2).sum()))
    if max_stderr is not None and se > max_stderr:
        raise VarianceBoundError(f"collision estimator stderr {se:.3g} exceeds {max_stderr:.3g}")
    return CollisionEstimate(value, se, m)


def renyi_susceptibility_estimate(
    lattice: Lattice, masks: np.ndarray, n_groups: int = 20
) -> CollisionEstimate:
    """Sampled ``chi^(2) = L^-2 sum_{i != j} C^(2)(i, j)`` from configuration samples."""
    masks = np.asarray(masks, dtype=np.uint64)
    n = lattice.n_sites
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    norm = float(lattice.linear_size) ** 2

    def est(ms):
        num, den = _collision_ratio(ms, pairs)
        return num / den / norm if den > 0 else np.nan

    value = est(masks)
    m = masks.shape[0]
    jk = []
    for g in np.array_split(np.arange(m), n_groups):
        keep = np.ones(m, dtype=bool)
        keep[g] = False
        jk.append(est(masks[keep]))
    jk = np.array(jk)
    se = float(np.sqrt((n_groups - 1) / n_groups * ((jk - jk.mean()) ** 2).sum()))
    return CollisionEstimate(value, se, m)


def masks_from_configs(configs: np.ndarray) -> np.ndarray:
    from .config_space import configs_to_masks

    return configs_to_masks(configs)


__all__ = [
    "AcceptanceFloorError",
    "CollisionEstimate",
    "DensityEstimate",
    "TrajectoryRecord",
    "WindingStatistics",
    "collision_c2",
    "density_profile_mc",
    "disorder_averaged_winding",
    "read_trajectory",
    "read_trajectory_jsonl",
    "renyi2_winding",
    "renyi_susceptibility_estimate",
    "sample_final_configs",
    "sample_final_masks",
    "sample_trajectory",
    "write_trajectory",
    "write_trajectory_jsonl",
    "mask_to_config",
]
