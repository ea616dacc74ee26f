"""Lattices, fixed-charge sectors and probability vectors over them.

Configurations are stored as integer bitmasks with site ``i`` on bit ``i``.
Inside a charge sector the states are listed in ascending bitmask order,
which is the colexicographic order of the occupied-site sets. The rank of a
state is its combinadic number ``sum_k C(p_k, k + 1)`` where ``p_0 < p_1 <
...`` are the occupied sites.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_SECTOR_CAP = 2**21
MAX_SITES = 62
SNAPSHOT_SCHEMA = "swssb.sector_distribution/1"


class SectorTooLargeError(ValueError):
    """Raised when a sector exceeds the configured enumeration cap."""


@dataclass(frozen=True)
class Lattice:
    """Hypercubic lattice with open or periodic axes.

    Sites are indexed in C order over ``extents``. Each bond ``(i, j)`` points
    from ``i`` to its forward neighbour ``j = i + e_axis`` (with wrap-around
    on periodic axes), so a particle moving ``i -> j`` has displacement +1
    along ``bond_axis``.
    """

    extents: tuple[int, ...]
    periodic: tuple[bool, ...]
    bonds: np.ndarray = field(repr=False, compare=False)
    bond_axis: np.ndarray = field(repr=False, compare=False)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.extents))

    @property
    def n_bonds(self) -> int:
        return int(self.bonds.shape[0])

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def linear_size(self) -> int:
        """Largest extent, used as ``L`` in per-area normalisations."""
        return int(max(self.extents))

    def coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, self.extents))

    def site(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(coords), self.extents))

    def sublattice(self) -> np.ndarray:
        """Parity of the coordinate sum for every site (0 = even)."""
        grids = np.indices(self.extents).reshape(self.dim, -1)
        return (grids.sum(axis=0) % 2).astype(np.int8)

    def is_bipartite(self) -> bool:
        return all(not p or (e % 2 == 0) for e, p in zip(self.extents, self.periodic))

    def to_dict(self) -> dict:
        return {"extents": list(self.extents), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, d: dict) -> "Lattice":
        return make_lattice(tuple(d["extents"]), tuple(d["periodic"]))

    def hash(self) -> bytes:
        """SHA-256 digest identifying the lattice geometry."""
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).digest()


def make_lattice(extents: Sequence[int], periodic: Sequence[bool] | bool = False) -> Lattice:
    """Build a lattice and its forward-bond list."""
    extents = tuple(int(e) for e in extents)
    if isinstance(periodic, (bool, np.bool_)):
        periodic = (bool(periodic),) * len(extents)
    periodic = tuple(bool(p) for p in periodic)
    if len(periodic) != len(extents):
        raise ValueError("periodic flags must match the number of axes")
    if any(e < 1 for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    n = int(np.prod(extents))
    bonds, axes = [], []
    for s in range(n):
        c = np.unravel_index(s, extents)
        for ax, (e, p) in enumerate(zip(extents, periodic)):
            nxt = list(c)
            if c[ax] + 1 < e:
                nxt[ax] = c[ax] + 1
            elif p and e > 1:
                nxt[ax] = 0
            else:
                continue
            t = int(np.ravel_multi_index(tuple(nxt), extents))
            if t == s:
                continue
            bonds.append((s, t))
            axes.append(ax)
    b = np.array(bonds, dtype=np.int64).reshape(-1, 2)
    a = np.array(axes, dtype=np.int64)
    b.setflags(write=False)
    a.setflags(write=False)
    return Lattice(extents, periodic, b, a)


def chain(L: int, periodic: bool = False) -> Lattice:
    return make_lattice((L,), (periodic,))


def ladder(W: int, L: int) -> Lattice:
    """Open ``W x L`` ladder; axis 0 runs across the rungs, axis 1 along the legs."""
    return make_lattice((W, L), (False, False))


def torus(Lx: int, Ly: int | None = None) -> Lattice:
    return make_lattice((Lx, Lx if Ly is None else Ly), (True, True))


def neel_state(lattice: Lattice) -> np.ndarray:
    """Occupation vector with particles on the even sublattice."""
    if not lattice.is_bipartite():
        raise ValueError("Neel state needs a bipartite lattice (even periodic extents)")
    return (lattice.sublattice() == 0).astype(np.uint8)


def config_to_mask(config: Sequence[int]) -> int:
    mask = 0
    for i, v in enumerate(config):
        if v:
            mask |= 1 << i
    return mask


def mask_to_config(mask: int, n_sites: int) -> np.ndarray:
    return np.array([(mask >> i) & 1 for i in range(n_sites)], dtype=np.uint8)


def masks_to_configs(masks: np.ndarray, n_sites: int) -> np.ndarray:
    shifts = np.arange(n_sites, dtype=np.uint64)
    return ((masks[:, None].astype(np.uint64) >> shifts) & np.uint64(1)).astype(np.uint8)


def configs_to_masks(configs: np.ndarray) -> np.ndarray:
    configs = np.asarray(configs)
    if configs.shape[-1] > MAX_SITES:
        raise ValueError(f"{configs.shape[-1]} sites exceed the bitmask limit of {MAX_SITES}")
    weights = np.uint64(1) << np.arange(configs.shape[-1], dtype=np.uint64)
    return (configs.astype(np.uint64) * weights).sum(axis=-1, dtype=np.uint64)


@functools.lru_cache(maxsize=None)
def _binom_table(n: int) -> np.ndarray:
    t = np.zeros((n + 1, n + 2), dtype=np.int64)
    for a in range(n + 1):
        for b in range(n + 2):
            t[a, b] = comb(a, b)
    return t


def sector_dimension(n_sites: int, charge: int) -> int:
    return comb(n_sites, charge)


def _enumerate_masks(n_sites: int, charge: int) -> np.ndarray:
    # rows[q] holds all masks on the first n sites with q particles, ascending
    rows = [np.zeros(1, dtype=np.uint64)] + [np.zeros(0, dtype=np.uint64)] * charge
    for n in range(1, n_sites + 1):
        top = np.uint64(1) << np.uint64(n - 1)
        new = [rows[0]]
        for q in range(1, charge + 1):
            new.append(np.concatenate([rows[q], rows[q - 1] | top]))
        rows = new
    return rows[charge]


def rank_masks(masks: np.ndarray, n_sites: int) -> np.ndarray:
    """Combinadic rank of each bitmask inside its own charge sector."""
    masks = np.asarray(masks, dtype=np.uint64)
    table = _binom_table(n_sites)
    rank = np.zeros(masks.shape, dtype=np.int64)
    seen = np.zeros(masks.shape, dtype=np.int64)
    for pos in range(n_sites):
        bit = ((masks >> np.uint64(pos)) & np.uint64(1)).astype(bool)
        seen_b = seen[bit]
        rank[bit] += table[pos, seen_b + 1]
        seen[bit] = seen_b + 1
    return rank


@dataclass(frozen=True)
class SectorBasis:
    """Ordered list of bitmasks with a fixed particle number."""

    n_sites: int
    charge: int
    masks: np.ndarray = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return int(self.masks.shape[0])

    def rank(self, masks: np.ndarray) -> np.ndarray:
        return rank_masks(masks, self.n_sites)

    def configs(self) -> np.ndarray:
        return masks_to_configs(self.masks, self.n_sites)

    def occupation(self, site: int) -> np.ndarray:
        return ((self.masks >> np.uint64(site)) & np.uint64(1)).astype(np.uint8)


@functools.lru_cache(maxsize=8)
def _cached_basis(n_sites: int, charge: int) -> SectorBasis:
    masks = _enumerate_masks(n_sites, charge)
    masks.setflags(write=False)
    return SectorBasis(n_sites, charge, masks)


def enumerate_sector(lattice: Lattice, charge: int, cap: int = DEFAULT_SECTOR_CAP) -> SectorBasis:
    """All configurations with ``charge`` particles, in ascending bitmask order.

    Raises
    ------
    SectorTooLargeError
        If the sector dimension exceeds ``cap``.
    """
    n = lattice.n_sites
    if n > MAX_SITES:
        raise ValueError(f"{n} sites exceed the bitmask limit of {MAX_SITES}")
    if not 0 <= charge <= n:
        raise ValueError(f"charge {charge} outside [0, {n}]")
    dim = sector_dimension(n, charge)
    if dim > cap:
        raise SectorTooLargeError(f"sector C({n},{charge}) = {dim} exceeds cap {cap}")
    return _cached_basis(n, charge)


@dataclass(frozen=True)
class SectorDistribution:
    """Probability vector over one charge sector of a lattice."""

    lattice: Lattice
    charge: int
    probs: np.ndarray = field(repr=False, compare=False)
    basis: SectorBasis = field(repr=False, compare=False)

    @classmethod
    def from_probs(
        cls,
        lattice: Lattice,
        charge: int,
        probs: np.ndarray,
        cap: int = DEFAULT_SECTOR_CAP,
        atol: float = 1e-12,
    ) -> "SectorDistribution":
        basis = enumerate_sector(lattice, charge, cap)
        p = np.array(probs, dtype=np.float64)
        if p.shape != (basis.dim,):
            raise ValueError(f"expected {basis.dim} probabilities, got {p.shape}")
        if np.any(p < -atol):
            raise ValueError("negative probability")
        if abs(p.sum() - 1.0) > max(atol, 1e-9):
            raise ValueError(f"probabilities sum to {p.sum()!r}")
        p.setflags(write=False)
        return cls(lattice, charge, p, basis)

    @classmethod
    def point_mass(cls, lattice: Lattice, config: Sequence[int], cap: int = DEFAULT_SECTOR_CAP):
        config = np.asarray(config, dtype=np.uint8)
        q = int(config.sum())
        basis = enumerate_sector(lattice, q, cap)
        p = np.zeros(basis.dim)
        p[int(basis.rank(np.array([config_to_mask(config)], dtype=np.uint64))[0])] = 1.0
        return cls.from_probs(lattice, q, p, cap)

    @classmethod
    def uniform(cls, lattice: Lattice, charge: int, cap: int = DEFAULT_SECTOR_CAP):
        basis = enumerate_sector(lattice, charge, cap)
        return cls.from_probs(lattice, charge, np.full(basis.dim, 1.0 / basis.dim), cap)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def prob_of(self, config: Sequence[int]) -> float:
        config = np.asarray(config)
        if int(config.sum()) != self.charge:
            return 0.0
        r = self.basis.rank(np.array([config_to_mask(config)], dtype=np.uint64))[0]
        return float(self.probs[r])

    def density(self) -> np.ndarray:
        """Mean occupation of every site."""
        return np.array(
            [self.probs @ self.basis.occupation(i) for i in range(self.lattice.n_sites)]
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` bitmasks from the distribution."""
        idx = rng.choice(self.dim, size=n, p=self.probs / self.probs.sum())
        return self.basis.masks[idx]

    # serialisation
    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": SNAPSHOT_SCHEMA,
                "lattice": self.lattice.to_dict(),
                "bonds": self.lattice.bonds.tolist(),
                "charge": self.charge,
                "order": "colex",
                "probabilities": self.probs.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str, cap: int = DEFAULT_SECTOR_CAP) -> "SectorDistribution":
        d = json.loads(text)
        if d.get("schema") != SNAPSHOT_SCHEMA:
            raise ValueError(f"unknown snapshot schema {d.get('schema')!r}")
        lat = Lattice.from_dict(d["lattice"])
        if lat.bonds.tolist() != d["bonds"]:
            raise ValueError("bond list does not match lattice geometry")
        return cls.from_probs(lat, int(d["charge"]), np.array(d["probabilities"]), cap)


def subsystem_index(masks: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    """Pack the occupations of ``sites`` into an integer, site ``sites[m]`` on bit ``m``."""
    masks = np.asarray(masks, dtype=np.uint64)
    out = np.zeros(masks.shape, dtype=np.int64)
    for m, s in enumerate(sites):
        out |= (((masks >> np.uint64(s)) & np.uint64(1)).astype(np.int64)) << m
    return out


def marginal(dist: SectorDistribution, sites: Sequence[int]) -> np.ndarray:
    """Probability table over the ``2**len(sites)`` sub-configurations of ``sites``.

    Entry ``k`` is the probability that site ``sites[m]`` holds bit ``m`` of ``k``.
    """
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise ValueError("duplicate sites in subsystem")
    if any(not 0 <= s < dist.lattice.n_sites for s in sites):
        raise ValueError("site out of range")
    if len(sites) > 26:
        raise SectorTooLargeError(f"marginal over {len(sites)} sites is too large")
    idx = subsystem_index(dist.basis.masks, sites)
    return np.bincount(idx, weights=dist.probs, minlength=1 << len(sites))
