import numpy as np
import pytest
from scipy.linalg import expm

from swssb.config_space import Lattice


def dense_swap_generator(lattice: Lattice, gamma: float) -> np.ndarray:
    """``gamma * sum_b (SWAP_b - 1)`` on all ``2**n`` configurations, built site by site."""
    n = lattice.n_sites
    dim = 1 << n
    G = np.zeros((dim, dim))
    for i, j in lattice.bonds:
        for s in range(dim):
            bi, bj = (s >> i) & 1, (s >> j) & 1
            s2 = s ^ ((bi ^ bj) << i) ^ ((bi ^ bj) << j)
            G[s2, s] += gamma
            G[s, s] -= gamma
    return G


def dense_evolve(lattice: Lattice, gamma: float, t: float, config) -> np.ndarray:
    """Full-space probability vector after time ``t`` from a point mass."""
    n = lattice.n_sites
    p0 = np.zeros(1 << n)
    p0[sum(int(v) << k for k, v in enumerate(config))] = 1.0
    return expm(t * dense_swap_generator(lattice, gamma)) @ p0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance reporting

ACCEPTANCE: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def record():
    """Log one acceptance sub-check; the terminal summary groups them per criterion."""

    def _record(criterion: int, check: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE.append((criterion, check, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'} criterion {criterion} [{check}]: {detail}")
        return bool(ok)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted({a[0] for a in ACCEPTANCE}):
        subs = [a for a in ACCEPTANCE if a[0] == c]
        ok = all(a[2] for a in subs)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {c}: {len(subs)} sub-checks, {sum(a[2] for a in subs)} passed")
        for _, check, sub_ok, detail in subs:
            terminalreporter.write_line(f"    {'pass' if sub_ok else 'FAIL'} {check}: {detail}")
