import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swssb.config_space import SectorDistribution, chain, configs_to_masks, ladder, neel_state, torus
from swssb.exact_evolver import current_moments, density_profile_oracle, evolve
from swssb.ssep_sampler import (
    AcceptanceFloorError,
    VarianceBoundError,
    collision_c2,
    density_profile_mc,
    disorder_averaged_winding,
    read_trajectory,
    read_trajectory_jsonl,
    renyi2_winding,
    renyi_susceptibility_estimate,
    sample_final_configs,
    sample_final_masks,
    sample_trajectory,
    write_trajectory,
    write_trajectory_jsonl,
)

LN2_2 = np.log(2) / 2


def test_zero_time_trajectory(rng):
    lat = chain(6)
    rec = sample_trajectory(lat, neel_state(lat), 1.0, 0.0, rng)
    assert rec.n_events == 0
    assert np.array_equal(rec.final, rec.initial)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 4.0))
def test_trajectory_invariants(seed, t):
    lat = torus(4)
    rec = sample_trajectory(lat, neel_state(lat), 0.7, t, np.random.default_rng(seed))
    assert np.all(np.diff(rec.times) > 0)
    assert rec.times.size == 0 or (rec.times[0] >= 0 and rec.times[-1] <= t)
    assert np.array_equal(rec.replay(), rec.final)
    assert rec.final.sum() == rec.initial.sum()
    plus, minus = rec.hop_counts()
    assert plus.sum() + minus.sum() == np.count_nonzero(rec.directions)
    if np.array_equal(rec.final, rec.initial):
        w = rec.windings()
        assert np.allclose(w, np.round(w))


def test_trajectory_deterministic_given_seed():
    lat = chain(8, periodic=True)
    a = sample_trajectory(lat, neel_state(lat), 1.0, 3.0, np.random.default_rng(5))
    b = sample_trajectory(lat, neel_state(lat), 1.0, 3.0, np.random.default_rng(5))
    assert np.array_equal(a.times, b.times) and np.array_equal(a.bonds, b.bonds)


def test_trajectory_log_roundtrip(tmp_path, rng):
    lat = ladder(2, 4)
    rec = sample_trajectory(lat, neel_state(lat), 1.0, 2.5, rng)
    write_trajectory(tmp_path / "t.bin", rec)
    back = read_trajectory(tmp_path / "t.bin", lat)
    assert np.array_equal(back.times, rec.times)
    assert np.array_equal(back.directions, rec.directions)
    assert np.array_equal(back.final, rec.final)
    with pytest.raises(ValueError, match="different lattice"):
        read_trajectory(tmp_path / "t.bin", chain(8))
    write_trajectory_jsonl(tmp_path / "t.jsonl", rec)
    back2 = read_trajectory_jsonl(tmp_path / "t.jsonl")
    assert np.array_equal(back2.bonds, rec.bonds) and np.array_equal(back2.replay(), rec.final)


def test_two_site_binomial():
    n = 40000
    fin = sample_final_configs(chain(2), [1, 0], 1.0, LN2_2, n, seed=11)
    k = int((fin[:, 0] == 1).sum())
    sigma = np.sqrt(0.75 * 0.25 / n)
    assert abs(k / n - 0.75) < 3 * sigma


def test_heap_sampler_two_site_binomial():
    r = np.random.default_rng(3)
    n = 20000
    k = sum(int(sample_trajectory(chain(2), [1, 0], 1.0, LN2_2, r).final[0]) for _ in range(n))
    assert abs(k / n - 0.75) < 3 * np.sqrt(0.75 * 0.25 / n)


def test_domain_wall_profile_matches_oracle():
    L, gamma, t, n = 100, 0.1, 40.0, 10000
    start = np.zeros(L, dtype=np.uint8)
    start[: L // 2] = 1
    est = density_profile_mc(chain(L), start, gamma, t, n, seed=7)
    ref = density_profile_oracle(chain(L), start, gamma, [t])[0]
    sigma = np.sqrt(np.clip(ref * (1 - ref), 0, None) / n)
    active = sigma > 1e-6
    assert np.all(np.abs(est.mean - ref)[active] < 3 * sigma[active])
    assert np.all(np.abs(est.mean - ref)[~active] < 1e-3)


def test_sampled_distribution_matches_exact_chi_square():
    lat = chain(6, periodic=True)
    s0 = neel_state(lat)
    exact = evolve(SectorDistribution.point_mass(lat, s0), 0.5, 1.0)
    n = 60000
    masks, _ = sample_final_masks(lat, s0, 0.5, 1.0, n, seed=21)
    counts = np.bincount(exact.basis.rank(masks), minlength=exact.dim)
    expected = n * exact.probs
    chi2 = ((counts - expected) ** 2 / expected).sum()
    # 19 degrees of freedom; the 0.999 quantile is 43.8
    assert chi2 < 43.8


def test_sampled_currents_match_tilted_generator():
    lat = chain(5, periodic=True)
    s0 = [1, 1, 0, 0, 0]
    gamma, t, n = 0.6, 1.5, 100000
    masks, cur = sample_final_masks(lat, s0, gamma, t, n, seed=4)
    mom = current_moments(SectorDistribution.point_mass(lat, s0), gamma, t, axis=0)
    J = cur[:, 0].astype(float)
    assert abs(J.mean() - mom.first.sum()) < 4 * J.std() / np.sqrt(n)
    assert abs((J**2).mean() - mom.second.sum()) < 4 * (J**2).std() / np.sqrt(n)


def test_renyi2_winding_zero_time():
    lat = torus(4)
    st_ = renyi2_winding(lat, neel_state(lat), 1.0, 0.0, 500, seed=1)
    assert st_.acceptance == 1.0
    assert st_.stiffness == 0.0 and np.all(st_.windings == 0)


def test_renyi2_winding_properties():
    lat = torus(4)
    st_ = renyi2_winding(lat, neel_state(lat), 1.0, 0.25, 2000, seed=2)
    # conditioned on returning, windings are integers
    assert np.allclose(st_.windings, np.round(st_.windings))
    assert np.all(st_.mean_w2 >= st_.mean_w**2 - 1e-12)
    assert 0 < st_.acceptance < 1
    assert st_.stiffness >= 0


def test_acceptance_floor_error():
    lat = torus(4)
    with pytest.raises(AcceptanceFloorError):
        renyi2_winding(lat, neel_state(lat), 1.0, 3.0, 100, seed=3, acceptance_floor=0.5)
    with pytest.raises(AcceptanceFloorError):
        disorder_averaged_winding(lat, neel_state(lat), 1.0, 3.0, 200, seed=3, acceptance_floor=0.5)


def test_winding_needs_periodic_axis():
    with pytest.raises(ValueError, match="periodic"):
        renyi2_winding(chain(4), [1, 0, 1, 0], 1.0, 0.1, 10, seed=0)


def test_disorder_winding_against_exact_conditional_variance():
    # exact sum_s P(s) Var(W | s) from the tilted generator on a small ring
    lat = chain(6, periodic=True)
    s0 = neel_state(lat)
    gamma, t = 0.5, 0.6
    mom = current_moments(SectorDistribution.point_mass(lat, s0), gamma, t, axis=0)
    p = mom.prob
    ok = p > 1e-300
    var = mom.second[ok] / p[ok] - (mom.first[ok] / p[ok]) ** 2
    exact = float((p[ok] * var).sum()) / 36
    est = disorder_averaged_winding(lat, s0, gamma, t, 200000, seed=9)
    assert abs(est.stiffness - exact) < 3 * est.stderr + 0.02 * exact


def test_collision_estimator_two_site():
    masks, _ = sample_final_masks(chain(2), [1, 0], 1.0, LN2_2, 20000, seed=5)
    c = collision_c2(masks, 0, 1)
    assert abs(c.value - 0.3) < 3 * c.stderr
    # the symmetric form adds both orientations
    cs = collision_c2(masks, 0, 1, symmetric=True)
    assert abs(cs.value - 0.6) < 3 * cs.stderr
    chi = renyi_susceptibility_estimate(chain(2), masks)
    assert abs(chi.value - 0.15) < 3 * chi.stderr


def test_collision_estimator_errors():
    distinct = configs_to_masks(np.eye(6, dtype=np.uint8))
    with pytest.raises(VarianceBoundError):
        collision_c2(distinct, 0, 1)
    masks, _ = sample_final_masks(chain(2), [1, 0], 1.0, LN2_2, 200, seed=5)
    with pytest.raises(VarianceBoundError):
        collision_c2(masks, 0, 1, max_stderr=1e-9)


def test_batch_sampler_seed_determinism():
    a = sample_final_masks(torus(4), neel_state(torus(4)), 1.0, 0.7, 1000, seed=8)
    b = sample_final_masks(torus(4), neel_state(torus(4)), 1.0, 0.7, 1000, seed=8)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
