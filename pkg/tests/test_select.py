import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coarsebind.errors import CoarseBindWarning, InputError, NumericError
from coarsebind.select import (
    SelectionPool,
    Strategy,
    dmta_simulate,
    emax,
    emax_select,
    greedy_select,
    make_cliff_pool,
    pathwise_update,
)


def test_greedy_top_two():
    assert greedy_select([3, 1, 2], 2) == [0, 2]


def test_greedy_ties_go_to_lower_index():
    assert greedy_select([5.0] * 6, 3) == [0, 1, 2]


def test_greedy_zero_batch():
    assert greedy_select([1.0, 2.0], 0) == []


def test_greedy_respects_availability():
    assert greedy_select([9, 8, 7, 6], 2, available={1, 3}) == [1, 3]


def test_greedy_oversized_batch_selects_all_with_warning():
    with pytest.warns(CoarseBindWarning):
        assert sorted(greedy_select([1, 2, 3], 5)) == [0, 1, 2]


def test_emax_singleton_is_column_mean(rng):
    s = rng.normal(size=(200, 4))
    assert emax(s, [2]) == pytest.approx(s[:, 2].mean())


def test_emax_of_identical_columns(rng):
    col = rng.normal(size=(300, 1))
    s = np.hstack([col, col])
    assert emax(s, [0, 1]) == pytest.approx(emax(s, [0]))


def test_emax_two_independent_normals():
    s = np.random.default_rng(0).standard_normal((1_000_000, 2))
    assert emax(s, [0, 1]) == pytest.approx(1 / np.sqrt(np.pi), abs=3e-3)


def test_emax_empty_subset():
    with pytest.raises(InputError):
        emax(np.zeros((3, 2)), [])


def test_emax_select_single_is_argmax_mean(rng):
    s = rng.normal(size=(500, 7)) + np.arange(7) * 0.1
    assert emax_select(s, 1) == [int(np.argmax(s.mean(axis=0)))]


def test_emax_select_hedges_instead_of_duplicating():
    rng = np.random.default_rng(5)
    z = rng.standard_normal((20000, 2))
    s = np.column_stack([1.0 + z[:, 0], 1.0 + z[:, 0], 0.9 + z[:, 1]])
    picked = emax_select(s, 2)
    best = max(itertools.combinations(range(3), 2), key=lambda c: emax(s, c))
    assert 2 in picked and len({0, 1} & set(picked)) == 1
    assert emax(s, picked) == pytest.approx(emax(s, best))


def test_emax_select_whole_pool(rng):
    s = rng.normal(size=(50, 5))
    assert emax_select(s, 5) == [0, 1, 2, 3, 4]


def test_emax_select_matches_exhaustive_on_small_pools():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(3, 9))
        b = int(rng.integers(1, min(n, 4) + 1))
        cov = rng.normal(size=(n, n))
        s = rng.normal(size=(400, n)) @ cov * 0.5 + rng.normal(size=n)
        best = max(emax(s, c) for c in itertools.combinations(range(n), b))
        assert emax(s, emax_select(s, b)) >= best - 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_emax_monotone_and_permutation_invariant(seed, n):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(64, n))
    subset = list(range(n))
    value = emax(s, subset)
    assert value >= max(emax(s, [i]) for i in subset) - 1e-12
    assert emax(s[rng.permutation(64)], rng.permutation(subset)) == pytest.approx(value)


def test_pathwise_without_observations_is_identity(rng):
    s = rng.normal(size=(20, 4))
    assert pathwise_update(s, []) is s


def test_pathwise_noiseless_interpolates(rng):
    s = rng.normal(size=(50, 4))
    out = pathwise_update(s, [(1, 2.5), (3, -1.0)], sigma_obs=0.0, noise=False)
    np.testing.assert_allclose(out[:, 1], 2.5, atol=1e-8)
    np.testing.assert_allclose(out[:, 3], -1.0, atol=1e-8)


def test_pathwise_matches_gp_conditioning():
    mu = np.array([0.5, -0.2, 1.0])
    a = np.array([[1.0, 0.0, 0.0], [0.7, 0.6, 0.0], [-0.3, 0.2, 0.8]])
    cov = a @ a.T
    s = np.random.default_rng(2).multivariate_normal(mu, cov, size=10_000)
    sigma, y = 0.5, 2.0
    out = pathwise_update(s, [(0, y)], sigma_obs=sigma, seed=4)
    gain = cov[:, 0] / (cov[0, 0] + sigma**2)
    np.testing.assert_allclose(out.mean(axis=0), mu + gain * (y - mu[0]), atol=0.05)
    np.testing.assert_allclose(np.cov(out.T), cov - np.outer(gain, cov[0]), atol=0.05)


def test_pathwise_shrinks_observed_mean_toward_truth(rng):
    s = rng.normal(size=(500, 3))
    out = pathwise_update(s, [(0, 3.0)])
    assert abs(out[:, 0].mean() - 3.0) < abs(s[:, 0].mean() - 3.0)


def test_pathwise_singular_covariance():
    s = np.ones((10, 3))
    with pytest.raises(NumericError, match="sigma_obs"):
        pathwise_update(s, [(0, 1.0)], sigma_obs=0.0, noise=False)


@pytest.mark.parametrize("observed", [[(0, 1.0), (0, 2.0)], [(5, 1.0)]])
def test_pathwise_bad_observations(observed):
    with pytest.raises(InputError):
        pathwise_update(np.zeros((4, 3)), observed)


def test_pathwise_needs_two_paths():
    with pytest.raises(InputError):
        pathwise_update(np.zeros((1, 3)), [(0, 1.0)])


@pytest.fixture(scope="module")
def world():
    return make_cliff_pool(n_items=60, n_series=6, seed=3, n_train_series=3)


def prior_for(pool, seed=0):
    rng = np.random.default_rng(seed)
    return pool.base_predictions + 0.5 * rng.standard_normal((200, len(pool)))


def test_oracle_strategy_finds_the_best_in_one_cycle(world):
    state = dmta_simulate(world.pool, Strategy.ORACLE, 3)
    assert state.max_gap[0] == 0.0


@pytest.mark.parametrize("strategy", ["greedy", "continual_greedy", "continual_emax"])
def test_max_gap_nonincreasing_and_selection_disjoint(world, strategy):
    state = dmta_simulate(world.pool, strategy, 6, posterior=prior_for(world.pool))
    assert all(b <= a for a, b in zip(state.max_gap, state.max_gap[1:]))
    picked = [i for batch in state.selected for i in batch]
    assert len(picked) == len(set(picked)) == 30
    assert all(g >= 0 for g in state.max_gap)


def test_dmta_deterministic(world):
    runs = [dmta_simulate(world.pool, "continual_emax", 4, seed=9, posterior=prior_for(world.pool)) for _ in range(2)]
    assert runs[0].selected == runs[1].selected and runs[0].max_gap == runs[1].max_gap


def test_dmta_stops_on_exhausted_pool():
    pool = SelectionPool(("a", "b", "c"), np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]), np.array([0.0, 1.0, 2.0]))
    state = dmta_simulate(pool, "greedy", 5, b=2)
    assert state.cycle == 2 and state.flags
    assert state.selected == [["c", "b"], ["a"]]


def test_dmta_requires_prior_for_continual(world):
    with pytest.raises(InputError):
        dmta_simulate(world.pool, "continual_greedy", 1)


def test_static_external_strategy(world):
    ext = world.pool.true_y.copy()
    state = dmta_simulate(world.pool, "static_external", 1, external=ext)
    assert state.max_gap == [0.0]
    with pytest.raises(InputError):
        dmta_simulate(world.pool, "static_external", 1, external=ext[:3])


def test_pool_ids_unique():
    with pytest.raises(InputError):
        SelectionPool(("a", "a"), np.zeros((2, 1)), np.zeros(2), np.zeros(2))


def test_cliff_pool_shapes(world):
    assert len(world.pool) == 60 and world.pool.latents.shape == (60, 8)
    assert len(world.train_y) == len(world.train_assays) == 36


def test_cliff_pool_rejects_too_many_training_series():
    with pytest.raises(InputError):
        make_cliff_pool(n_items=20, n_series=4, n_train_series=5)


@pytest.fixture
def greedy_only(monkeypatch):
    import coarsebind.select as sel

    monkeypatch.setattr(sel, "EXACT_LIMIT", 0)


def test_greedy_path_hedges(greedy_only):
    rng = np.random.default_rng(5)
    z = rng.standard_normal((20000, 2))
    s = np.column_stack([1.0 + z[:, 0], 1.0 + z[:, 0], 0.9 + z[:, 1]])
    assert emax_select(s, 2) == [0, 2]


def test_greedy_path_is_near_exhaustive(greedy_only):
    rng = np.random.default_rng(21)
    hits = 0
    for _ in range(50):
        n = int(rng.integers(4, 11))
        b = int(rng.integers(2, 5))
        s = rng.normal(size=(200, n)) @ rng.normal(size=(n, n)) + rng.normal(0, 0.5, n)
        best = max(emax(s, c) for c in itertools.combinations(range(n), b))
        value = emax(s, emax_select(s, b))
        hits += value >= best - 1e-12
    assert hits >= 45


def test_greedy_path_respects_availability(greedy_only, rng):
    s = rng.normal(size=(100, 8))
    picks = emax_select(s, 3, available={1, 2, 5, 7})
    assert len(picks) == 3 and set(picks) <= {1, 2, 5, 7}
