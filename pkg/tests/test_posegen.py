import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsebind.complexmodel import SyntheticGenConfig, TokenKind, distance_matrix, generate_synthetic_complex
from coarsebind.distogram import DEFAULT_BINS, Distogram, delta_distogram
from coarsebind.errors import InputError, NumericError
from coarsebind.metrics import kabsch_align
from coarsebind.posegen import (
    ConvergenceMonitor,
    OptConfig,
    PoseSample,
    build_reference,
    generate_pose,
    optimization_loss,
    optimize_pose,
    select_best,
)

from conftest import random_rotation, recover_pose

TETRA = 3.0 / math.sqrt(8) * np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)


def loss_oracle(x, ref):
    m = len(ref)
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                dij = math.dist(x[i], x[j])
                total += (dij - ref[i][j]) ** 2
    return total / (m * (m - 1))


def mirrored_rmsd(a, b):
    best = np.inf
    for x in (a, a * np.array([-1.0, 1.0, 1.0])):
        al = kabsch_align(x, b)
        best = min(best, float(np.sqrt(np.mean(np.sum((al.apply(x) - b) ** 2, axis=1)))))
    return best


class TestLoss:
    def test_exact_realization(self, rng):
        x = rng.standard_normal((6, 3))
        assert optimization_loss(x, distance_matrix(x)) == pytest.approx(0.0, abs=1e-24)

    def test_two_points(self):
        assert optimization_loss([[0, 0, 0], [3, 0, 0]], [[0, 5], [5, 0]]) == pytest.approx(4.0)

    def test_double_loop_oracle(self, rng):
        x = rng.standard_normal((6, 3)) * 4
        ref = distance_matrix(rng.standard_normal((6, 3)) * 4)
        assert optimization_loss(x, ref) == pytest.approx(loss_oracle(x, ref), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_rigid_and_reflection_invariance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((7, 3)) * 3
        ref = distance_matrix(rng.standard_normal((7, 3)) * 3)
        base = optimization_loss(x, ref)
        moved = x @ random_rotation(rng).T * np.array([-1, 1, 1]) + rng.standard_normal(3) * 10
        assert optimization_loss(moved, ref) == pytest.approx(base, rel=1e-9, abs=1e-12)

    def test_gradient_matches_finite_differences(self, rng):
        from coarsebind.posegen import _loss_and_grad

        x = rng.standard_normal((1, 5, 3))
        ref = distance_matrix(rng.standard_normal((5, 3)) * 2)
        _, grad = _loss_and_grad(x, ref, np.ones((5, 5)))
        h = 1e-6
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            up, down = x.copy(), x.copy()
            up[idx] += h
            down[idx] -= h
            num[idx] = (_loss_and_grad(up, ref, np.ones((5, 5)))[0][0] - _loss_and_grad(down, ref, np.ones((5, 5)))[0][0]) / (2 * h)
        np.testing.assert_allclose(grad, num, atol=1e-7)

    def test_bad_reference(self):
        with pytest.raises(InputError):
            optimization_loss(np.zeros((2, 3)), [[0, 1], [2, 0]])
        with pytest.raises(InputError):
            optimization_loss(np.zeros((3, 3)), np.zeros((2, 2)))


class TestReference:
    def test_delta_distogram_reference(self):
        c = generate_synthetic_complex(SyntheticGenConfig(n_ligand=6, n_protein=30, seed=4))
        true = distance_matrix(c.coords)
        ref = build_reference(delta_distogram(true, [t.kind for t in c.tokens]))
        idx = list(ref.token_indices)
        sub = true[np.ix_(idx, idx)]
        interior = (sub >= 2) & (sub < 22)
        assert np.all(np.abs(ref.matrix - sub)[interior] <= DEFAULT_BINS.width / 2 + 1e-9)
        assert np.allclose(ref.matrix, ref.matrix.T)
        assert ref.ligand == tuple(range(6))
        pocket_true = [j for j in range(6, len(c)) if (true[:6, j] < 15).any()]
        assert ref.matrix.shape == (6 + len(ref.pocket),) * 2
        assert abs(len(ref.pocket) - len(pocket_true)) <= 3

    def test_empty_pocket_flag(self):
        x = np.array([[0, 0, 0], [1.5, 0, 0], [40, 0, 0]], dtype=float)
        d = delta_distogram(distance_matrix(x), [TokenKind.LIGAND, TokenKind.LIGAND, TokenKind.PROTEIN])
        ref = build_reference(d)
        assert ref.pocket == () and ref.flags

    def test_no_ligand(self):
        d = Distogram(np.full((2, 2, 64), 1 / 64), [TokenKind.PROTEIN] * 2)
        with pytest.raises(InputError):
            build_reference(d)


class TestOptimize:
    def test_two_points(self):
        samples = optimize_pose(np.array([[0.0, 7.0], [7.0, 0.0]]), OptConfig(n_samples=3, tol=1e-8))
        for s in samples:
            assert s.converged
            assert np.linalg.norm(s.coords[0] - s.coords[1]) == pytest.approx(7.0, abs=1e-2)

    def test_tetrahedron(self):
        samples = optimize_pose(distance_matrix(TETRA), OptConfig(tol=1e-8))
        k, best = select_best(samples)
        assert mirrored_rmsd(best.coords, TETRA) < 1e-2
        assert all(best.final_loss <= s.final_loss for s in samples)

    def test_realizable_reference_reaches_low_loss(self, rng):
        x = rng.standard_normal((40, 3)) * 6
        samples = optimize_pose(distance_matrix(x), OptConfig(tol=1e-6, seed=2))
        assert select_best(samples)[1].final_loss < 1e-4

    def test_full_pipeline_40_points(self):
        c = generate_synthetic_complex(SyntheticGenConfig(n_ligand=10, n_protein=60, pocket_fraction=0.5, seed=12))
        rmsd, ref, _, _ = recover_pose(c, OptConfig(seed=1))
        assert len(ref.token_indices) <= 41
        assert rmsd < 0.5

    def test_per_sample_seeds_are_batch_independent(self):
        ref = distance_matrix(TETRA)
        many = optimize_pose(ref, OptConfig(n_samples=4, seed=10))
        one = optimize_pose(ref, OptConfig(n_samples=1, seed=12))
        np.testing.assert_array_equal(many[2].coords, one[0].coords)

    def test_deterministic(self):
        ref = distance_matrix(TETRA * 2)
        a = optimize_pose(ref, OptConfig(n_samples=2, seed=5))
        b = optimize_pose(ref, OptConfig(n_samples=2, seed=5))
        assert all(np.array_equal(x.coords, y.coords) for x, y in zip(a, b))

    def test_max_iters_stop_is_not_converged(self):
        samples = optimize_pose(distance_matrix(TETRA * 3), OptConfig(n_samples=1, max_iters=3, tol=1e-12))
        assert samples[0].iters == 3 and not samples[0].converged

    def test_non_finite_weights_fail_samples(self):
        w = np.full((3, 3), np.inf)
        samples = optimize_pose(distance_matrix(TETRA[:3]), OptConfig(n_samples=2), weights=w)
        assert all(s.failed and s.final_loss == math.inf for s in samples)
        with pytest.raises(NumericError):
            select_best(samples)

    def test_config_validation(self):
        with pytest.raises(InputError):
            OptConfig(learning_rate=0)
        with pytest.raises(InputError):
            OptConfig(n_samples=0)

    def test_generate_pose_needs_two_points(self):
        d = delta_distogram(np.zeros((1, 1)), [TokenKind.LIGAND])
        with pytest.raises(InputError):
            generate_pose(d)


class TestSelection:
    def _sample(self, loss, failed=False):
        return PoseSample(np.zeros((2, 3)), loss, 1, True, failed)

    def test_lowest_loss(self):
        assert select_best([self._sample(v) for v in (0.4, 0.1, 0.2)])[0] == 1

    def test_single_and_ties(self):
        assert select_best([self._sample(0.3)])[0] == 0
        assert select_best([self._sample(0.3), self._sample(0.3)])[0] == 0

    def test_failed_skipped(self):
        samples = [self._sample(math.inf, failed=True), self._sample(5.0)]
        assert select_best(samples)[0] == 1
        with pytest.raises(InputError):
            select_best([])


class TestConvergenceMonitor:
    @pytest.mark.parametrize("patience", [1, 5, 20])
    def test_constant_sequence(self, patience):
        mon = ConvergenceMonitor(1e-3, patience)
        calls = [mon.update(1.0) for _ in range(patience + 1)]
        # the first call is the baseline; the patience-th unchanged step stops
        assert calls == [False] * patience + [True]

    def test_large_change_resets(self):
        mon = ConvergenceMonitor(1e-3, 3)
        seq = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]
        assert [mon.update(v) for v in seq] == [False] * 6 + [True]
