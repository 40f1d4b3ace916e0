from dataclasses import replace

import numpy as np
import pytest
import torch

from coarsebind.complexmodel import SyntheticGenConfig, distance_matrix, generate_synthetic_complex
from coarsebind.distogram import Distogram, PairTypeWeights, expected_distance, structure_loss, structure_loss_tensor, target_distogram
from coarsebind.errors import InputError
from coarsebind.optim import Adam
from coarsebind.pairformer import ComplexTensors, PairformerConfig, StructureModel
from coarsebind.trainer import (
    DESK_SOURCES,
    Example,
    StageConfig,
    SyntheticFamily,
    collate,
    desk_curriculum,
    train,
)

TINY = PairformerConfig(n_layers=1, pair_dim=8, n_heads=2, head_dim=4)


def clean_family(pool_size, seed=0):
    sources = {k: replace(v, feature_noise=(0.0, 0.0), label_jitter=0.0) for k, v in DESK_SOURCES.items()}
    return SyntheticFamily(sources=sources, pool_size=pool_size, seed=seed)


@pytest.fixture(scope="module")
def curriculum_run():
    fam = clean_family(3)
    stages = desk_curriculum(420, crop_tokens=(24, 16, 16), learning_rate=1e-2)
    cfg = PairformerConfig(n_layers=1, pair_dim=16, n_heads=2, head_dim=4)
    return stages, train(stages, fam, seed=0, model_cfg=cfg, heldout=fam.heldout(2))


def test_stage_validation():
    with pytest.raises(InputError):
        StageConfig("s", 0, 16, {"pdb": 1.0})
    with pytest.raises(InputError):
        StageConfig("s", 5, 16, {"pdb": 0.5, "afdb": 0.4})
    with pytest.raises(InputError):
        StageConfig("s", 5, 16, {})
    with pytest.raises(InputError):
        train([])


def test_desk_curriculum_proportions():
    stages = desk_curriculum(1050)
    assert [s.steps for s in stages] == [700, 200, 150]
    assert stages[1].loss_weights == PairTypeWeights(2, 5, 1)
    assert stages[0].loss_weights == stages[2].loss_weights == PairTypeWeights(1, 1, 1)
    for s in stages:
        assert sum(s.data_mix.values()) == pytest.approx(1.0)


def test_collate_masks_padding():
    fam = SyntheticFamily(pool_size=2, seed=1, embedding_dim=32)
    rng = np.random.default_rng(0)
    a, b = fam.draw("pdb", 12, rng), fam.draw("afdb", 20, rng)
    emb, rel, bins, wm, mask, pair = collate([a, b], PairTypeWeights(2, 5, 1))
    n = max(len(a.is_ligand), len(b.is_ligand))
    assert emb.shape[:2] == (2, n)
    m = len(a.is_ligand)
    assert not pair[0, m:].any() and not mask[0, :, m:].any()
    assert not mask[1].diagonal().any()
    # the padded loss equals the per-example weighted loss when only one example is present
    logits = torch.randn(1, m, m, 64, dtype=torch.float64)
    e1, r1, b1, w1, m1, _ = collate([a], PairTypeWeights(2, 5, 1))
    got = structure_loss_tensor(logits, b1, w1, m1).item()
    want = structure_loss(logits[0].numpy(), a.target_bins, PairTypeWeights(2, 5, 1),
                          ~np.eye(m, dtype=bool), a.is_ligand)
    assert got == pytest.approx(want, abs=1e-10)


def test_draw_targets_match_distances():
    fam = SyntheticFamily(pool_size=1, seed=2, embedding_dim=32)
    ex = fam.draw("pdb", 20, np.random.default_rng(3))
    c = fam.pool("pdb")[0]
    keep = fam._crop_indices("pdb", 0, 20)
    np.testing.assert_array_equal(ex.target_bins, target_distogram(distance_matrix(c.coords[keep])))
    assert len(ex.is_ligand) == min(20, len(c))


def test_training_is_deterministic():
    stages = [StageConfig("a", 3, 12, {"pdb": 1.0}, batch_size=2)]
    fam = lambda: SyntheticFamily(pool_size=2, seed=4)
    _, log1 = train(stages, fam(), seed=4, model_cfg=TINY, heldout=fam().heldout(1))
    _, log2 = train(stages, fam(), seed=4, model_cfg=TINY, heldout=fam().heldout(1))
    assert log1.losses == log2.losses and log1.heldout_h_lp == log2.heldout_h_lp


def test_log_lengths(curriculum_run):
    stages, (_, log) = curriculum_run
    assert len(log.losses) == sum(s.steps for s in stages)
    assert log.stage_steps == [s.steps for s in stages]
    assert len(log.heldout_h_lp) == len(stages) + 1
    assert len(log.stage_losses(1)) == stages[1].steps


def test_final_loss_below_quarter_of_initial(curriculum_run):
    _, (_, log) = curriculum_run
    losses = np.array(log.losses)
    assert losses[-30:].mean() < 0.25 * losses[:10].mean()


def test_moving_average_is_nonincreasing(curriculum_run):
    _, (_, log) = curriculum_run
    ma = np.convolve(log.losses, np.ones(200) / 200, mode="valid")
    violations = ma[200:] > ma[:-200]
    assert violations.mean() <= 0.05


def test_final_stage_reduces_heldout_entropy(curriculum_run):
    _, (_, log) = curriculum_run
    before, after = log.stage_h_lp(2)
    assert after < before


def test_single_complex_overfit():
    c = generate_synthetic_complex(SyntheticGenConfig(n_ligand=4, n_protein=12, embedding_dim=8, seed=2))
    d = distance_matrix(c.coords)
    model = StructureModel(PairformerConfig(n_layers=1, pair_dim=16, n_heads=2, head_dim=4, embedding_dim=8))
    x = ComplexTensors.from_complex(c)
    ex = Example(c.embeddings, x.relpos.numpy(), target_distogram(d), c.is_ligand)
    emb, rel, bins, wm, mask, _ = collate([ex], PairTypeWeights())
    params = list(model.parameters())
    opt = Adam([p.data for p in params], lr=1e-2)
    for _ in range(400):
        loss = structure_loss_tensor(model(emb, rel)[0], bins, wm, mask)
        model.zero_grad()
        loss.backward()
        with torch.no_grad():
            opt.step([p.grad for p in params])
    logits, _ = model.predict(c)
    dist = Distogram.from_logits(logits, [t.kind for t in c.tokens])
    in_range = (d >= 2) & (d < 22) & ~np.eye(len(c), dtype=bool)
    assert np.abs(expected_distance(dist.probs) - d)[in_range].mean() < 0.5
