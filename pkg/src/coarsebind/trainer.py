"""Staged distogram training on synthetic complexes.

Each data source is a family of synthetic complexes.  A draw picks a complex
from the source's pool, rotates it at random, re-embeds the tokens with a fresh
feature-noise level, and crops it around the ligand to the stage's token
budget.  Sources with ``label_jitter`` perturb the coordinates that define
the distance targets, which imitates the noisier labels of distilled data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .complexmodel import (
    Geometry,
    SyntheticGenConfig,
    TokenKind,
    distance_matrix,
    embed_tokens,
    generate_synthetic_complex,
)
from .distogram import PairTypeWeights, Distogram, aggregate_entropy, structure_loss_tensor, target_distogram
from .errors import InputError
from .optim import Adam, DivergenceGuard
from .pairformer import PairformerConfig, StructureModel, relpos_classes
from .pocket import POCKET_CUTOFF, crop, pocket_residues


@dataclass(frozen=True)
class SourceConfig:
    geometry: Geometry = Geometry.FOLDED_BLOB
    n_ligand: tuple = (5, 12)
    n_protein: tuple = (30, 50)
    pocket_fraction: tuple = (0.3, 0.7)
    feature_noise: tuple = (0.0, 3.0)
    label_jitter: float = 0.0


DESK_SOURCES = {
    "pdb": SourceConfig(),
    "bindingdb": SourceConfig(label_jitter=1.0),
    "afdb": SourceConfig(Geometry.HELIX, n_ligand=(1, 4), n_protein=(36, 56)),
}


@dataclass(frozen=True)
class StageConfig:
    name: str
    steps: int
    crop_tokens: int
    data_mix: dict
    loss_weights: PairTypeWeights = PairTypeWeights()
    learning_rate: float = 1e-3
    batch_size: int = 4

    def __post_init__(self):
        if self.steps < 1 or self.crop_tokens < 2 or self.batch_size < 1:
            raise InputError("steps >= 1, crop_tokens >= 2 and batch_size >= 1 required")
        if not self.data_mix or any(p < 0 for p in self.data_mix.values()):
            raise InputError("data_mix must be a non-empty map of non-negative probabilities")
        if abs(sum(self.data_mix.values()) - 1.0) > 1e-9:
            raise InputError("data_mix probabilities must sum to 1")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be positive")


def desk_curriculum(total_steps=630, crop_tokens=(36, 24, 24), batch_size=4, learning_rate=1e-3):
    """Three stages with step counts in the 70:20:15 ratio of the reference protocol."""
    split = np.array([70, 20, 15]) / 105
    steps = [max(1, int(round(total_steps * f))) for f in split]
    return [
        StageConfig("stage1", steps[0], crop_tokens[0], {"pdb": 0.45, "afdb": 0.25, "bindingdb": 0.30},
                    PairTypeWeights(1, 1, 1), learning_rate, batch_size),
        StageConfig("stage2", steps[1], crop_tokens[1], {"pdb": 0.5, "bindingdb": 0.5},
                    PairTypeWeights(2, 5, 1), learning_rate, batch_size),
        StageConfig("stage3", steps[2], crop_tokens[2], {"pdb": 1.0},
                    PairTypeWeights(1, 1, 1), learning_rate, batch_size),
    ]


def finetune_stage(steps=5000, learning_rate=1e-5, crop_tokens=24, data_mix=None):
    """Low learning-rate continuation stage for specialized data."""
    return StageConfig("finetune", steps, crop_tokens, data_mix or {"pdb": 1.0},
                       PairTypeWeights(1, 1, 1), learning_rate)


@dataclass
class Example:
    embeddings: np.ndarray
    relpos: np.ndarray
    target_bins: np.ndarray
    is_ligand: np.ndarray


class SyntheticFamily:
    """Pools of synthetic complexes per source plus a disjoint held-out set."""

    def __init__(self, sources=None, pool_size=1000, seed=0, embedding_dim=32):
        self.sources = dict(DESK_SOURCES if sources is None else sources)
        self.pool_size = pool_size
        self.seed = seed
        self.embedding_dim = embedding_dim
        self._pools = {}
        self._crops = {}

    def _make(self, src_cfg, rng, complex_seed, name):
        cfg = SyntheticGenConfig(
            n_ligand=int(rng.integers(src_cfg.n_ligand[0], src_cfg.n_ligand[1] + 1)),
            n_protein=int(rng.integers(src_cfg.n_protein[0], src_cfg.n_protein[1] + 1)),
            embedding_dim=self.embedding_dim,
            geometry=src_cfg.geometry,
            seed=complex_seed,
            pocket_fraction=float(rng.uniform(*src_cfg.pocket_fraction)),
            feature_noise=float(rng.uniform(*src_cfg.feature_noise)),
        )
        return generate_synthetic_complex(cfg, complex_id=f"{name}-{complex_seed}")

    def pool(self, source):
        if source not in self._pools:
            if source not in self.sources:
                raise InputError(f"unknown data source {source!r}")
            src_cfg = self.sources[source]
            tag = sorted(self.sources).index(source)
            rng = np.random.default_rng([self.seed, 11, tag])
            self._pools[source] = [
                self._make(src_cfg, rng, int(rng.integers(2**62)), source) for _ in range(self.pool_size)
            ]
        return self._pools[source]

    def heldout(self, n=16, source="pdb"):
        src_cfg = self.sources[source]
        rng = np.random.default_rng([self.seed, 97])
        return [self._make(src_cfg, rng, int(rng.integers(2**62)), f"heldout-{source}") for _ in range(n)]

    def _crop_indices(self, source, k, budget):
        key = (source, k, budget)
        if key not in self._crops:
            c = self.pool(source)[k]
            d = distance_matrix(c.coords)
            pocket = pocket_residues(d, c.is_ligand, POCKET_CUTOFF)
            self._crops[key] = np.array(crop(c, budget, pocket, d).kept_token_indices)
        return self._crops[key]

    def draw(self, source, crop_tokens, rng):
        src_cfg = self.sources[source]
        k = int(rng.integers(len(self.pool(source))))
        c = self.pool(source)[k]
        keep = self._crop_indices(source, k, crop_tokens)
        coords = c.coords @ _rotation(rng).T
        noise = float(rng.uniform(*src_cfg.feature_noise))
        kinds = [t.kind for t in c.tokens]
        index = [t.residue_index if t.kind is TokenKind.PROTEIN else i for i, t in enumerate(c.tokens)]
        emb = embed_tokens(kinds, index, coords, c.embedding_dim, noise, rng)
        label = coords
        if src_cfg.label_jitter > 0:
            label = coords + src_cfg.label_jitter * rng.standard_normal(coords.shape)
        bins = target_distogram(distance_matrix(label[keep]))
        sub = c.subset(keep)
        relpos = relpos_classes(sub.is_ligand, [t.chain_id for t in sub.tokens], [t.residue_index for t in sub.tokens])
        return Example(emb[keep], relpos, bins, sub.is_ligand)


def _rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def collate(examples, weights):
    """Pad a list of examples to a common token count; returns torch tensors."""
    n = max(len(e.is_ligand) for e in examples)
    b = len(examples)
    e_dim = examples[0].embeddings.shape[1]
    emb = np.zeros((b, n, e_dim))
    rel = np.zeros((b, n, n), dtype=np.int64)
    bins = np.ones((b, n, n), dtype=np.int64)
    wm = np.zeros((b, n, n))
    valid = np.zeros((b, n), dtype=bool)
    for k, ex in enumerate(examples):
        m = len(ex.is_ligand)
        emb[k, :m] = ex.embeddings
        rel[k, :m, :m] = ex.relpos
        bins[k, :m, :m] = ex.target_bins
        wm[k, :m, :m] = weights.matrix(ex.is_ligand)
        valid[k, :m] = True
    pair = valid[:, :, None] & valid[:, None, :]
    loss_mask = pair & ~np.eye(n, dtype=bool)[None]
    return (
        torch.as_tensor(emb),
        torch.as_tensor(rel),
        torch.as_tensor(bins),
        torch.as_tensor(wm),
        torch.as_tensor(loss_mask, dtype=torch.float64),
        torch.as_tensor(pair),
    )


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    stage_names: list = field(default_factory=list)
    stage_steps: list = field(default_factory=list)
    heldout_h_lp: list = field(default_factory=list)

    def stage_h_lp(self, k):
        """Held-out mean H_LP (before, after) stage ``k``."""
        return self.heldout_h_lp[k], self.heldout_h_lp[k + 1]

    def stage_losses(self, k):
        start = sum(self.stage_steps[:k])
        return self.losses[start : start + self.stage_steps[k]]


def heldout_h_lp(model, complexes):
    """Mean H_LP over complexes, using each complex's true 15 A pocket."""
    values = []
    for c in complexes:
        logits, _ = model.predict(c)
        d = Distogram.from_logits(logits, [t.kind for t in c.tokens])
        pocket = pocket_residues(distance_matrix(c.coords), c.is_ligand)
        report = aggregate_entropy(d, pocket)
        if report.H_LP is not None:
            values.append(report.H_LP)
    return float(np.mean(values)) if values else math.nan


def train(stages, family=None, seed=0, model_cfg=None, heldout=None, divergence_factor=10.0,
          divergence_window=100, model=None):
    """Train a structure model through ``stages``; returns ``(model, TrainLog)``.

    Adam moments carry across stages while the learning rate follows each
    stage.  Training aborts with ``DivergenceError`` once the loss has stayed
    above ``divergence_factor`` times its early level for
    ``divergence_window`` consecutive steps.
    """
    if not stages:
        raise InputError("at least one stage is required")
    family = family or SyntheticFamily(seed=seed)
    if model is None:
        cfg = replace(model_cfg or PairformerConfig(embedding_dim=family.embedding_dim), seed=seed)
        model = StructureModel(cfg)
    held = family.heldout() if heldout is None else heldout
    rng = np.random.default_rng([seed, 5])
    params = list(model.parameters())
    opt = Adam([p.data for p in params])
    log = TrainLog()
    log.heldout_h_lp.append(heldout_h_lp(model, held))
    guard = DivergenceGuard(divergence_factor, divergence_window, what="structure loss")
    for stage in stages:
        log.stage_names.append(stage.name)
        log.stage_steps.append(stage.steps)
        opt.lr = stage.learning_rate
        sources = sorted(stage.data_mix)
        probs = np.array([stage.data_mix[s] for s in sources])
        for _ in range(stage.steps):
            picks = rng.choice(len(sources), size=stage.batch_size, p=probs)
            batch = [family.draw(sources[k], stage.crop_tokens, rng) for k in picks]
            emb, rel, bins, wm, mask, pair = collate(batch, stage.loss_weights)
            z = model.trunk(model.init(emb, rel), pair)
            loss = structure_loss_tensor(model.head(z), bins, wm, mask)
            model.zero_grad()
            loss.backward()
            with torch.no_grad():
                opt.step([p.grad for p in params])
            value = float(loss.detach())
            log.losses.append(value)
            guard.update(value)
        log.heldout_h_lp.append(heldout_h_lp(model, held))
    return model, log
