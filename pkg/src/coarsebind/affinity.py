"""Affinity heads on frozen structural features.

A small masked pairformer reads the frozen pair latents, distance-bin
probabilities and token embeddings of a ligand + pocket context, mean-pools the
non protein-protein pairs into a complex latent ``g``, and predicts a binding
probability and a log10 affinity from it.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .complexmodel import SyntheticGenConfig, distance_matrix, generate_synthetic_complex
from .distogram import DEFAULT_BINS, N_BINS, Distogram, aggregate_entropy
from .errors import CoarseBindWarning, FormatError, InputError
from .optim import Adam, DivergenceGuard
from .pairformer import Pairformer, PairformerConfig, StructureModel, load_state, read_checkpoint, save_checkpoint
from .pocket import POCKET_CUTOFF, pocket_residues

CONTEXT_LIMIT = 200
POTENCY_CUTOFF = 6.0  # log10 units: y > 6 means better than 1 uM
ENTROPY_CUTOFF = 0.7


@dataclass(frozen=True)
class AffinityConfig:
    n_layers: int = 6
    pair_dim: int = 16
    n_heads: int = 4
    head_dim: int = 4
    latent_dim: int = 32
    embedding_dim: int = 32
    hidden: int = 32
    context_limit: int = CONTEXT_LIMIT
    seed: int = 0


@dataclass
class AffinityInputs:
    """Frozen per-complex features restricted to ligand + pocket tokens."""

    pair_latents: np.ndarray
    bin_probs: np.ndarray
    token_embeddings: np.ndarray
    ligand_global: np.ndarray
    is_ligand: np.ndarray

    def __post_init__(self):
        n = len(self.is_ligand)
        if self.pair_latents.shape[:2] != (n, n) or self.bin_probs.shape != (n, n, N_BINS):
            raise InputError("pair latents / bin probabilities do not match the token count")
        if self.token_embeddings.shape[0] != n:
            raise InputError("token embeddings do not match the token count")

    @property
    def n_tokens(self):
        return len(self.is_ligand)

    @property
    def pocket_mask(self):
        """True for pairs the affinity trunk may use (everything except protein-protein)."""
        lig = np.asarray(self.is_ligand, dtype=bool)
        return lig[:, None] | lig[None, :]

    @classmethod
    def from_structure(cls, c, model, ligand_global=None, bin_probs=None, pocket_cutoff=POCKET_CUTOFF):
        """Run the frozen structure model and keep ligand + predicted-pocket tokens.

        ``bin_probs`` may replace the model's own distogram (e.g. a smoothed
        ground-truth distogram when the structure model is untrained).
        """
        logits, z = model.predict(c)
        probs = Distogram.from_logits(logits, [t.kind for t in c.tokens]).probs
        if bin_probs is not None:
            probs = np.asarray(bin_probs, dtype=np.float64)
        expected = probs @ DEFAULT_BINS.centers
        lig = c.is_ligand
        keep = list(np.flatnonzero(lig)) + pocket_residues(expected, lig, pocket_cutoff)
        keep = sorted(keep)
        emb = c.embeddings
        if ligand_global is None:
            ligand_global = emb[lig].mean(axis=0)
        return cls(
            z[np.ix_(keep, keep)],
            probs[np.ix_(keep, keep)],
            emb[keep],
            np.asarray(ligand_global, dtype=np.float64),
            lig[keep],
        )


def _mlp(c, hidden):
    return nn.Sequential(nn.Linear(c, hidden), nn.GELU(), nn.Linear(hidden, 1))


def _pad(inputs):
    """Stack a list of ``AffinityInputs`` into padded tensors."""
    n = max(x.n_tokens for x in inputs)
    b = len(inputs)
    first = inputs[0]
    lat = np.zeros((b, n, n, first.pair_latents.shape[-1]))
    bins = np.zeros((b, n, n, N_BINS))
    emb = np.zeros((b, n, first.token_embeddings.shape[-1]))
    glob = np.stack([x.ligand_global for x in inputs])
    lig = np.zeros((b, n), dtype=bool)
    valid = np.zeros((b, n), dtype=bool)
    for k, x in enumerate(inputs):
        m = x.n_tokens
        lat[k, :m, :m] = x.pair_latents
        bins[k, :m, :m] = x.bin_probs
        emb[k, :m] = x.token_embeddings
        lig[k, :m] = x.is_ligand
        valid[k, :m] = True
    t = torch.as_tensor
    return t(lat), t(bins), t(emb), t(glob), t(lig), t(valid)


class AffinityModel(nn.Module):
    def __init__(self, cfg=AffinityConfig()):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        c = cfg.pair_dim
        self.cond_latent = nn.Linear(cfg.latent_dim, c)
        self.cond_bins = nn.Linear(N_BINS, c, bias=False)
        self.proj_a = nn.Linear(cfg.embedding_dim, c, bias=False)
        self.proj_b = nn.Linear(cfg.embedding_dim, c, bias=False)
        self.cond_global = nn.Linear(cfg.embedding_dim, c, bias=False)
        trunk_cfg = PairformerConfig(
            n_layers=cfg.n_layers, n_heads=cfg.n_heads, pair_dim=c, head_dim=cfg.head_dim,
            embedding_dim=cfg.embedding_dim, seed=cfg.seed,
        )
        self.trunk = Pairformer(trunk_cfg)
        self.f_cls = _mlp(c, cfg.hidden)
        self.f_reg = _mlp(c, cfg.hidden)
        self.double()

    def encode(self, latents, bins, emb, glob, is_lig, valid):
        """Complex latent ``g`` for padded batch tensors."""
        if latents.shape[-2] > self.cfg.context_limit:
            raise InputError(f"context of {latents.shape[-2]} tokens exceeds limit {self.cfg.context_limit}")
        latents = latents.detach()
        bins = bins.detach()
        z = self.cond_latent(latents) + self.cond_bins(bins)
        z = z + self.proj_a(emb).unsqueeze(-2) + self.proj_b(emb).unsqueeze(-3)
        ll = (is_lig.unsqueeze(-1) & is_lig.unsqueeze(-2)).unsqueeze(-1).to(z.dtype)
        z = z + ll * self.cond_global(glob)[:, None, None, :]
        pair_valid = valid.unsqueeze(-1) & valid.unsqueeze(-2)
        mask = pair_valid & (is_lig.unsqueeze(-1) | is_lig.unsqueeze(-2))
        z = self.trunk(z, mask)
        m = mask.unsqueeze(-1).to(z.dtype)
        return (z * m).sum(dim=(-2, -3)) / m.sum(dim=(-2, -3))

    def forward(self, inputs):
        """``(bind_logit, y_hat, g)`` tensors for a list of ``AffinityInputs``."""
        g = self.encode(*_pad(inputs))
        return self.f_cls(g).squeeze(-1), self.f_reg(g).squeeze(-1), g

    def zero_heads(self):
        with torch.no_grad():
            for head in (self.f_cls, self.f_reg):
                head[-1].weight.zero_()
                head[-1].bias.zero_()


@dataclass(frozen=True)
class AffinityOutput:
    p_bind: float
    y_hat: float
    g: np.ndarray


def affinity_forward(inputs, model):
    """Predictions for one complex's frozen features."""
    with torch.no_grad():
        logit, y, g = model([inputs])
    return AffinityOutput(float(torch.sigmoid(logit[0])), float(y[0]), g[0].numpy())


def predict_batch(model, inputs, chunk=16):
    """Arrays ``(p_bind, y_hat, G)`` over many complexes."""
    ps, ys, gs = [], [], []
    with torch.no_grad():
        for k in range(0, len(inputs), chunk):
            logit, y, g = model(inputs[k : k + chunk])
            ps.append(torch.sigmoid(logit).numpy())
            ys.append(y.numpy())
            gs.append(g.numpy())
    return np.concatenate(ps), np.concatenate(ys), np.concatenate(gs)


# --------------------------------------------------------------------------
# losses: accept tensors (returning tensors) or array-likes (returning floats)


def _wrap(fn):
    def inner(*args, **kwargs):
        if any(isinstance(a, torch.Tensor) for a in args):
            return fn(*args, **kwargs)
        tensors = [torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in args]
        return float(fn(*tensors, **kwargs))

    inner.__name__ = fn.__name__
    inner.__doc__ = fn.__doc__
    return inner


@_wrap
def focal_loss(p, y, alpha=0.25, gamma=2.0):
    """Mean focal loss -a_t (1 - p_t)^gamma log p_t; ``alpha=None`` drops the class weight."""
    p = p.clamp(1e-7, 1 - 1e-7)
    pos = y > 0.5
    p_t = torch.where(pos, p, 1 - p)
    a_t = 1.0 if alpha is None else torch.where(pos, torch.full_like(p, alpha), torch.full_like(p, 1 - alpha))
    return (-a_t * (1 - p_t) ** gamma * torch.log(p_t)).mean()


def _huber(r, delta):
    a = r.abs()
    return torch.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))


@_wrap
def huber_loss(y, y_hat, delta=0.5):
    """Mean Huber loss of the residual ``y_hat - y``."""
    return _huber(y_hat - y, delta).mean()


@_wrap
def relative_affinity_loss(y, y_hat, delta=0.5):
    """Huber loss of predicted vs. true differences over all ordered pairs i != j."""
    n = y.shape[0]
    if n < 2:
        warnings.warn("relative loss needs >= 2 records; returning 0", CoarseBindWarning, stacklevel=3)
        return y_hat.sum() * 0.0
    dy = y[:, None] - y[None, :]
    dh = y_hat[:, None] - y_hat[None, :]
    off = ~torch.eye(n, dtype=torch.bool)
    return _huber((dh - dy)[off], delta).mean()


# --------------------------------------------------------------------------
# records, prefilter and sampler


@dataclass(frozen=True)
class AssayRecord:
    assay_id: str
    complex_id: str
    label_kind: str
    value: float
    h_lp: float | None = None

    def __post_init__(self):
        if self.label_kind not in ("continuous", "binary"):
            raise InputError("label_kind must be 'continuous' or 'binary'")
        if self.label_kind == "binary" and self.value not in (0, 1):
            raise InputError("binary labels must be 0 or 1")
        if not math.isfinite(self.value):
            raise InputError("label value must be finite")


_RECORD_KEYS = {"assay_id", "complex_id", "label_kind", "value", "h_lp"}


def encode_records(records):
    lines = [
        json.dumps({"assay_id": r.assay_id, "complex_id": r.complex_id, "label_kind": r.label_kind,
                    "value": r.value, "h_lp": r.h_lp}, separators=(",", ":"))
        for r in records
    ]
    return ("\n".join(lines) + "\n").encode() if lines else b""


def decode_records(data):
    from .complexmodel import load_json_document

    out = []
    offset = 0
    for line in bytes(data).split(b"\n"):
        if line.strip():
            try:
                doc = load_json_document(line)
            except FormatError as exc:
                raise FormatError(f"bad record: {exc}", offset=offset + (exc.offset or 0)) from None
            if not isinstance(doc, dict) or not set(doc) <= _RECORD_KEYS or set(doc) < _RECORD_KEYS - {"h_lp"}:
                raise FormatError("record keys must be assay_id, complex_id, label_kind, value[, h_lp]", offset=offset)
            try:
                h = doc.get("h_lp")
                if h is not None and (isinstance(h, bool) or not isinstance(h, (int, float))):
                    raise InputError("h_lp must be a number or null")
                if isinstance(doc["value"], bool) or not isinstance(doc["value"], (int, float)):
                    raise InputError("value must be a number")
                out.append(AssayRecord(str(doc["assay_id"]), str(doc["complex_id"]), doc["label_kind"],
                                       float(doc["value"]), None if h is None else float(h)))
            except (InputError, TypeError) as exc:
                raise FormatError(str(exc), offset=offset) from None
        offset += len(line) + 1
    return out


def prefilter(records):
    """Drop potent (y > 6) records whose complexes have H_LP > 0.7.

    Returns ``(kept, flags)``; records without an H_LP value are kept and flagged.
    """
    kept, flags = [], []
    for r in records:
        if r.h_lp is None:
            flags.append(f"{r.complex_id}: missing H_LP, kept")
            kept.append(r)
        elif r.label_kind == "continuous" and r.value > POTENCY_CUTOFF and r.h_lp > ENTROPY_CUTOFF:
            continue
        else:
            kept.append(r)
    return kept, flags


@dataclass(frozen=True)
class Batch:
    assay_id: str
    records: tuple
    flags: tuple = ()


def _by_assay(records, kind):
    groups = {}
    for r in records:
        if r.label_kind == kind:
            groups.setdefault(r.assay_id, []).append(r)
    return groups


def sample_batch(records, kind, rng, size=5):
    """Draw one assay uniformly, then its records.

    ``kind="quantitative"`` takes ``size`` records without replacement (all of
    them, flagged, when the assay is smaller).  ``kind="binary"`` takes one
    positive and ``size - 1`` negatives from an assay that has enough of both.
    """
    rng = np.random.default_rng(rng)
    if kind == "quantitative":
        groups = _by_assay(records, "continuous")
        if not groups:
            raise InputError("no quantitative records")
        assays = sorted(groups)
        a = assays[int(rng.integers(len(assays)))]
        pool = groups[a]
        if len(pool) < size:
            return Batch(a, tuple(pool), (f"assay {a} has only {len(pool)} records",))
        pick = rng.choice(len(pool), size=size, replace=False)
        return Batch(a, tuple(pool[k] for k in pick))
    if kind == "binary":
        groups = _by_assay(records, "binary")
        eligible = sorted(
            a for a, rs in groups.items()
            if sum(r.value == 1 for r in rs) >= 1 and sum(r.value == 0 for r in rs) >= size - 1
        )
        if not eligible:
            raise InputError(f"no binary assay with >= 1 positive and >= {size - 1} negatives")
        a = eligible[int(rng.integers(len(eligible)))]
        pos = [r for r in groups[a] if r.value == 1]
        neg = [r for r in groups[a] if r.value == 0]
        p = pos[int(rng.integers(len(pos)))]
        ns = rng.choice(len(neg), size=size - 1, replace=False)
        return Batch(a, (p,) + tuple(neg[k] for k in ns))
    raise InputError("kind must be 'quantitative' or 'binary'")


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class LossWeights:
    binary: float = 1.0
    absolute: float = 1.0
    relative: float = 2.0


@dataclass
class AffinityHistory:
    losses: list = field(default_factory=list)


def train_affinity(records, features, model=None, seed=0, loss_weights=LossWeights(), steps=300,
                   learning_rate=1e-3, divergence_factor=10.0, divergence_window=100):
    """Joint binary/absolute/relative training on frozen features.

    ``features`` maps complex ids to ``AffinityInputs``.  Each step draws one
    quantitative and one binary batch when the data has that kind.
    """
    model = model or AffinityModel(AffinityConfig(seed=seed))
    rng = np.random.default_rng([seed, 23])
    has_q = any(r.label_kind == "continuous" for r in records)
    has_b = any(r.label_kind == "binary" for r in records)
    if not (has_q or has_b):
        raise InputError("no training records")
    params = list(model.parameters())
    opt = Adam([p.data for p in params], lr=learning_rate)
    hist = AffinityHistory()
    guard = DivergenceGuard(divergence_factor, divergence_window, what="affinity loss")
    for _ in range(steps):
        loss = torch.zeros((), dtype=torch.float64)
        if has_q:
            batch = sample_batch(records, "quantitative", rng)
            _, y_hat, _ = model([features[r.complex_id] for r in batch.records])
            y = torch.tensor([r.value for r in batch.records], dtype=torch.float64)
            loss = loss + loss_weights.absolute * huber_loss(y, y_hat)
            if len(batch.records) >= 2:
                loss = loss + loss_weights.relative * relative_affinity_loss(y, y_hat)
        if has_b:
            batch = sample_batch(records, "binary", rng)
            logit, _, _ = model([features[r.complex_id] for r in batch.records])
            y = torch.tensor([r.value for r in batch.records], dtype=torch.float64)
            loss = loss + loss_weights.binary * focal_loss(torch.sigmoid(logit), y)
        model.zero_grad()
        loss.backward()
        with torch.no_grad():
            opt.step([p.grad for p in params])
        value = float(loss.detach())
        hist.losses.append(value)
        guard.update(value)
    return model, hist


# --------------------------------------------------------------------------
# synthetic affinity data


def smoothed_distogram(coords, sigma=1.0):
    """Bin probabilities of a Gaussian blur (width ``sigma``) around true distances."""
    d = distance_matrix(coords)
    centers = DEFAULT_BINS.centers
    logits = -0.5 * ((d[..., None] - centers) / sigma) ** 2
    logits -= logits.max(-1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(-1, keepdims=True)


def _contact_fraction(coords, is_lig, cutoff=8.0):
    d = distance_matrix(coords)
    block = d[np.ix_(is_lig, ~is_lig)]
    return float((block < cutoff).mean()) if block.size else 0.0


@dataclass
class SyntheticAffinityData:
    records: list
    features: dict
    scores: dict


def synthetic_affinity_data(n_assays=8, per_assay=10, kind="continuous", seed=0, structure_model=None,
                            embedding_dim=32, offset_scale=1.5, noise=0.1):
    """Assays of synthetic complexes with planted affinities.

    Continuous labels follow ``y = s(c) + offset_assay + noise`` where the
    assay-free score ``s`` rises with ligand-pocket contact density and with a
    per-ligand "chemistry" vector supplied as the ligand-global embedding.
    Binary assays pair true complexes (label 1) with decoys (label 0) that
    carry an unrelated ligand chemistry vector and sit 10-14 A out of the pocket.
    """
    rng = np.random.default_rng([seed, 31])
    model = structure_model or StructureModel(PairformerConfig(n_layers=1, pair_dim=32, embedding_dim=embedding_dim, seed=seed))
    w_chem = np.random.default_rng([seed, 32]).standard_normal(embedding_dim) / math.sqrt(embedding_dim)
    records, features, scores = [], {}, {}

    def add(cid, coords_c, chem, label, assay):
        bins = smoothed_distogram(coords_c.coords)
        feat = AffinityInputs.from_structure(coords_c, model, ligand_global=chem, bin_probs=bins)
        features[cid] = feat
        lig = coords_c.is_ligand
        dg = Distogram(bins, [t.kind for t in coords_c.tokens])
        pocket = pocket_residues(dg.expected_distances(), lig)
        h = aggregate_entropy(dg, pocket).H_LP if pocket else None
        records.append(AssayRecord(assay, cid, "continuous" if kind == "continuous" else "binary", label, h))

    for a in range(n_assays):
        assay = f"assay-{seed}-{a}"
        offset = float(offset_scale * rng.standard_normal())
        for k in range(per_assay):
            cfg = SyntheticGenConfig(
                n_ligand=int(rng.integers(4, 9)), n_protein=int(rng.integers(20, 31)),
                embedding_dim=embedding_dim, seed=int(rng.integers(2**62)),
                pocket_fraction=float(rng.uniform(0.3, 0.9)),
            )
            c = generate_synthetic_complex(cfg, complex_id=f"{assay}-{k}")
            chem = rng.standard_normal(embedding_dim)
            s = 5.0 + 2.0 * _contact_fraction(c.coords, c.is_ligand) + float(w_chem @ chem)
            scores[c.id] = s
            if kind == "continuous":
                add(c.id, c, chem, s + offset + noise * float(rng.standard_normal()), assay)
            else:
                add(c.id, c, chem, 1.0, assay)
                for j in range(4):
                    decoy = _decoy(c, rng, f"{c.id}-decoy{j}")
                    add(decoy.id, decoy, rng.standard_normal(embedding_dim), 0.0, assay)
    return SyntheticAffinityData(records, features, scores)


def _decoy(c, rng, cid):
    """The complex's protein with its ligand pushed 10-14 A out of the pocket.

    The push points from the protein centroid through the ligand centroid, so
    the ligand leaves the protein instead of sliding along its surface.
    """
    from .complexmodel import TokenizedComplex

    lig = c.is_ligand
    u = c.coords[lig].mean(axis=0) - c.coords[~lig].mean(axis=0)
    if np.linalg.norm(u) < 1e-6:
        u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    coords = c.coords.copy()
    coords[lig] += float(rng.uniform(10.0, 14.0)) * u
    return TokenizedComplex(cid, c.tokens, c.bonds, coords)


def auroc(scores, labels):
    """Area under the ROC curve via the rank-sum statistic (ties count half)."""
    from scipy.stats import rankdata

    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    n1, n0 = y.sum(), (~y).sum()
    if n1 == 0 or n0 == 0:
        raise InputError("need both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def save_affinity_checkpoint(model):
    return save_checkpoint(model, {"model": "affinity"})


def load_affinity_checkpoint(data):
    manifest, blobs = read_checkpoint(data)
    if manifest.get("model") != "affinity":
        raise FormatError("not an affinity checkpoint")
    try:
        model = AffinityModel(AffinityConfig(**manifest["config"]))
    except (TypeError, ValueError, RuntimeError) as exc:
        raise FormatError(f"malformed affinity config: {exc}") from None
    return load_state(model, blobs, manifest["shapes"])
