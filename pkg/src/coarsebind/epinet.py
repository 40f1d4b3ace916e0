"""Epistemic residual network over frozen affinity latents.

The residual for latent ``g`` and epistemic index ``z`` is

    r(g, z) = f_theta([g, z]) . z + beta * f_phi([g, z]) . z

where both networks map the concatenation to an ``index_dim`` vector and
``f_phi`` is a frozen, randomly initialized prior.  Sharing one ``z`` across a
set of complexes gives one joint sample path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .affinity import huber_loss, sample_batch
from .distogram import _split_header, decode_f32_payload
from .errors import FormatError, InputError
from .metrics import binned_success
from .optim import Adam, DivergenceGuard
from .pairformer import load_state, read_checkpoint, save_checkpoint


@dataclass(frozen=True)
class EpinetConfig:
    index_dim: int = 256
    n_samples: int = 1000
    prior_scale: float = 1.0
    hidden: tuple = (64,)
    seed: int = 0

    def __post_init__(self):
        if self.index_dim < 1 or self.n_samples < 1:
            raise InputError("index_dim and n_samples must be >= 1")


class IndexNetwork(nn.Module):
    """MLP on ``[g, z / sqrt(I)]`` whose output vector is dotted with ``z / sqrt(I)``.

    Scaling by ``sqrt(index_dim)`` keeps the index at unit norm, so the latent
    drives the body and the output stays O(1) for any ``index_dim``.
    """

    def __init__(self, latent_dim, index_dim, hidden):
        super().__init__()
        layers, width = [], latent_dim + index_dim
        for h in hidden:
            layers += [nn.Linear(width, h), nn.GELU()]
            width = h
        layers.append(nn.Linear(width, index_dim))
        self.body = nn.Sequential(*layers)
        self.index_dim = index_dim

    def forward(self, g, z):
        """``g`` is (N, D) and ``z`` is (K, I); returns the (K, N) residual matrix."""
        k, n = z.shape[0], g.shape[0]
        zs = z / math.sqrt(self.index_dim)
        x = torch.cat([g.unsqueeze(0).expand(k, n, -1), zs.unsqueeze(1).expand(k, n, -1)], dim=-1)
        return self.head(self.body(x), zs)

    @staticmethod
    def head(v, zs):
        """Inner product of body outputs ``v`` (K, N, I) with scaled indices ``zs`` (K, I)."""
        return torch.einsum("kni,ki->kn", v, zs)


class Epinet(nn.Module):
    def __init__(self, latent_dim, cfg=EpinetConfig(), prior=None):
        super().__init__()
        self.cfg = cfg
        self.latent_dim = latent_dim
        torch.manual_seed(cfg.seed)
        self.learnable = IndexNetwork(latent_dim, cfg.index_dim, cfg.hidden)
        torch.manual_seed(cfg.seed + 1_000_003)
        self.prior = prior or IndexNetwork(latent_dim, cfg.index_dim, cfg.hidden)
        for p in self.prior.parameters():
            p.requires_grad_(False)
        self.double()

    def residual(self, g, z):
        g = torch.as_tensor(np.asarray(g, dtype=np.float64)) if not isinstance(g, torch.Tensor) else g
        z = torch.as_tensor(np.asarray(z, dtype=np.float64)) if not isinstance(z, torch.Tensor) else z
        if g.ndim == 1:
            g = g[None]
        if z.ndim == 1:
            z = z[None]
        if g.shape[-1] != self.latent_dim or z.shape[-1] != self.cfg.index_dim:
            raise InputError(
                f"expected latent dim {self.latent_dim} and index dim {self.cfg.index_dim}, "
                f"got {g.shape[-1]} and {z.shape[-1]}"
            )
        g = g.detach()
        return self.learnable(g, z) + self.cfg.prior_scale * self.prior(g, z)


def epinet_forward(net, g, z):
    """Scalar residual r(g, z) for one latent and one index."""
    with torch.no_grad():
        return float(net.residual(g, z)[0, 0])


@dataclass
class EpinetHistory:
    losses: list = field(default_factory=list)


def train_epinet(records, latents, base_predictions, net=None, cfg=EpinetConfig(), seed=0, steps=500,
                 learning_rate=1e-3, divergence_factor=10.0, divergence_window=100):
    """Fit the learnable residual with Huber(delta=0.5) on continuous records.

    ``latents`` and ``base_predictions`` map complex ids to the frozen ``g`` and
    the frozen affinity prediction.  One index ``z`` is drawn per step and shared
    by the whole batch.
    """
    if not any(r.label_kind == "continuous" for r in records):
        raise InputError("epinet training needs continuous records")
    dim = len(next(iter(latents.values())))
    net = net or Epinet(dim, cfg)
    rng = np.random.default_rng([seed, 41])
    params = [p for p in net.learnable.parameters()]
    opt = Adam([p.data for p in params], lr=learning_rate)
    hist = EpinetHistory()
    guard = DivergenceGuard(divergence_factor, divergence_window, what="epinet loss")
    for _ in range(steps):
        batch = sample_batch(records, "quantitative", rng)
        g = torch.as_tensor(np.stack([latents[r.complex_id] for r in batch.records]))
        base = torch.as_tensor([base_predictions[r.complex_id] for r in batch.records], dtype=torch.float64)
        y = torch.as_tensor([r.value for r in batch.records], dtype=torch.float64)
        z = torch.as_tensor(rng.standard_normal((1, net.cfg.index_dim)))
        loss = huber_loss(y, base + net.residual(g, z)[0])
        net.zero_grad()
        loss.backward()
        with torch.no_grad():
            opt.step([p.grad for p in params])
        value = float(loss.detach())
        hist.losses.append(value)
        guard.update(value)
    return net, hist


@dataclass(frozen=True)
class EpinetPosterior:
    """Joint samples: ``samples[k, n]`` is path k for complex n."""

    samples: np.ndarray
    base_predictions: np.ndarray | None = None
    ids: tuple = ()

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or not np.all(np.isfinite(s)):
            raise InputError("posterior samples must be a finite K x N matrix")
        ids = tuple(self.ids) if self.ids else tuple(str(n) for n in range(s.shape[1]))
        if len(ids) != s.shape[1] or len(set(ids)) != len(ids):
            raise InputError("ids must be unique, one per column")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "ids", ids)

    @property
    def K(self):
        return self.samples.shape[0]

    @property
    def N(self):
        return self.samples.shape[1]

    def with_samples(self, samples):
        return EpinetPosterior(samples, self.base_predictions, self.ids)


def index_stream(index_dim, k, seed):
    """The first ``k`` epistemic indices of the stream for ``seed``."""
    return np.random.default_rng([seed, 43]).standard_normal((k, index_dim))


def sample_posterior(net, latents, base_predictions, k=None, seed=0, ids=(), chunk=256):
    """K joint paths: ``samples[k, n] = base[n] + r(g_n, z_k)``."""
    g = torch.as_tensor(np.asarray(latents, dtype=np.float64))
    base = np.asarray(base_predictions, dtype=np.float64)
    if g.ndim != 2 or len(base) != g.shape[0]:
        raise InputError("need one base prediction per latent")
    k = k or net.cfg.n_samples
    z = torch.as_tensor(index_stream(net.cfg.index_dim, k, seed))
    rows = []
    with torch.no_grad():
        for s in range(0, k, chunk):
            rows.append(net.residual(g, z[s : s + chunk]).numpy())
    return EpinetPosterior(base[None, :] + np.concatenate(rows), base, tuple(ids))


def marginal_stats(posterior, n):
    """Mean, standard deviation and interquartile range (linear quantiles) of column ``n``."""
    col = posterior.samples[:, n]
    std = float(col.std(ddof=1)) if len(col) > 1 else 0.0
    iqr = None
    if len(col) >= 4:
        q1, q3 = np.quantile(col, [0.25, 0.75], method="linear")
        iqr = float(q3 - q1)
    return {"mean": float(col.mean()), "std": std, "iqr": iqr}


def iqr_calibration(predictions, truths, iqrs, edges=None):
    """Success (|pred - truth| <= 1 log unit) rate per IQR bin.

    Default edges are the IQR quartiles, giving four equally populated bins.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truths, dtype=np.float64)
    iqrs = np.asarray(iqrs, dtype=np.float64)
    if not (pred.shape == truth.shape == iqrs.shape):
        raise InputError("predictions, truths and IQRs must have equal length")
    if edges is None:
        edges = np.quantile(iqrs, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
        edges = np.unique(edges)
        if len(edges) < 2:
            edges = np.array([edges[0], edges[0] + 1.0])
    return binned_success(iqrs, np.abs(pred - truth) <= 1.0, edges)


# --------------------------------------------------------------------------
# file format: JSON header {K, N, ids}, newline, base64 little-endian f32 K x N


def encode_posterior(p):
    header = {"K": p.K, "N": p.N, "ids": list(p.ids)}
    payload = base64_f32(p.samples)
    return json.dumps(header, separators=(",", ":")).encode() + b"\n" + payload + b"\n"


def base64_f32(arr):
    import base64

    return base64.b64encode(np.asarray(arr).astype("<f4").tobytes())


def decode_posterior(data):
    header, body, offset = _split_header(data)
    if set(header) != {"K", "N", "ids"}:
        raise FormatError("posterior header keys must be K, N, ids", offset=0)
    k, n, ids = header["K"], header["N"], header["ids"]
    for v in (k, n):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise FormatError("K and N must be positive integers", offset=0)
    if not isinstance(ids, list) or len(ids) != n or not all(isinstance(i, str) for i in ids):
        raise FormatError("ids must be a list of N strings", offset=0)
    if len(set(ids)) != n:
        raise FormatError("ids must be unique", offset=0)
    samples = decode_f32_payload(body, k * n, offset).reshape(k, n)
    if not np.all(np.isfinite(samples)):
        raise FormatError("payload contains non-finite samples", offset=offset)
    return EpinetPosterior(samples, None, tuple(ids))


# --------------------------------------------------------------------------
# covariate-shift toy


@dataclass
class ShiftToy:
    """Latents, frozen base predictions and truths for a train set and a shifted test set."""

    train_latents: np.ndarray
    train_base: np.ndarray
    train_y: np.ndarray
    test_latents: np.ndarray
    test_base: np.ndarray
    test_y: np.ndarray
    test_shift: np.ndarray

    def records(self, n_assays=6):
        from .affinity import AssayRecord

        return [AssayRecord(f"toy-{i % n_assays}", f"t{i}", "continuous", float(y)) for i, y in enumerate(self.train_y)]

    def latent_map(self):
        return {f"t{i}": g for i, g in enumerate(self.train_latents)}

    def base_map(self):
        return {f"t{i}": float(b) for i, b in enumerate(self.train_base)}


def make_shift_toy(seed=0, n_train=60, n_test=120, latent_dim=8, max_shift=3.0, noise=0.1):
    """Linear base model that is right near the training cloud and wrong away from it.

    Truth is ``5 + g[2] + 0.4 * mean(g)^2``.  Test latents are training-like
    draws moved by a shift uniform in ``[0, max_shift]`` along the all-ones
    direction, so base error grows with the shift.
    """
    rng = np.random.default_rng([seed, 47])

    def truth(g):
        return 5.0 + g[:, 2] + 0.4 * g.mean(axis=1) ** 2

    g = rng.standard_normal((n_train, latent_dim))
    y = truth(g) + noise * rng.standard_normal(n_train)
    shift = rng.uniform(0.0, max_shift, n_test)
    gt = rng.standard_normal((n_test, latent_dim)) + shift[:, None]
    return ShiftToy(g, 5.0 + g[:, 2], y, gt, 5.0 + gt[:, 2], truth(gt) + noise * rng.standard_normal(n_test), shift)


def save_epinet_checkpoint(net):
    """Both networks are stored, so a custom prior survives the round trip."""
    return save_checkpoint(net, {"model": "epinet", "latent_dim": net.latent_dim})


def load_epinet_checkpoint(data):
    manifest, blobs = read_checkpoint(data)
    if manifest.get("model") != "epinet":
        raise FormatError("not an epinet checkpoint")
    try:
        raw = dict(manifest["config"])
        raw["hidden"] = tuple(raw.get("hidden", ()))
        net = Epinet(int(manifest["latent_dim"]), EpinetConfig(**raw))
    except (KeyError, TypeError, ValueError, RuntimeError) as exc:
        raise FormatError(f"malformed epinet config: {exc}") from None
    return load_state(net, blobs, manifest["shapes"])
