"""Diffusion-free pose generation by fitting a point cloud to expected distances.

Samples are optimized together as one ``(S, M, 3)`` array.  Each sample keeps
its own random stream (``seed + sample_index``) and its own stopping state, so
results do not depend on how many samples share a batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .optim import Adam
from .pocket import POCKET_CUTOFF, pocket_residues


@dataclass(frozen=True)
class OptConfig:
    learning_rate: float = 1.0
    max_iters: int = 5000
    tol: float = 1e-3
    patience: int = 20
    n_samples: int = 10
    seed: int = 0
    pocket_cutoff: float = POCKET_CUTOFF

    def __post_init__(self):
        if min(self.learning_rate, self.tol, self.pocket_cutoff) <= 0:
            raise InputError("learning_rate, tol and pocket_cutoff must be positive")
        if min(self.max_iters, self.patience, self.n_samples) < 1:
            raise InputError("max_iters, patience and n_samples must be >= 1")


@dataclass(frozen=True)
class PoseSample:
    coords: np.ndarray
    final_loss: float
    iters: int
    converged: bool
    failed: bool = False

    def to_json(self):
        return {
            "coords": self.coords.tolist(),
            "final_loss": self.final_loss,
            "iters": self.iters,
            "converged": self.converged,
        }


def _check_ref(ref):
    r = np.asarray(ref, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise InputError("reference must be a square matrix")
    if r.shape[0] < 2:
        raise InputError("need at least 2 points")
    if not np.all(np.isfinite(r)) or not np.allclose(r, r.T, rtol=0, atol=1e-9):
        raise InputError("reference must be finite and symmetric")
    return r


def _weights(m, weights):
    if weights is None:
        return np.ones((m, m))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (m, m):
        raise InputError("weights must match the reference shape")
    return w


def _loss_and_grad(x, ref, w):
    """Batched loss and gradient; ``x`` is (S, M, 3)."""
    m = ref.shape[0]
    c = 1.0 / (m * (m - 1))
    diff = x[:, :, None, :] - x[:, None, :, :]
    d = np.sqrt(np.einsum("sijk,sijk->sij", diff, diff))
    off = ~np.eye(m, dtype=bool)
    err = np.where(off, d - ref, 0.0)
    with np.errstate(over="ignore", invalid="ignore"):
        loss = c * np.einsum("ij,sij->s", w, err * err)
        safe = np.where(d > 1e-12, d, np.inf)
        coef = 4.0 * c * w * err / safe
        grad = np.einsum("sij,sijk->sik", coef, diff)
    return loss, grad


def optimization_loss(coords, ref, weights=None):
    """Mean squared distance error over ordered pairs i != j."""
    r = _check_ref(ref)
    x = np.asarray(coords, dtype=np.float64)
    if x.shape != (r.shape[0], 3):
        raise InputError("coords must be M x 3 matching the reference")
    return float(_loss_and_grad(x[None], r, _weights(len(r), weights))[0][0])


class ConvergenceMonitor:
    """Counts consecutive iterations whose loss changed by less than ``tol``.

    ``update`` returns True on the call where that count reaches ``patience``;
    the first call only records a baseline.
    """

    def __init__(self, tol, patience):
        self.tol = tol
        self.patience = patience
        self.previous = None
        self.stable = 0

    def update(self, loss):
        if self.previous is not None and abs(loss - self.previous) < self.tol:
            self.stable += 1
        else:
            self.stable = 0
        self.previous = loss
        return self.stable >= self.patience


def _run(ref, w, cfg, rngs):
    """Optimize one sample per generator; returns per-sample results (or None on non-finite loss)."""
    s, m = len(rngs), ref.shape[0]
    x = np.stack([rng.standard_normal((m, 3)) for rng in rngs])
    opt = Adam([x], lr=cfg.learning_rate)
    monitors = [ConvergenceMonitor(cfg.tol, cfg.patience) for _ in range(s)]
    active = np.ones(s, dtype=bool)
    iters = np.zeros(s, dtype=int)
    final = np.full(s, np.nan)
    converged = np.zeros(s, dtype=bool)
    bad = np.zeros(s, dtype=bool)
    for t in range(1, cfg.max_iters + 1):
        loss, grad = _loss_and_grad(x, ref, w)
        for k in np.flatnonzero(active):
            if not np.isfinite(loss[k]) or not np.all(np.isfinite(grad[k])):
                bad[k], active[k] = True, False
                continue
            final[k] = loss[k]
            iters[k] = t
            if monitors[k].update(loss[k]):
                converged[k], active[k] = True, False
        if not active.any():
            break
        step = active[:, None, None].astype(np.float64)
        opt.step([np.where(step > 0, grad, 0.0)], active=step)
    # report the loss at the returned coordinates
    loss, _ = _loss_and_grad(x, ref, w)
    out = []
    for k in range(s):
        if bad[k] or not np.isfinite(loss[k]):
            out.append(None)
        else:
            out.append(PoseSample(x[k].copy(), float(loss[k]), int(iters[k]), bool(converged[k])))
    return out


def optimize_pose(ref, cfg=OptConfig(), weights=None):
    """``cfg.n_samples`` independent Adam runs from N(0, I) initial coordinates.

    A sample whose loss turns non-finite is restarted once from a fresh seed;
    if that also fails it is returned with ``failed=True`` and infinite loss.
    """
    r = _check_ref(ref)
    w = _weights(len(r), weights)
    rngs = [np.random.default_rng(cfg.seed + k) for k in range(cfg.n_samples)]
    samples = _run(r, w, cfg, rngs)
    for k, sample in enumerate(samples):
        if sample is None:
            retry = _run(r, w, cfg, [np.random.default_rng([cfg.seed + k, 1])])[0]
            samples[k] = retry or PoseSample(
                np.full((len(r), 3), np.nan), float("inf"), 0, False, failed=True
            )
    return samples


def select_best(samples):
    """Index and sample with the lowest final loss (first index on ties)."""
    if not samples:
        raise InputError("no samples")
    ok = [k for k, s in enumerate(samples) if not s.failed]
    if not ok:
        raise NumericError("every pose sample failed")
    k = min(ok, key=lambda i: (samples[i].final_loss, i))
    return k, samples[k]


@dataclass(frozen=True)
class Reference:
    """Reference distance matrix over ligand tokens followed by pocket tokens."""

    matrix: np.ndarray
    ligand: tuple
    pocket: tuple
    flags: tuple = ()

    @property
    def token_indices(self):
        return self.ligand + self.pocket


def build_reference(d, pocket_cutoff=POCKET_CUTOFF):
    """Expected-distance reference for the ligand and its predicted pocket."""
    is_lig = d.is_ligand
    if not is_lig.any():
        raise InputError("distogram has no ligand tokens")
    expected = d.expected_distances()
    pocket = pocket_residues(expected, is_lig, pocket_cutoff)
    lig = [int(i) for i in np.flatnonzero(is_lig)]
    idx = lig + pocket
    ref = expected[np.ix_(idx, idx)]
    ref = 0.5 * (ref + ref.T)
    np.fill_diagonal(ref, 0.0)
    flags = () if pocket else ("empty pocket: optimizing ligand only",)
    return Reference(ref, tuple(lig), tuple(pocket), flags)


def generate_pose(d, cfg=OptConfig()):
    """Reference from a distogram, ``cfg.n_samples`` optimized samples and the best index."""
    reference = build_reference(d, cfg.pocket_cutoff)
    if len(reference.token_indices) < 2:
        raise InputError("need at least 2 ligand/pocket tokens to place")
    samples = optimize_pose(reference.matrix, cfg)
    best, _ = select_best(samples)
    return reference, samples, best
