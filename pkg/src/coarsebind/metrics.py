"""Coarse-grained pose evaluation: alignment, ligand RMSD, LDDT-PLI and calibration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CoarseBindWarning, InputError

LDDT_RADIUS = 6.0
LDDT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
MAX_AUTOMORPHISMS = 10_000
ENTROPY_EDGES = (0.0, 0.25, 0.5, 0.75, 1.0)
MIRROR = np.diag([-1.0, 1.0, 1.0])


@dataclass(frozen=True)
class Alignment:
    rotation: np.ndarray
    translation: np.ndarray
    weighted_rmsd: float

    def apply(self, x):
        return np.asarray(x) @ self.rotation.T + self.translation


def kabsch_align(pred, truth, weights=None):
    """Proper rotation and translation taking ``pred`` onto ``truth`` in weighted least squares."""
    p = np.asarray(pred, dtype=np.float64)
    q = np.asarray(truth, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] != 3:
        raise InputError("pred and truth must both be M x 3")
    w = np.ones(len(p)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(p),) or np.any(w < 0) or w.sum() <= 0:
        raise InputError("weights must be non-negative per point with positive sum")
    w = w / w.sum()
    pc = p - w @ p
    qc = q - w @ q
    if np.linalg.matrix_rank(pc[w > 0], tol=1e-8) < 2 or np.linalg.matrix_rank(qc[w > 0], tol=1e-8) < 2:
        raise InputError("degenerate point cloud: need 3 non-collinear weighted points")
    h = (pc * w[:, None]).T @ qc
    u, _, vt = np.linalg.svd(h)
    sign = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    rot = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    trans = w @ q - (w @ p) @ rot.T
    resid = p @ rot.T + trans - q
    rmsd = float(np.sqrt(w @ np.einsum("ij,ij->i", resid, resid)))
    return Alignment(rot, trans, rmsd)


def _aligned_ligand_rmsd(pred, truth, ligand, align_idx):
    a = kabsch_align(pred[align_idx], truth[align_idx])
    diff = a.apply(pred[ligand]) - truth[ligand]
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


def ligand_rmsd(pred, truth, ligand, pocket, chirality_blind=False, permutation=None):
    """RMSD over ligand points after equal-weight alignment on ligand + pocket.

    ``pred`` and ``truth`` index the same tokens.  ``permutation`` (ligand order)
    maps predicted ligand atom k onto truth atom ``ligand[permutation[k]]``.
    With ``chirality_blind`` the mirror image of ``pred`` is also tried.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    ligand = list(ligand)
    pocket = list(pocket)
    if not ligand:
        raise InputError("no ligand tokens")
    if not pocket:
        warnings.warn("empty pocket: aligning on ligand only", CoarseBindWarning, stacklevel=2)
    if permutation is not None:
        truth = truth.copy()
        truth[ligand] = truth[[ligand[k] for k in permutation]]
    idx = ligand + pocket
    best = _aligned_ligand_rmsd(pred, truth, ligand, idx)
    if chirality_blind:
        best = min(best, _aligned_ligand_rmsd(pred @ MIRROR, truth, ligand, idx))
    return best


def graph_automorphisms(elements, bonds, limit=MAX_AUTOMORPHISMS):
    """All element- and bond-order-preserving permutations of a ligand graph.

    Returns a list of tuples ``perm`` with ``perm[k]`` the image of atom k, or
    ``None`` if more than ``limit`` exist.
    """
    n = len(elements)
    adj = [dict() for _ in range(n)]
    for i, j, order in bonds:
        adj[i][j] = order
        adj[j][i] = order
    # refine atom classes by (element, degree, sorted neighbor classes) so pruning stays cheap
    label = [(elements[k], len(adj[k])) for k in range(n)]
    for _ in range(n):
        new = [(label[k], tuple(sorted((label[j], o) for j, o in adj[k].items()))) for k in range(n)]
        ids = {v: c for c, v in enumerate(sorted(set(new), key=repr))}
        new = [ids[v] for v in new]
        if len(set(new)) == len(set(label)):
            label = new
            break
        label = new
    order = sorted(range(n), key=lambda k: (-len(adj[k]), k))
    found = []
    image = [-1] * n
    used = [False] * n

    def extend(pos):
        if pos == n:
            found.append(tuple(image))
            return len(found) <= limit
        a = order[pos]
        for b in range(n):
            if used[b] or label[b] != label[a]:
                continue
            # mapped neighbors keep their bond order; mapped non-neighbors stay non-neighbors
            if any(image[j] >= 0 and adj[b].get(image[j]) != o for j, o in adj[a].items()):
                continue
            if any(image[j] in adj[b] for j in range(n) if image[j] >= 0 and j not in adj[a]):
                continue
            image[a], used[b] = b, True
            if not extend(pos + 1):
                return False
            image[a], used[b] = -1, False
        return True

    if not extend(0):
        return None
    return found


def symmetry_corrected_rmsd(pred, truth, ligand, pocket, elements, bonds, chirality_blind=False):
    """Minimum ligand RMSD over ligand-graph automorphisms.

    Falls back to the plain RMSD (with a warning) when the graph has more than
    10,000 automorphisms.
    """
    autos = graph_automorphisms(elements, bonds)
    if autos is None:
        warnings.warn("automorphism count exceeds cap; symmetry correction skipped", CoarseBindWarning, stacklevel=2)
        autos = [tuple(range(len(elements)))]
    return min(ligand_rmsd(pred, truth, ligand, pocket, chirality_blind, permutation=p) for p in autos)


def lddt_pli(pred, truth, is_ligand, radius=LDDT_RADIUS, thresholds=LDDT_THRESHOLDS):
    """LDDT over ligand-protein pairs closer than ``radius`` in the truth structure.

    Rows of ``pred`` that are NaN mark tokens without a prediction; their pairs
    count as not preserved.  Returns ``None`` when no interface pair exists.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    lig = np.asarray(is_ligand, dtype=bool)
    li, pj = np.flatnonzero(lig), np.flatnonzero(~lig)
    dt = np.linalg.norm(truth[li][:, None] - truth[pj][None], axis=-1)
    sel = dt < radius
    if not sel.any():
        return None
    dp = np.linalg.norm(pred[li][:, None] - pred[pj][None], axis=-1)
    err = np.abs(dp - dt)[sel]
    err = np.where(np.isnan(err), np.inf, err)
    return float(np.mean([np.mean(err < t) for t in thresholds]))


def success_rates(results):
    """Fractions with RMSD < 2 A, and with RMSD < 2 A and LDDT-PLI > 0.8."""
    results = list(results)
    if not results:
        raise InputError("no results")
    rmsd_ok = [r["rmsd"] < 2.0 for r in results]
    both = [ok and r.get("lddt_pli") is not None and r["lddt_pli"] > 0.8 for ok, r in zip(rmsd_ok, results)]
    return {"rate_rmsd2": float(np.mean(rmsd_ok)), "rate_combined": float(np.mean(both))}


@dataclass(frozen=True)
class CalibrationReport:
    bin_edges: tuple
    counts: tuple
    success_rate: tuple
    quantile_method: str = "linear"

    @property
    def occupied_rates(self):
        return [r for r in self.success_rate if r is not None]

    @property
    def nonincreasing(self):
        rates = self.occupied_rates
        return all(a >= b for a, b in zip(rates, rates[1:]))


def binned_success(values, successes, edges):
    """Success rate per bin of ``values``; bins are [e_k, e_k+1) with the last closed."""
    v = np.asarray(values, dtype=np.float64)
    s = np.asarray(successes, dtype=bool)
    edges = np.asarray(edges, dtype=np.float64)
    if v.shape != s.shape:
        raise InputError("values and successes must have equal length")
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise InputError("edges must be strictly increasing")
    if np.any(v < edges[0]) or np.any(v > edges[-1]):
        raise InputError("values outside the bin range")
    k = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, len(edges) - 2)
    counts = np.bincount(k, minlength=len(edges) - 1)
    hits = np.bincount(k, weights=s, minlength=len(edges) - 1)
    rates = tuple(float(h / c) if c else None for h, c in zip(hits, counts))
    return CalibrationReport(tuple(float(e) for e in edges), tuple(int(c) for c in counts), rates)


def entropy_calibration(h_values, successes, edges=ENTROPY_EDGES):
    return binned_success(h_values, successes, edges)
