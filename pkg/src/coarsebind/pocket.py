"""Pocket identification from expected distances and budgeted pocket cropping."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .complexmodel import TokenKind
from .errors import InputError

POCKET_CUTOFF = 15.0
INITIAL_CUTOFF = 22.0
CLUSTER_GAP = 3


class Provenance(str, enum.Enum):
    LIGAND = "ligand"
    POCKET = "pocket"
    EXPANSION = "expansion"


def pocket_residues(expected, is_ligand, cutoff=POCKET_CUTOFF):
    """Protein tokens with expected distance strictly below ``cutoff`` to any ligand token."""
    d = np.asarray(expected, dtype=np.float64)
    lig = np.asarray(is_ligand, dtype=bool)
    if d.ndim != 2 or d.shape != (len(lig), len(lig)):
        raise InputError("expected-distance matrix must be N x N matching is_ligand")
    if cutoff <= 0:
        raise InputError("cutoff must be positive")
    if not lig.any():
        raise InputError("no ligand tokens")
    prot = np.flatnonzero(~lig)
    near = (d[np.ix_(np.flatnonzero(lig), prot)] < cutoff).any(axis=0)
    return [int(j) for j in prot[near]]


def context_size(expected, is_ligand, cutoff=POCKET_CUTOFF):
    """Ligand token count plus pocket size: the token budget a pocket-only context needs."""
    return int(np.sum(is_ligand)) + len(pocket_residues(expected, is_ligand, cutoff))


@dataclass(frozen=True)
class PocketCrop:
    kept_token_indices: tuple
    provenance: tuple
    over_budget: bool = False

    def __len__(self):
        return len(self.kept_token_indices)

    def to_json(self):
        return {
            "kept": list(self.kept_token_indices),
            "provenance": [p.value for p in self.provenance],
            "over_budget": self.over_budget,
        }


def _clusters(residues):
    """Merge sorted residue numbers into (start, end) runs whose gaps are <= CLUSTER_GAP."""
    out = []
    for r in sorted(residues):
        if out and r - out[-1][1] <= CLUSTER_GAP:
            out[-1][1] = r
        else:
            out.append([r, r])
    return out


def crop(c, budget, pocket, expected):
    """Keep the ligand, then the pocket, then fill the budget by sequence expansion.

    Pocket residues beyond the budget are dropped farthest-first by their minimum
    expected distance to the ligand.  Expansion candidates come from protein
    chains already in the crop and are ranked by sequence distance to the nearest
    pocket-cluster boundary.  All ties go to the lower token index.
    """
    if budget < 1:
        raise InputError("budget must be >= 1")
    n = len(c.tokens)
    d = np.asarray(expected, dtype=np.float64)
    if d.shape != (n, n):
        raise InputError("expected-distance matrix does not match the complex")
    lig = [i for i, t in enumerate(c.tokens) if t.kind is TokenKind.LIGAND]
    pocket = sorted(set(int(j) for j in pocket))
    if any(not 0 <= j < n or c.tokens[j].kind is not TokenKind.PROTEIN for j in pocket):
        raise InputError("pocket must contain protein token indices only")

    prov = {i: Provenance.LIGAND for i in lig}
    if len(lig) + len(pocket) > budget:
        room = max(budget - len(lig), 0)
        near = d[np.ix_(pocket, lig)].min(axis=1) if lig else np.zeros(len(pocket))
        order = sorted(range(len(pocket)), key=lambda k: (near[k], pocket[k]))
        pocket = [pocket[k] for k in order[:room]]
    prov.update((j, Provenance.POCKET) for j in pocket)

    if len(prov) < budget:
        by_chain = {}
        for i, t in enumerate(c.tokens):
            if t.kind is TokenKind.PROTEIN:
                by_chain.setdefault(t.chain_id, []).append(i)
        candidates = []
        for chain, members in by_chain.items():
            kept_res = [c.tokens[i].residue_index for i in members if i in prov]
            if not kept_res:
                continue
            clusters = _clusters(kept_res)
            for i in members:
                if i in prov:
                    continue
                r = c.tokens[i].residue_index
                dseq = min(min(abs(r - s), abs(r - e)) for s, e in clusters)
                candidates.append((dseq, i))
        for _, i in sorted(candidates):
            if len(prov) >= budget:
                break
            prov[i] = Provenance.EXPANSION

    kept = tuple(sorted(prov))
    return PocketCrop(kept, tuple(prov[i] for i in kept), over_budget=len(lig) > budget)


def apply_crop(c, pc, new_id=None):
    """The sub-complex induced by a crop (tokens, coordinates and internal bonds)."""
    return c.subset(pc.kept_token_indices, new_id)
