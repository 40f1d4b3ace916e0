"""Independent reference implementations used as test oracles.

These are written as plain loops over Python lists on purpose, so they share
no code (and few idioms) with the package.
"""

import numpy as np

from coarsebind.complexmodel import Token, TokenizedComplex


def crop_oracle(kinds, chains, residues, budget, pocket_init, dhat):
    """Straight-line budgeted crop; ``kinds`` holds "ligand"/"protein" strings."""
    n = len(kinds)
    L = [i for i in range(n) if kinds[i] == "ligand"]
    C = list(L)

    P = [i for i in range(n) if i in pocket_init]
    if len(L) + len(P) > budget:
        budget_pocket = budget - len(L)
        keyed = []
        for j in P:
            best = None
            for k in L:
                if best is None or dhat[j][k] < best:
                    best = dhat[j][k]
            keyed.append((best if best is not None else 0.0, j))
        keyed.sort()
        for m in range(max(budget_pocket, 0)):
            C.append(keyed[m][1])
    else:
        C = C + P

    if len(C) < budget:
        candidates = []
        chain_names = []
        for i in range(n):
            if kinds[i] == "protein" and chains[i] not in chain_names:
                chain_names.append(chains[i])
        for ch in chain_names:
            S = sorted(residues[i] for i in C if kinds[i] == "protein" and chains[i] == ch)
            if not S:
                continue
            clusters = [[S[0], S[0]]]
            for r in S[1:]:
                if r - clusters[-1][1] <= 3:
                    clusters[-1][1] = r
                else:
                    clusters.append([r, r])
            for i in range(n):
                if kinds[i] != "protein" or chains[i] != ch or i in C:
                    continue
                r = residues[i]
                dseq = min(min(abs(r - s), abs(r - e)) for s, e in clusters)
                candidates.append((dseq, i))
        candidates.sort()
        for dseq, i in candidates:
            if len(C) >= budget:
                break
            C.append(i)
    return sorted(C)


def pocket_oracle(dhat, kinds, cutoff):
    out = []
    for j in range(len(kinds)):
        if kinds[j] != "protein":
            continue
        for i in range(len(kinds)):
            if kinds[i] == "ligand" and dhat[i][j] < cutoff:
                out.append(j)
                break
    return out


def random_crop_instance(rng):
    """Random multi-chain complex, symmetric integer-valued distances (many ties), pocket and budget."""
    n_lig = int(rng.integers(0, 6))
    n_chains = int(rng.integers(1, 4))
    tokens = [Token("ligand", "L", [0.0], element="C") for _ in range(n_lig)]
    for c in range(n_chains):
        length = int(rng.integers(1, 25))
        start = int(rng.integers(0, 5))
        residues = np.sort(rng.choice(np.arange(start, start + 3 * length), size=length, replace=False))
        tokens += [Token("protein", "ABC"[c], [0.0], residue_index=int(r)) for r in residues]
    order = rng.permutation(len(tokens))
    tokens = [tokens[k] for k in order]
    n = len(tokens)
    d = rng.integers(0, 30, (n, n)).astype(float)
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    protein = [i for i, t in enumerate(tokens) if not t.is_ligand]
    pocket = [int(j) for j in protein if rng.random() < 0.3]
    budget = int(rng.integers(1, n + 5))
    return TokenizedComplex("crop", tokens), budget, pocket, d


def oracle_for(c, budget, pocket, d):
    return crop_oracle(
        [t.kind.value for t in c.tokens],
        [t.chain_id for t in c.tokens],
        [t.residue_index for t in c.tokens],
        budget,
        set(pocket),
        d.tolist(),
    )
