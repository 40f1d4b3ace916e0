"""Coarse-grained protein-ligand complexes and a deterministic synthetic generator.

A complex is an ordered list of tokens: ligand heavy atoms and protein residue
centers.  Real encoders are replaced by synthetic per-token embeddings whose
layout is

    [ identity block (E // 4) | geometry block (E - E // 4 - 1) | noise level ]

The identity block is a unit-Gaussian vector fixed per (kind, index).  The
geometry block carries the token position, perturbed by isotropic Gaussian noise
of ``feature_noise`` Angstrom, projected through a fixed orthonormal
3 -> n_geo map.  The last channel states the noise level, which is what lets a
trained model widen its distance distributions when the positions are unreliable.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

POCKET_RADIUS = 15.0
COORD_SCALE = 10.0  # Angstrom per embedding unit in the geometry block
_EMBED_SEED = 0x5EED_E3B  # global "vocabulary" seed, independent of complex seeds
BOND_LENGTH = 1.5
CA_SPACING = 3.8


class TokenKind(str, enum.Enum):
    LIGAND = "ligand"
    PROTEIN = "protein"


class Geometry(str, enum.Enum):
    FOLDED_BLOB = "folded_blob"
    HELIX = "helix"
    CLIFF = "cliff"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    chain_id: str
    embedding: np.ndarray
    residue_index: int | None = None
    element: str | None = None

    def __post_init__(self):
        kind = TokenKind(self.kind)
        object.__setattr__(self, "kind", kind)
        emb = np.array(self.embedding, dtype=np.float64)
        if emb.ndim != 1:
            raise InputError("token embedding must be a vector")
        emb.setflags(write=False)
        object.__setattr__(self, "embedding", emb)
        if kind is TokenKind.PROTEIN:
            if self.residue_index is None or self.element is not None:
                raise InputError("protein tokens need residue_index and no element")
        else:
            if self.element is None or self.residue_index is not None:
                raise InputError("ligand tokens need element and no residue_index")

    @property
    def is_ligand(self):
        return self.kind is TokenKind.LIGAND


@dataclass(frozen=True)
class TokenizedComplex:
    id: str
    tokens: tuple
    bonds: tuple = ()
    coords: np.ndarray | None = None

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if not tokens:
            raise InputError("complex has no tokens")
        dims = {t.embedding.shape[0] for t in tokens}
        if len(dims) != 1:
            raise InputError("all token embeddings must share one length")
        bonds = tuple((int(i), int(j), int(o)) for i, j, o in self.bonds)
        n = len(tokens)
        for i, j, _ in bonds:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise InputError(f"bond ({i}, {j}) has invalid endpoints")
            if not (tokens[i].is_ligand and tokens[j].is_ligand):
                raise InputError(f"bond ({i}, {j}) joins non-ligand tokens")
        object.__setattr__(self, "bonds", bonds)
        if self.coords is not None:
            xyz = np.array(self.coords, dtype=np.float64)
            if xyz.shape != (n, 3):
                raise InputError(f"coords shape {xyz.shape} != ({n}, 3)")
            xyz.setflags(write=False)
            object.__setattr__(self, "coords", xyz)

    def __len__(self):
        return len(self.tokens)

    @property
    def is_ligand(self):
        return np.array([t.is_ligand for t in self.tokens])

    @property
    def ligand_indices(self):
        return np.flatnonzero(self.is_ligand)

    @property
    def protein_indices(self):
        return np.flatnonzero(~self.is_ligand)

    @property
    def embeddings(self):
        return np.stack([t.embedding for t in self.tokens])

    @property
    def embedding_dim(self):
        return self.tokens[0].embedding.shape[0]

    def ligand_graph(self):
        """Elements and bonds of the ligand, re-indexed to ligand order."""
        lig = self.ligand_indices
        pos = {int(g): k for k, g in enumerate(lig)}
        elements = [self.tokens[i].element for i in lig]
        bonds = [(pos[i], pos[j], o) for i, j, o in self.bonds]
        return elements, bonds

    def subset(self, keep, new_id=None):
        """Complex restricted to ``keep`` (token order preserved) with induced bonds."""
        keep = sorted(int(k) for k in keep)
        remap = {old: new for new, old in enumerate(keep)}
        bonds = [(remap[i], remap[j], o) for i, j, o in self.bonds if i in remap and j in remap]
        coords = None if self.coords is None else self.coords[keep]
        return TokenizedComplex(
            id=new_id or self.id,
            tokens=[self.tokens[k] for k in keep],
            bonds=bonds,
            coords=coords,
        )

    def __eq__(self, other):
        if not isinstance(other, TokenizedComplex):
            return NotImplemented
        if self.id != other.id or self.bonds != other.bonds or len(self) != len(other):
            return False
        for a, b in zip(self.tokens, other.tokens):
            if (a.kind, a.chain_id, a.residue_index, a.element) != (
                b.kind,
                b.chain_id,
                b.residue_index,
                b.element,
            ) or not np.array_equal(a.embedding, b.embedding):
                return False
        if (self.coords is None) != (other.coords is None):
            return False
        return self.coords is None or np.array_equal(self.coords, other.coords)

    __hash__ = None


@dataclass(frozen=True)
class SyntheticGenConfig:
    n_ligand: int = 10
    n_protein: int = 60
    embedding_dim: int = 32
    geometry: Geometry = Geometry.FOLDED_BLOB
    seed: int = 0
    pocket_fraction: float = 0.5
    feature_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "geometry", Geometry(self.geometry))
        if self.n_ligand < 1 or self.n_protein < 1:
            raise InputError("n_ligand and n_protein must be >= 1")
        if self.embedding_dim < 8:
            raise InputError("embedding_dim must be >= 8")
        if not 0.0 < self.pocket_fraction <= 1.0:
            raise InputError("pocket_fraction must lie in (0, 1]")
        if self.feature_noise < 0:
            raise InputError("feature_noise must be >= 0")


def distance_matrix(coords):
    """Pairwise Euclidean distances (Angstrom) of an N x 3 coordinate array."""
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 3:
        raise InputError(f"coords must be N x 3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("coords contain non-finite values")
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


# --------------------------------------------------------------------------
# synthetic generation


def _identity_vector(kind, index, dim):
    seed = [_EMBED_SEED, 0 if kind is TokenKind.LIGAND else 1, int(index), dim]
    return np.random.default_rng(seed).standard_normal(dim)


def _geometry_basis(n_geo):
    rng = np.random.default_rng([_EMBED_SEED, 7, n_geo])
    q, _ = np.linalg.qr(rng.standard_normal((n_geo, 3)))
    return q


def embed_tokens(kinds, index, coords, dim, feature_noise, rng):
    """Synthetic embeddings for tokens at ``coords`` (see module docstring)."""
    n_id = dim // 4
    basis = _geometry_basis(dim - n_id - 1)
    out = np.empty((len(kinds), dim))
    for k, (kind, idx) in enumerate(zip(kinds, index)):
        out[k, :n_id] = _identity_vector(kind, idx, n_id)
    noisy = coords + feature_noise * rng.standard_normal(coords.shape)
    out[:, n_id:-1] = noisy @ basis.T / COORD_SCALE
    out[:, -1] = feature_noise
    return out


def _random_unit(rng, n=None):
    v = rng.standard_normal((3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _ligand_graph(n, rng):
    """Random tree (plus occasional ring closures) embedded with 1.5 A bonds."""
    pos = np.zeros((n, 3))
    degree = np.zeros(n, dtype=int)
    bonds = []
    for a in range(1, n):
        placed = False
        for _ in range(200):
            parents = np.flatnonzero(degree[:a] < 3)
            parent = int(rng.choice(parents)) if len(parents) else int(rng.integers(a))
            cand = pos[parent] + BOND_LENGTH * _random_unit(rng)
            others = np.delete(np.arange(a), parent)
            if len(others) == 0 or np.min(np.linalg.norm(pos[others] - cand, axis=1)) >= 2.4:
                placed = True
                break
        if not placed:
            parent = a - 1
            cand = pos[parent] + BOND_LENGTH * _random_unit(rng)
        pos[a] = cand
        degree[parent] += 1
        degree[a] += 1
        order = 2 if rng.random() < 0.1 else 1
        bonds.append((parent, a, order))
    if n >= 5 and rng.random() < 0.3:
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        bonded = {(min(i, j), max(i, j)) for i, j, _ in bonds}
        for i in range(n):
            for j in range(i + 1, n):
                if (i, j) not in bonded and d[i, j] < 2.7 and degree[i] < 4 and degree[j] < 4:
                    bonds.append((i, j, 1))
                    degree[i] += 1
                    degree[j] += 1
                    break
            else:
                continue
            break
    elements = [str(e) for e in rng.choice(["C", "C", "C", "N", "O"], size=n)]
    return pos - pos.mean(0), bonds, elements


def _blob_chain(n, rng):
    """Compact self-avoiding chain with 3.8 A steps confined to a sphere."""
    radius = 3.0 * n ** (1.0 / 3.0) + 3.0
    pos = np.zeros((n, 3))
    for a in range(1, n):
        best, best_score = None, -np.inf
        for _ in range(60):
            cand = pos[a - 1] + CA_SPACING * _random_unit(rng)
            clear = np.min(np.linalg.norm(pos[: a - 1] - cand, axis=1)) if a > 1 else 10.0
            score = min(clear, 4.5) - 2.0 * max(0.0, np.linalg.norm(cand) - radius)
            if score > best_score:
                best, best_score = cand, score
            if clear >= 4.5 and np.linalg.norm(cand) <= radius:
                break
        pos[a] = best
    return pos - pos.mean(0)


def _helix_bundle(n, rng):
    """Antiparallel bundle of ideal helices (Cb radius 2.3 A, rise 1.5 A, 100 deg)."""
    per = 14
    n_helix = math.ceil(n / per)
    cols = math.ceil(math.sqrt(n_helix))
    pos = []
    for h in range(n_helix):
        cx, cy = 10.0 * (h % cols), 10.0 * (h // cols) + (5.0 if (h % cols) % 2 else 0.0)
        sign = 1 if h % 2 == 0 else -1
        for r in range(per):
            if len(pos) == n:
                break
            ang = math.radians(100.0 * r)
            z = sign * (1.5 * r - 1.5 * per / 2)
            pos.append((cx + 2.3 * math.cos(ang), cy + 2.3 * math.sin(ang), z))
    pos = np.array(pos) @ _random_rotation(rng).T
    return pos - pos.mean(0)


def _place_ligand(lig, prot, target, rng):
    """Translate/rotate ``lig`` so exactly ``target`` protein points fall within 15 A."""
    reach = np.max(np.linalg.norm(prot, axis=1)) + POCKET_RADIUS + 10.0
    ts = np.arange(0.0, reach, 0.05)
    prot_sq = (prot**2).sum(-1)
    fallback = None
    for clash_min in (3.5, 2.0, 0.0):
        for _ in range(150):
            rot = _random_rotation(rng)
            u = _random_unit(rng)
            body = lig @ rot.T
            cand = ts[:, None, None] * u + body[None]  # T x nl x 3
            sq = (cand**2).sum(-1)[..., None] + prot_sq - 2.0 * cand @ prot.T  # T x nl x np
            dmin_prot = np.sqrt(np.maximum(sq.min(axis=1), 0.0))  # T x np
            count = (dmin_prot < POCKET_RADIUS).sum(axis=1)
            margin = np.abs(dmin_prot - POCKET_RADIUS).min(axis=1)
            ok = (count == target) & (dmin_prot.min(axis=1) >= clash_min) & (margin > 1e-3)
            if ok.any():
                runs = np.flatnonzero(ok)
                # take the middle of the first contiguous run of valid offsets
                split = np.flatnonzero(np.diff(runs) > 1)
                run = runs[: split[0] + 1] if len(split) else runs
                k = run[len(run) // 2]
                return cand[k]
            if fallback is None:
                k = int(np.argmin(np.abs(count - target)))
                fallback = cand[k]
    return fallback


def generate_synthetic_complex(cfg, complex_id=None):
    """Deterministic synthetic complex with ground-truth coordinates.

    The ligand is placed so that ``ceil(pocket_fraction * n_protein)`` protein
    tokens lie strictly within 15 A of some ligand atom.  Coordinates are
    centered on the ligand centroid.
    """
    rng = np.random.default_rng([cfg.seed, cfg.n_ligand, cfg.n_protein])
    lig, bonds, elements = _ligand_graph(cfg.n_ligand, rng)
    if cfg.geometry is Geometry.HELIX:
        prot = _helix_bundle(cfg.n_protein, rng)
    else:
        prot = _blob_chain(cfg.n_protein, rng)
    target = math.ceil(cfg.pocket_fraction * cfg.n_protein - 1e-12)
    lig = _place_ligand(lig, prot, target, rng)
    center = lig.mean(0)
    coords = np.concatenate([lig, prot]) - center

    kinds = [TokenKind.LIGAND] * cfg.n_ligand + [TokenKind.PROTEIN] * cfg.n_protein
    index = list(range(cfg.n_ligand)) + list(range(cfg.n_protein))
    emb = embed_tokens(kinds, index, coords, cfg.embedding_dim, cfg.feature_noise, rng)
    tokens = [
        Token(TokenKind.LIGAND, "L", emb[k], element=elements[k]) for k in range(cfg.n_ligand)
    ] + [
        Token(TokenKind.PROTEIN, "A", emb[cfg.n_ligand + r], residue_index=r)
        for r in range(cfg.n_protein)
    ]
    return TokenizedComplex(
        id=complex_id or f"syn-{cfg.geometry.value}-{cfg.seed}",
        tokens=tokens,
        bonds=bonds,
        coords=coords,
    )


@dataclass(frozen=True)
class CliffPair:
    """Two complexes whose ligand embeddings are near-identical but whose
    planted affinities (log10 units) differ by ``gap``."""

    first: TokenizedComplex
    second: TokenizedComplex
    y_first: float
    y_second: float

    @property
    def gap(self):
        return abs(self.y_first - self.y_second)


def generate_cliff_pair(cfg, perturbation=0.01, min_gap=2.0):
    """Activity-cliff pair built from a ``Geometry.CLIFF`` config."""
    base = generate_synthetic_complex(cfg, complex_id=f"cliff-{cfg.seed}-a")
    rng = np.random.default_rng([cfg.seed, 0xC11F])
    tokens = []
    for t in base.tokens:
        if t.is_ligand:
            emb = t.embedding + perturbation * rng.standard_normal(t.embedding.shape)
            tokens.append(Token(t.kind, t.chain_id, emb, element=t.element))
        else:
            tokens.append(t)
    twin = TokenizedComplex(f"cliff-{cfg.seed}-b", tokens, base.bonds, base.coords)
    y = float(rng.uniform(5.0, 7.0))
    jump = float(min_gap + rng.uniform(0.0, 1.0)) * (1 if rng.random() < 0.5 else -1)
    return CliffPair(base, twin, y, y + jump)


# --------------------------------------------------------------------------
# JSON file format

_TOP_KEYS = {"id", "tokens", "bonds", "coords"}
_TOKEN_KEYS = {"kind", "chain", "residue_index", "element", "embedding"}


def encode_complex(c):
    """Serialize to the UTF-8 JSON complex format (stable byte output)."""
    doc = {"id": c.id, "tokens": [], "bonds": [list(b) for b in c.bonds]}
    for t in c.tokens:
        tok = {"kind": t.kind.value, "chain": t.chain_id}
        if t.residue_index is not None:
            tok["residue_index"] = t.residue_index
        if t.element is not None:
            tok["element"] = t.element
        tok["embedding"] = [float(v) for v in t.embedding]
        doc["tokens"].append(tok)
    if c.coords is not None:
        doc["coords"] = [[float(v) for v in row] for row in c.coords]
    return (json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def load_json_document(data):
    """Decode bytes to a JSON value, mapping every failure to ``FormatError``."""
    if not isinstance(data, (bytes, bytearray)):
        raise FormatError("expected a byte string")
    try:
        text = bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"invalid UTF-8: {exc.reason}", offset=exc.start) from None
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FormatError(f"invalid JSON: {exc.msg}", offset=offset) from None
    except RecursionError:
        raise FormatError("JSON nesting too deep") from None


def _reject_constant(name):
    raise json.JSONDecodeError(f"non-finite constant {name}", name, 0)


def decode_complex(data):
    """Parse the JSON complex format; any malformation raises ``FormatError``."""
    doc = load_json_document(data)
    if not isinstance(doc, dict):
        raise FormatError("top level must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise FormatError(f"unknown keys {sorted(unknown)}")
    for key in ("id", "tokens", "bonds"):
        if key not in doc:
            raise FormatError(f"missing key {key!r}")
    if not isinstance(doc["id"], str):
        raise FormatError("id must be a string")
    if not isinstance(doc["tokens"], list) or not doc["tokens"]:
        raise FormatError("tokens must be a non-empty array")
    tokens = []
    for k, tok in enumerate(doc["tokens"]):
        if not isinstance(tok, dict):
            raise FormatError(f"token {k} must be an object")
        extra = set(tok) - _TOKEN_KEYS
        if extra:
            raise FormatError(f"token {k}: unknown keys {sorted(extra)}")
        if tok.get("kind") not in ("ligand", "protein"):
            raise FormatError(f"token {k}: kind must be 'ligand' or 'protein'")
        if not isinstance(tok.get("chain"), str):
            raise FormatError(f"token {k}: chain must be a string")
        emb = tok.get("embedding")
        if not isinstance(emb, list) or not emb or not all(_is_number(v) for v in emb):
            raise FormatError(f"token {k}: embedding must be a non-empty numeric array")
        ri, el = tok.get("residue_index"), tok.get("element")
        if ri is not None and not _is_int(ri):
            raise FormatError(f"token {k}: residue_index must be an integer")
        if el is not None and not isinstance(el, str):
            raise FormatError(f"token {k}: element must be a string")
        try:
            tokens.append(Token(tok["kind"], tok["chain"], emb, residue_index=ri, element=el))
        except InputError as exc:
            raise FormatError(f"token {k}: {exc}") from None
    bonds = doc["bonds"]
    if not isinstance(bonds, list) or not all(
        isinstance(b, list) and len(b) == 3 and all(_is_int(v) for v in b) for b in bonds
    ):
        raise FormatError("bonds must be an array of [i, j, order] integer triples")
    coords = doc.get("coords")
    if coords is not None:
        if not isinstance(coords, list) or not all(
            isinstance(r, list) and len(r) == 3 and all(_is_number(v) for v in r) for r in coords
        ):
            raise FormatError("coords must be an N x 3 numeric array")
    try:
        return TokenizedComplex(doc["id"], tokens, [tuple(b) for b in bonds], coords)
    except InputError as exc:
        raise FormatError(str(exc)) from None
