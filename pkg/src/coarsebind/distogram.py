"""Distance binning, distogram statistics and the pair-type-weighted structure loss.

Bins are numbered 1..64 throughout the public API: bin 1 holds covalent-range
distances (< 2 A), bins 2..63 split [2, 22) A into 62 equal left-closed
intervals, and bin 64 holds everything >= 22 A.  Array axes that run over bins
are of course 0-based, so ``probs[..., b - 1]`` is bin ``b``.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .complexmodel import TokenKind, load_json_document
from .errors import FormatError, InputError

N_BINS = 64


@dataclass(frozen=True)
class BinConfig:
    n_bins: int = N_BINS
    lower: float = 2.0
    upper: float = 22.0
    c1: float = 1.5
    c64: float = 24.5

    def __post_init__(self):
        if self.n_bins < 3 or not self.lower < self.upper:
            raise InputError("invalid bin configuration")

    @property
    def width(self):
        return (self.upper - self.lower) / (self.n_bins - 2)

    @property
    def edges(self):
        """Interior edges lower, lower + w, ..., upper (n_bins - 1 values)."""
        return self.lower + self.width * np.arange(self.n_bins - 1)

    @property
    def centers(self):
        interior = self.lower + (np.arange(2, self.n_bins) - 1.5) * self.width
        return np.concatenate([[self.c1], interior, [self.c64]])


DEFAULT_BINS = BinConfig()


def bin_index(d, cfg=DEFAULT_BINS):
    """Bin (1-based) containing distance ``d``; vectorized over arrays."""
    arr = np.asarray(d, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise InputError("distances must be finite and non-negative")
    interior = 2 + np.floor((arr - cfg.lower) / cfg.width).astype(np.int64)
    b = np.where(arr < cfg.lower, 1, np.where(arr >= cfg.upper, cfg.n_bins, interior))
    b = np.clip(b, 1, cfg.n_bins)
    return int(b) if b.ndim == 0 else b


def bin_center(b, cfg=DEFAULT_BINS):
    arr = np.asarray(b)
    if np.any(arr < 1) or np.any(arr > cfg.n_bins) or np.any(arr != np.floor(arr)):
        raise InputError(f"bin index out of range 1..{cfg.n_bins}")
    out = cfg.centers[arr.astype(np.int64) - 1]
    return float(out) if out.ndim == 0 else out


def _check_distribution(p, cfg):
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != cfg.n_bins:
        raise InputError(f"last axis must have {cfg.n_bins} bins, got {p.shape[-1]}")
    if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1.0) > 1e-4):
        raise InputError("probabilities must be non-negative and sum to 1")
    return p


def expected_distance(p, cfg=DEFAULT_BINS):
    """Probability-weighted mean of bin centers; works on any leading shape."""
    p = _check_distribution(p, cfg)
    out = p @ cfg.centers
    return float(out) if out.ndim == 0 else out


def pairwise_entropy(p, cfg=DEFAULT_BINS):
    """Shannon entropy normalized by log(n_bins), with 0 log 0 = 0."""
    p = _check_distribution(p, cfg)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    out = np.clip(-plogp.sum(-1) / math.log(cfg.n_bins), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Distogram:
    probs: np.ndarray
    token_kinds: tuple
    bin_config: BinConfig = DEFAULT_BINS

    def __post_init__(self):
        probs = np.array(self.probs, dtype=np.float64)
        n = probs.shape[0]
        if probs.ndim != 3 or probs.shape[1] != n or probs.shape[2] != self.bin_config.n_bins:
            raise InputError(f"probs must be N x N x {self.bin_config.n_bins}, got {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(-1) - 1.0) > 1e-6):
            raise InputError("each distogram slice must be a probability vector")
        kinds = tuple(TokenKind(k) for k in self.token_kinds)
        if len(kinds) != n:
            raise InputError("token_kinds length must equal N")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "token_kinds", kinds)

    @classmethod
    def from_logits(cls, logits, token_kinds, bin_config=DEFAULT_BINS, symmetric=True):
        """Softmax over bins, then (by default) the one symmetrization pass."""
        t = torch.as_tensor(np.asarray(logits, dtype=np.float64))
        d = cls(torch.softmax(t, dim=-1).numpy(), token_kinds, bin_config)
        return symmetrize(d) if symmetric else d

    @property
    def n_tokens(self):
        return self.probs.shape[0]

    @property
    def is_ligand(self):
        return np.array([k is TokenKind.LIGAND for k in self.token_kinds])

    def expected_distances(self):
        return self.probs @ self.bin_config.centers

    def entropies(self):
        return pairwise_entropy(self.probs, self.bin_config)


def symmetrize(d):
    """Average each (i, j) slice with (j, i) and renormalize."""
    p = 0.5 * (d.probs + d.probs.transpose(1, 0, 2))
    p = p / p.sum(-1, keepdims=True)
    return Distogram(p, d.token_kinds, d.bin_config)


def target_distogram(distmat, cfg=DEFAULT_BINS):
    d = np.asarray(distmat, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InputError("distance matrix must be square")
    return bin_index(d, cfg)


def delta_distogram(distmat, token_kinds, cfg=DEFAULT_BINS):
    """One-hot distogram on the bins of a true distance matrix."""
    bins = target_distogram(distmat, cfg)
    probs = np.eye(cfg.n_bins)[bins - 1]
    return Distogram(probs, token_kinds, cfg)


@dataclass(frozen=True)
class EntropyReport:
    H_LL: float | None
    H_LP: float | None
    H_PP: float | None
    pocket: frozenset = field(default_factory=frozenset)
    flags: tuple = ()


def aggregate_entropy(d, pocket):
    """Mean normalized entropy over ligand-ligand, ligand-pocket and pocket-pocket pairs.

    LL and PP average over ordered pairs with i != j.  Values that have no pairs
    to average over are reported as ``None`` and named in ``flags``.
    """
    is_lig = d.is_ligand
    lig = np.flatnonzero(is_lig)
    pocket = sorted(int(j) for j in pocket)
    if len(lig) == 0:
        raise InputError("distogram has no ligand tokens")
    if any(is_lig[j] or not 0 <= j < d.n_tokens for j in pocket):
        raise InputError("pocket must contain protein token indices only")
    H = d.entropies()
    flags = []

    def off_diagonal_mean(idx):
        if len(idx) < 2:
            return None
        block = H[np.ix_(idx, idx)]
        return float((block.sum() - np.trace(block)) / (len(idx) * (len(idx) - 1)))

    h_ll = off_diagonal_mean(lig)
    if h_ll is None:
        flags.append("H_LL undefined: single ligand atom")
    if pocket:
        h_lp = float(H[np.ix_(lig, pocket)].mean())
        h_pp = off_diagonal_mean(np.array(pocket))
        if h_pp is None:
            flags.append("H_PP undefined: single pocket residue")
    else:
        h_lp = h_pp = None
        flags.append("empty pocket: H_LP and H_PP undefined")
    return EntropyReport(h_ll, h_lp, h_pp, frozenset(pocket), tuple(flags))


@dataclass(frozen=True)
class PairTypeWeights:
    w_LL: float = 1.0
    w_LP: float = 1.0
    w_PP: float = 1.0

    def __post_init__(self):
        ws = (self.w_LL, self.w_LP, self.w_PP)
        if any(w < 0 for w in ws) or not any(w > 0 for w in ws):
            raise InputError("pair-type weights must be >= 0 with at least one > 0")

    def matrix(self, is_ligand):
        lig = np.asarray(is_ligand, dtype=bool)
        both = lig[:, None] & lig[None, :]
        neither = ~lig[:, None] & ~lig[None, :]
        return np.where(both, self.w_LL, np.where(neither, self.w_PP, self.w_LP))


def structure_loss_tensor(logits, target_bins, weight_matrix, mask):
    """Torch core of :func:`structure_loss`; leading batch axes allowed.

    ``target_bins`` are 1-based; ``weight_matrix`` and ``mask`` broadcast
    against the pair axes.
    """
    logp = torch.log_softmax(logits, dim=-1)
    idx = (target_bins - 1).long().unsqueeze(-1)
    ce = -torch.gather(logp, -1, idx).squeeze(-1)
    w = weight_matrix * mask
    return (w * ce).sum() / w.sum()


def structure_loss(logits, target_bins, weights, mask, is_ligand):
    """Weighted mean cross-entropy over masked pairs.

    sum_ij w_ij * CE_ij / sum_ij w_ij with w_ij picked by pair type from
    ``weights``.  The mask should exclude the diagonal and padding.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InputError("mask selects no pairs")
    wm = weights.matrix(is_ligand)
    if not (wm * mask).sum() > 0:
        raise InputError("masked pairs carry zero total weight")
    tb = np.asarray(target_bins)
    if np.any(tb < 1) or np.any(tb > N_BINS):
        raise InputError("target bins must be 1-based indices")
    loss = structure_loss_tensor(
        torch.as_tensor(np.asarray(logits, dtype=np.float64)),
        torch.as_tensor(tb),
        torch.as_tensor(wm, dtype=torch.float64),
        torch.as_tensor(mask, dtype=torch.float64),
    )
    return float(loss)


# --------------------------------------------------------------------------
# file format: JSON header line, then base64 little-endian f32 payload line


def encode_distogram(d):
    n = d.n_tokens
    cfg = d.bin_config
    header = {
        "n_tokens": n,
        "n_bins": cfg.n_bins,
        "bin_config": {"lower": cfg.lower, "upper": cfg.upper, "c1": cfg.c1, "c64": cfg.c64},
        "token_kinds": [k.value for k in d.token_kinds],
        "dtype": "f32",
        "layout": "row-major i,j,b",
    }
    payload = base64.b64encode(d.probs.astype("<f4").tobytes())
    return json.dumps(header, separators=(",", ":")).encode() + b"\n" + payload + b"\n"


def _split_header(data):
    if not isinstance(data, (bytes, bytearray)):
        raise FormatError("expected a byte string")
    data = bytes(data)
    cut = data.find(b"\n")
    if cut < 0:
        raise FormatError("missing header/payload separator", offset=len(data))
    header = load_json_document(data[:cut])
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object", offset=0)
    body = data[cut + 1 :]
    if body.endswith(b"\n"):
        body = body[:-1]
    return header, body, cut + 1


def decode_f32_payload(body, count, offset):
    try:
        raw = base64.b64decode(body, validate=True)
    except (ValueError, TypeError):
        raise FormatError("payload is not valid base64", offset=offset) from None
    if len(raw) != 4 * count:
        raise FormatError(f"payload has {len(raw)} bytes, expected {4 * count}", offset=offset)
    with np.errstate(invalid="ignore"):  # NaN payloads are rejected by the caller
        return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def decode_distogram(data):
    header, body, offset = _split_header(data)
    expected = {"n_tokens", "n_bins", "bin_config", "token_kinds", "dtype", "layout"}
    if set(header) != expected:
        raise FormatError(f"header keys must be {sorted(expected)}", offset=0)
    n, nb = header["n_tokens"], header["n_bins"]
    if not (isinstance(n, int) and not isinstance(n, bool) and n >= 1):
        raise FormatError("n_tokens must be a positive integer", offset=0)
    if nb != N_BINS or header["dtype"] != "f32" or header["layout"] != "row-major i,j,b":
        raise FormatError("unsupported n_bins/dtype/layout", offset=0)
    bc = header["bin_config"]
    if not isinstance(bc, dict) or set(bc) != {"lower", "upper", "c1", "c64"}:
        raise FormatError("bin_config must have lower, upper, c1, c64", offset=0)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bc.values()):
        raise FormatError("bin_config values must be numbers", offset=0)
    kinds = header["token_kinds"]
    if not isinstance(kinds, list) or len(kinds) != n or any(k not in ("ligand", "protein") for k in kinds):
        raise FormatError("token_kinds must list n_tokens of 'ligand'/'protein'", offset=0)
    probs = decode_f32_payload(body, n * n * N_BINS, offset).reshape(n, n, N_BINS)
    if not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise FormatError("payload probabilities must be finite and non-negative", offset=offset)
    sums = probs.sum(-1)
    if np.any(np.abs(sums - 1.0) > 1e-4):
        raise FormatError("payload slices do not sum to 1", offset=offset)
    try:
        cfg = BinConfig(N_BINS, float(bc["lower"]), float(bc["upper"]), float(bc["c1"]), float(bc["c64"]))
        return _unchecked_distogram(probs, kinds, cfg)
    except InputError as exc:
        raise FormatError(str(exc), offset=0) from None


def _unchecked_distogram(probs, kinds, cfg):
    # decoded f32 slices may miss the 1e-6 sum tolerance by rounding alone;
    # keep them bit-exact so re-encoding is byte-stable
    d = Distogram.__new__(Distogram)
    p = probs.copy()
    p.setflags(write=False)
    object.__setattr__(d, "probs", p)
    object.__setattr__(d, "token_kinds", tuple(TokenKind(k) for k in kinds))
    object.__setattr__(d, "bin_config", cfg)
    return d
