"""Pair-only pairformer trunk, pair initialization and distogram head.

Every module works on pair tensors shaped ``(..., N, N, C)`` and accepts an
optional boolean ``pair_mask`` shaped ``(..., N, N)``; masked edges do not
contribute to triangle products, attention biases or attention keys.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .distogram import N_BINS
from .errors import ConfigError, FormatError, InputError, NumericError

RELPOS_CLIP = 32
# relative-position classes: 0..32 same-chain |dres|, then pair-kind classes
_REL_OTHER_CHAIN = RELPOS_CLIP + 1
_REL_LL = RELPOS_CLIP + 2
_REL_LP = RELPOS_CLIP + 3
_REL_PL = RELPOS_CLIP + 4
N_RELPOS = RELPOS_CLIP + 5

_ACTIVATIONS = {"gelu": nn.GELU, "silu": nn.SiLU, "tanh_gelu": lambda: nn.GELU(approximate="tanh")}


@dataclass(frozen=True)
class PairformerConfig:
    n_layers: int = 4
    n_heads: int = 4
    pair_dim: int = 32
    head_dim: int = 8
    embedding_dim: int = 32
    transition_mult: int = 4
    activation: str = "gelu"
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 0 or min(self.n_heads, self.pair_dim, self.head_dim, self.embedding_dim) < 1:
            raise InputError("pairformer sizes must be positive (n_layers >= 0)")
        if self.pair_dim % self.n_heads:
            raise InputError("pair_dim must be divisible by n_heads")
        if self.activation not in _ACTIVATIONS:
            raise InputError(f"activation must be one of {sorted(_ACTIVATIONS)}")


class TriangleMultiplication(nn.Module):
    def __init__(self, c, mode="outgoing", hidden=None):
        super().__init__()
        if mode not in ("outgoing", "incoming"):
            raise InputError("mode must be 'outgoing' or 'incoming'")
        hidden = hidden or c
        self.mode = mode
        self.norm_in = nn.LayerNorm(c)
        self.proj_a = nn.Linear(c, hidden)
        self.gate_a = nn.Linear(c, hidden)
        self.proj_b = nn.Linear(c, hidden)
        self.gate_b = nn.Linear(c, hidden)
        self.norm_out = nn.LayerNorm(hidden)
        self.gate_out = nn.Linear(c, c)
        self.linear_out = nn.Linear(hidden, c)

    def forward(self, z, pair_mask=None):
        x = self.norm_in(z)
        a = torch.sigmoid(self.gate_a(x)) * self.proj_a(x)
        b = torch.sigmoid(self.gate_b(x)) * self.proj_b(x)
        if pair_mask is not None:
            m = pair_mask.unsqueeze(-1).to(z.dtype)
            a, b = a * m, b * m
        if self.mode == "outgoing":
            t = torch.einsum("...ikc,...jkc->...ijc", a, b)
        else:
            t = torch.einsum("...kic,...kjc->...ijc", a, b)
        update = torch.sigmoid(self.gate_out(x)) * self.linear_out(self.norm_out(t))
        return z + update


class TriangleAttention(nn.Module):
    def __init__(self, c, n_heads=4, head_dim=8, node="starting"):
        super().__init__()
        if node not in ("starting", "ending"):
            raise InputError("node must be 'starting' or 'ending'")
        self.node = node
        self.n_heads = n_heads
        self.head_dim = head_dim
        inner = n_heads * head_dim
        self.norm = nn.LayerNorm(c)
        self.query = nn.Linear(c, inner, bias=False)
        self.key = nn.Linear(c, inner, bias=False)
        self.value = nn.Linear(c, inner, bias=False)
        self.bias = nn.Linear(c, n_heads, bias=False)
        self.gate = nn.Linear(c, inner)
        self.out = nn.Linear(inner, c)

    def forward(self, z, pair_mask=None):
        if self.node == "ending":
            zt = z.transpose(-2, -3)
            mt = None if pair_mask is None else pair_mask.transpose(-1, -2)
            return self._starting(zt, mt).transpose(-2, -3)
        return self._starting(z, pair_mask)

    def _starting(self, z, pair_mask):
        # row-wise attention: query (i, j) attends over keys (i, k), biased by edge (j, k)
        *lead, n, _, _ = z.shape
        h, d = self.n_heads, self.head_dim
        x = self.norm(z)
        q = self.query(x).view(*lead, n, n, h, d)
        k = self.key(x).view(*lead, n, n, h, d)
        v = self.value(x).view(*lead, n, n, h, d)
        b = self.bias(x)  # (..., j, k, h)
        if pair_mask is not None:
            b = b * pair_mask.unsqueeze(-1).to(b.dtype)
        logits = torch.einsum("...ijhd,...ikhd->...ihjk", q, k) / math.sqrt(d)
        logits = logits + b.permute(*range(len(lead)), -1, -3, -2).unsqueeze(-4)
        if pair_mask is not None:
            key_ok = pair_mask.unsqueeze(-2).unsqueeze(-2)  # (..., i, 1, 1, k)
            logits = logits.masked_fill(~key_ok, -1e9)
        attn = torch.softmax(logits, dim=-1)
        o = torch.einsum("...ihjk,...ikhd->...ijhd", attn, v).reshape(*lead, n, n, h * d)
        o = torch.sigmoid(self.gate(x)) * o
        return z + self.out(o)


class PairTransition(nn.Module):
    def __init__(self, c, mult=4, activation="gelu"):
        super().__init__()
        self.norm = nn.LayerNorm(c)
        self.up = nn.Linear(c, mult * c)
        self.act = _ACTIVATIONS[activation]()
        self.down = nn.Linear(mult * c, c)

    def forward(self, z, pair_mask=None):
        return z + self.down(self.act(self.up(self.norm(z))))


BLOCK_OPS = ("tri_mul_out", "tri_mul_in", "tri_att_start", "tri_att_end", "transition")


class PairformerBlock(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c = cfg.pair_dim
        self.tri_mul_out = TriangleMultiplication(c, "outgoing")
        self.tri_mul_in = TriangleMultiplication(c, "incoming")
        self.tri_att_start = TriangleAttention(c, cfg.n_heads, cfg.head_dim, "starting")
        self.tri_att_end = TriangleAttention(c, cfg.n_heads, cfg.head_dim, "ending")
        self.transition = PairTransition(c, cfg.transition_mult, cfg.activation)

    def forward(self, z, pair_mask=None):
        for name in BLOCK_OPS:
            z = getattr(self, name)(z, pair_mask)
        return z

    def output_layers(self):
        return [self.tri_mul_out.linear_out, self.tri_mul_in.linear_out,
                self.tri_att_start.out, self.tri_att_end.out, self.transition.down]


class Pairformer(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.blocks = nn.ModuleList(PairformerBlock(cfg) for _ in range(cfg.n_layers))

    def forward(self, z, pair_mask=None):
        for n, block in enumerate(self.blocks):
            z = block(z, pair_mask)
            if not torch.isfinite(z).all():
                raise NumericError(f"non-finite pair activations after layer {n}")
        return z

    def zero_output_layers(self):
        with torch.no_grad():
            for block in self.blocks:
                for lin in block.output_layers():
                    lin.weight.zero_()
                    lin.bias.zero_()


def relpos_classes(is_ligand, chain_ids, residue_index):
    """Integer relative-position/pair-kind class for every token pair."""
    lig = np.asarray(is_ligand, dtype=bool)
    chains = np.asarray(chain_ids)
    res = np.array([r if r is not None else 0 for r in residue_index], dtype=np.int64)
    same_chain = chains[:, None] == chains[None, :]
    cls = np.minimum(np.abs(res[:, None] - res[None, :]), RELPOS_CLIP)
    cls = np.where(same_chain, cls, _REL_OTHER_CHAIN)
    cls = np.where(lig[:, None] & lig[None, :], _REL_LL, cls)
    cls = np.where(lig[:, None] & ~lig[None, :], _REL_LP, cls)
    cls = np.where(~lig[:, None] & lig[None, :], _REL_PL, cls)
    return cls


class PairInit(nn.Module):
    """z_ij = W_a e_i + W_b e_j + relpos(i, j)."""

    def __init__(self, embedding_dim, c):
        super().__init__()
        self.proj_a = nn.Linear(embedding_dim, c, bias=False)
        self.proj_b = nn.Linear(embedding_dim, c, bias=False)
        self.relpos = nn.Embedding(N_RELPOS, c)

    def forward(self, emb, relpos):
        if emb.shape[-1] != self.proj_a.in_features:
            raise InputError(
                f"embedding dim {emb.shape[-1]} != model embedding dim {self.proj_a.in_features}"
            )
        a = self.proj_a(emb)
        b = self.proj_b(emb)
        return a.unsqueeze(-2) + b.unsqueeze(-3) + self.relpos(relpos)


class DistogramHead(nn.Module):
    def __init__(self, c, n_bins=N_BINS):
        super().__init__()
        self.linear = nn.Linear(c, n_bins)

    def forward(self, z):
        return self.linear(z)


@dataclass
class ComplexTensors:
    """Model inputs for one complex (or a batch, with a leading axis)."""

    embeddings: torch.Tensor
    relpos: torch.Tensor
    is_ligand: np.ndarray

    @classmethod
    def from_complex(cls, c, dtype=torch.float64):
        relpos = relpos_classes(
            c.is_ligand, [t.chain_id for t in c.tokens], [t.residue_index for t in c.tokens]
        )
        return cls(
            torch.as_tensor(c.embeddings, dtype=dtype),
            torch.as_tensor(relpos),
            c.is_ligand,
        )


class StructureModel(nn.Module):
    """Pair initialization -> pairformer trunk -> distogram logits."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.init = PairInit(cfg.embedding_dim, cfg.pair_dim)
        self.trunk = Pairformer(cfg)
        self.head = DistogramHead(cfg.pair_dim)
        self.double()

    def forward(self, embeddings, relpos):
        z = self.trunk(self.init(embeddings, relpos))
        return self.head(z), z

    def predict(self, c):
        """Logits and final pair representation for a ``TokenizedComplex``."""
        if c.embedding_dim != self.cfg.embedding_dim:
            raise ConfigError(
                f"complex embedding dim {c.embedding_dim} does not match checkpoint "
                f"embedding dim {self.cfg.embedding_dim}"
            )
        x = ComplexTensors.from_complex(c)
        with torch.no_grad():
            logits, z = self(x.embeddings, x.relpos)
        return logits.numpy(), z.numpy()


# --------------------------------------------------------------------------
# checkpoints: JSON manifest + base64 little-endian f32 blobs


def _stable_name(name):
    if name.startswith("trunk.blocks."):
        _, _, n, rest = name.split(".", 3)
        return f"layer{n}.{rest}"
    return name


def _module_name(stable):
    if stable.startswith("layer"):
        n, rest = stable[5:].split(".", 1)
        return f"trunk.blocks.{n}.{rest}"
    return stable


def encode_state(model):
    """Base64 little-endian f32 blobs and shapes for every tensor, keyed by stable names."""
    tensors, shapes = {}, {}
    for name, t in model.state_dict().items():
        key = _stable_name(name)
        arr = t.detach().cpu().numpy().astype("<f4")
        shapes[key] = list(arr.shape)
        tensors[key] = base64.b64encode(arr.tobytes()).decode("ascii")
    return tensors, shapes


def load_state(model, blobs, shapes):
    """Inverse of ``encode_state``; any mismatch raises ``FormatError``."""
    expected = {_stable_name(k): v.shape for k, v in model.state_dict().items()}
    if not isinstance(blobs, dict) or not isinstance(shapes, dict) or set(expected) != set(blobs):
        raise FormatError("checkpoint tensors do not match the model layout")
    state = {}
    for key, blob in blobs.items():
        try:
            raw = base64.b64decode(blob, validate=True)
            arr = np.frombuffer(raw, dtype="<f4").reshape(shapes[key])
        except (ValueError, TypeError, KeyError) as exc:
            raise FormatError(f"tensor {key}: {exc}") from None
        if tuple(arr.shape) != tuple(expected[key]):
            raise FormatError(f"tensor {key} has shape {arr.shape}, expected {tuple(expected[key])}")
        state[_module_name(key)] = torch.as_tensor(arr.astype(np.float64))
    model.load_state_dict(state)
    return model


def save_checkpoint(model, extra=None):
    """JSON document ``{manifest: {config, seed, shapes, ...extra}, tensors}`` as bytes."""
    tensors, shapes = encode_state(model)
    doc = {
        "manifest": {"config": asdict(model.cfg), "seed": model.cfg.seed, "shapes": shapes, **(extra or {})},
        "tensors": tensors,
    }
    return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode()


def read_checkpoint(data):
    """``(manifest, tensors)`` of a checkpoint document, checked for the top-level layout."""
    from .complexmodel import load_json_document

    doc = load_json_document(data)
    if not isinstance(doc, dict) or not isinstance(doc.get("manifest"), dict) or not isinstance(doc.get("tensors"), dict):
        raise FormatError("checkpoint must hold a manifest and tensors")
    if not isinstance(doc["manifest"].get("config"), dict) or not isinstance(doc["manifest"].get("shapes"), dict):
        raise FormatError("checkpoint manifest needs config and shapes")
    return doc["manifest"], doc["tensors"]


def load_checkpoint(data):
    """Structure model and manifest from ``save_checkpoint`` bytes."""
    manifest, blobs = read_checkpoint(data)
    try:
        cfg = PairformerConfig(**manifest["config"])
    except (TypeError, InputError) as exc:
        raise FormatError(f"malformed checkpoint config: {exc}") from None
    return load_state(StructureModel(cfg), blobs, manifest["shapes"]), manifest
