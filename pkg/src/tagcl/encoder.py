"""Tiny GNN-nested text encoder.

A single-head transformer over ``[summary slot, token_1 .. token_n]`` without
normalization layers. After every block the summary slot absorbs
``gate * mean(neighbor embeddings)``, so neighbourhood information is mixed
into the text encoding between blocks rather than after it. The final summary
slot is the node embedding.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .graph import TextAttributedGraph
from .ppr import ContextSubgraph

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 16
    layers: int = 2
    max_seq_len: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must leave room for the reserved mask token")
        if self.dim < 2 or self.layers < 1 or self.max_seq_len < 2:
            raise ValueError("need dim >= 2, layers >= 1, max_seq_len >= 2")

    @property
    def mask_token(self) -> int:
        """Reserved id (the last one) whose embedding replaces masked tokens."""
        return self.vocab_size - 1

    @classmethod
    def for_graph(cls, g: TextAttributedGraph, **kw) -> "EncoderConfig":
        return cls(vocab_size=g.vocab_size + 1, **kw)


def parameter_shapes(cfg: EncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, h = cfg.dim, 4 * cfg.dim
    shapes = [
        ("token_embedding", (cfg.vocab_size, d)),
        ("position_embedding", (cfg.max_seq_len, d)),
    ]
    for layer in range(cfg.layers):
        shapes += [
            (f"layers.{layer}.wq", (d, d)),
            (f"layers.{layer}.wk", (d, d)),
            (f"layers.{layer}.wv", (d, d)),
            (f"layers.{layer}.w1", (d, h)),
            (f"layers.{layer}.b1", (h,)),
            (f"layers.{layer}.w2", (h, d)),
            (f"layers.{layer}.b2", (d,)),
            (f"layers.{layer}.gate", ()),
        ]
    return shapes


@dataclass(eq=False)
class EncoderParams:
    config: EncoderConfig
    tensors: dict[str, torch.Tensor]

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def parameters(self) -> list[torch.Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.numel() for t in self.tensors.values())

    def requires_grad_(self, flag: bool = True) -> "EncoderParams":
        for t in self.tensors.values():
            t.requires_grad_(flag)
        return self

    def clone(self) -> "EncoderParams":
        return EncoderParams(self.config, {k: v.detach().clone() for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([t.detach().numpy().ravel() for t in self.tensors.values()])

    def with_flat(self, vec) -> "EncoderParams":
        """Same layout filled from a flat vector (numpy or torch; torch stays traceable)."""
        vec = torch.as_tensor(vec, dtype=DTYPE)
        out, pos = {}, 0
        for name, t in self.tensors.items():
            k = t.numel()
            out[name] = vec[pos : pos + k].reshape(t.shape)
            pos += k
        return EncoderParams(self.config, out)


def init_encoder(cfg: EncoderConfig) -> EncoderParams:
    """Uniform(-1/sqrt(d), 1/sqrt(d)) draws in declared parameter order."""
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / math.sqrt(cfg.dim)
    tensors = {}
    for name, shape in parameter_shapes(cfg):
        tensors[name] = torch.tensor(rng.uniform(-bound, bound, size=shape), dtype=DTYPE)
    return EncoderParams(cfg, tensors)


def zero_encoder(cfg: EncoderConfig) -> EncoderParams:
    return EncoderParams(cfg, {n: torch.zeros(s, dtype=DTYPE) for n, s in parameter_shapes(cfg)})


def save_checkpoint(p: EncoderParams, path: str | Path) -> None:
    arrays = {f"param:{n}": t.detach().numpy() for n, t in p.tensors.items()}
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(p.config), "order": list(p.tensors)}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path: str | Path) -> EncoderParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = EncoderConfig(**meta["config"])
        expected = [n for n, _ in parameter_shapes(cfg)]
        if meta["order"] != expected:
            raise ValueError("checkpoint parameter order does not match config")
        tensors = {n: torch.from_numpy(np.array(data[f"param:{n}"])) for n in expected}
    return EncoderParams(cfg, tensors)


def pack_sequences(seqs: Sequence[Sequence[int]], max_seq_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Truncate to max_seq_len - 1 tokens and right-pad with id 0."""
    width = max_seq_len - 1
    ids = np.zeros((len(seqs), width), dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for r, seq in enumerate(seqs):
        seq = list(seq)[:width]
        ids[r, : len(seq)] = seq
        lengths[r] = len(seq)
    return torch.from_numpy(ids), torch.from_numpy(lengths)


def forward(
    p: EncoderParams,
    ids: torch.Tensor,
    lengths: torch.Tensor,
    spans: torch.Tensor | None = None,
    neighbor_mean: torch.Tensor | None = None,
    mix: torch.Tensor | None = None,
    return_attention: bool = False,
):
    """Batched encoder pass.

    ids: (B, T-1) token ids, lengths: (B,) real token counts, spans: (B, 2)
    inclusive 1-based slot positions to mask (rows with span[0] == 0 are not
    masked), neighbor_mean: (B, d), mix: (B,) 0/1 weights switching the
    neighbour update per row. Returns (hiddens (B, T, d), node embeddings
    (B, d)) and optionally the per-layer attention matrices.
    """
    cfg = p.config
    b, t = ids.shape[0], cfg.max_seq_len
    slots = torch.arange(t)
    if spans is not None:
        pos = slots[1:][None, :]
        hit = (pos >= spans[:, :1]) & (pos <= spans[:, 1:]) & (spans[:, :1] > 0)
        ids = torch.where(hit, torch.full_like(ids, cfg.mask_token), ids)
    pos_emb = p["position_embedding"]
    tokens = p["token_embedding"][ids] + pos_emb[1:]
    x = torch.cat([pos_emb[0].expand(b, 1, cfg.dim), tokens], dim=1)
    valid = slots[None, :] <= lengths[:, None]
    key_bias = torch.zeros(b, 1, t, dtype=DTYPE).masked_fill(~valid[:, None, :], float("-inf"))
    scale = 1.0 / math.sqrt(cfg.dim)
    update = None
    if neighbor_mean is not None:
        weight = torch.ones(b, dtype=DTYPE) if mix is None else mix.to(DTYPE)
        update = neighbor_mean * weight[:, None]
    attentions = []
    for layer in range(cfg.layers):
        pre = f"layers.{layer}."
        q, k, v = x @ p[pre + "wq"], x @ p[pre + "wk"], x @ p[pre + "wv"]
        att = torch.softmax(q @ k.transpose(1, 2) * scale + key_bias, dim=-1)
        if return_attention:
            attentions.append(att)
        x = x + att @ v
        x = x + torch.tanh(x @ p[pre + "w1"] + p[pre + "b1"]) @ p[pre + "w2"] + p[pre + "b2"]
        if update is not None:
            summary = x[:, :1] + p[pre + "gate"] * update[:, None, :]
            x = torch.cat([summary, x[:, 1:]], dim=1)
    hiddens = x * valid[..., None].to(DTYPE)
    if return_attention:
        return hiddens, hiddens[:, 0], attentions
    return hiddens, hiddens[:, 0]


@dataclass(eq=False)
class NodeEncoding:
    token_hiddens: torch.Tensor
    node_embedding: torch.Tensor
    text_only_embedding: torch.Tensor
    length: int


def _as_span(mask, length: int) -> torch.Tensor:
    if mask is None:
        return torch.zeros(1, 2, dtype=torch.int64)
    i, j = mask
    if not 1 <= i <= j <= length:
        raise ValueError(f"mask span ({i}, {j}) outside token positions 1..{length}")
    return torch.tensor([[i, j]], dtype=torch.int64)


def encode_node(
    p: EncoderParams,
    g: TextAttributedGraph,
    v: int,
    neighbor_embeddings: Sequence[torch.Tensor] | torch.Tensor = (),
    mask: tuple[int, int] | None = None,
    mixing: bool = True,
) -> NodeEncoding:
    ids, lengths = pack_sequences([g.tokens[v]], p.config.max_seq_len)
    span = _as_span(mask, int(lengths[0]))
    text_h, text_emb = forward(p, ids, lengths, span)
    if mixing and len(neighbor_embeddings) > 0:
        nb = torch.stack(list(neighbor_embeddings)) if not torch.is_tensor(neighbor_embeddings) else neighbor_embeddings
        hid, emb = forward(p, ids, lengths, span, neighbor_mean=nb.mean(dim=0, keepdim=True))
    else:
        hid, emb = text_h, text_emb
    return NodeEncoding(hid[0], emb[0], text_emb[0], int(lengths[0]))


def span_representation(enc: NodeEncoding, i: int, j: int) -> torch.Tensor:
    """Mean of token hidden rows i..j (1-based slot positions, inclusive)."""
    if not 1 <= i <= j <= enc.length:
        raise ValueError(f"span ({i}, {j}) outside token positions 1..{enc.length}")
    return enc.token_hiddens[i : j + 1].mean(dim=0)


def text_embeddings(p: EncoderParams, seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    ids, lengths = pack_sequences(seqs, p.config.max_seq_len)
    return forward(p, ids, lengths)[1]


def mean_matrix(rows: Sequence[Sequence[int]], width: int) -> torch.Tensor:
    """Row r averages the listed columns; empty rows are all zero."""
    m = np.zeros((len(rows), width))
    for r, cols in enumerate(rows):
        if len(cols):
            np.add.at(m[r], np.asarray(cols, dtype=np.int64), 1.0 / len(cols))
    return torch.from_numpy(m)


def encode_subgraph(p: EncoderParams, sub: ContextSubgraph) -> torch.Tensor:
    """Readout (mean) over member embeddings after one aggregation round."""
    ids, lengths = pack_sequences(sub.tokens, p.config.max_seq_len)
    text = forward(p, ids, lengths)[1]
    rows = [np.flatnonzero(r) for r in sub.adjacency]
    mix = torch.tensor([len(r) > 0 for r in rows], dtype=DTYPE)
    nb = mean_matrix(rows, sub.size) @ text
    members = forward(p, ids, lengths, neighbor_mean=nb, mix=mix)[1]
    return members.mean(dim=0)


def embed_nodes(p: EncoderParams, g: TextAttributedGraph, nodes: Sequence[int] | None = None) -> torch.Tensor:
    """f_theta for the requested nodes using all of their neighbours in ``g``."""
    n = g.node_count
    nodes = np.arange(n) if nodes is None else np.asarray(nodes, dtype=np.int64)
    text = text_embeddings(p, g.tokens)
    rows = [g.neighbors(v) for v in nodes]
    mix = torch.tensor([len(r) > 0 for r in rows], dtype=DTYPE)
    ids, lengths = pack_sequences([g.tokens[v] for v in nodes], p.config.max_seq_len)
    nb = mean_matrix(rows, n) @ text
    return forward(p, ids, lengths, neighbor_mean=nb, mix=mix)[1]
