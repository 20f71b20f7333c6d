"""Planted-community text-attributed graphs (stochastic block model + community vocabularies)."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import TextAttributedGraph, write_tag


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    nodes: int = 200
    communities: int = 2
    p_in: float = 0.1
    p_out: float = 0.01
    tokens_per_node: int = 12
    vocab_per_community: int = 40
    shared_fraction: float = 0.0
    shared_vocab: int = 40
    seed: int = 0
    max_retries: int = 100

    def __post_init__(self):
        if self.communities < 1:
            raise ValueError("communities must be at least 1")
        if self.nodes < 2 * self.communities:
            raise ValueError("need at least two nodes per community")
        for name in ("p_in", "p_out", "shared_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tokens_per_node < 1 or self.vocab_per_community < 1 or self.shared_vocab < 1:
            raise ValueError("token and vocabulary sizes must be positive")


def community_sizes(n: int, c: int) -> np.ndarray:
    return np.array([n // c + (k < n % c) for k in range(c)], dtype=np.int64)


def generate_planted_tag(cfg: GenConfig) -> TextAttributedGraph:
    """Balanced SBM; labels are community ids, tokens come from community or shared pools.

    Edge sets are redrawn until every node has degree >= 1.
    """
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.nodes, cfg.communities
    labels = np.repeat(np.arange(c), community_sizes(n, c))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, cfg.p_in, cfg.p_out)
    iu = np.triu_indices(n, k=1)
    for _ in range(cfg.max_retries):
        hits = rng.random(len(iu[0])) < prob[iu]
        adj = np.zeros((n, n))
        adj[iu[0][hits], iu[1][hits]] = 1.0
        adj = adj + adj.T
        if adj.sum(axis=1).min() >= 1:
            break
    else:
        raise GenerationError(f"no edge draw without isolated nodes in {cfg.max_retries} attempts")

    vocab = [f"c{k}w{j}" for k in range(c) for j in range(cfg.vocab_per_community)]
    vocab += [f"sw{j}" for j in range(cfg.shared_vocab)]
    shared_offset = c * cfg.vocab_per_community
    tokens = []
    for i in range(n):
        shared = rng.random(cfg.tokens_per_node) < cfg.shared_fraction
        own = labels[i] * cfg.vocab_per_community + rng.integers(0, cfg.vocab_per_community, cfg.tokens_per_node)
        common = shared_offset + rng.integers(0, cfg.shared_vocab, cfg.tokens_per_node)
        tokens.append(np.where(shared, common, own).tolist())

    # renumber tokens by first appearance so write/load round-trips exactly
    order: dict[int, int] = {}
    seqs = tuple(tuple(order.setdefault(t, len(order)) for t in seq) for seq in tokens)
    inv = sorted(order, key=order.get)
    return TextAttributedGraph(
        adjacency=adj,
        tokens=seqs,
        vocab=tuple(vocab[t] for t in inv),
        node_ids=tuple(str(i) for i in range(n)),
        labels=labels,
        label_names=tuple(str(k) for k in range(c)),
    )


def write_metadata(cfg: GenConfig, path: str | Path) -> None:
    lines = [f"{k}={v}" for k, v in asdict(cfg).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_to_file(cfg: GenConfig, path: str | Path) -> TextAttributedGraph:
    """Write the graph file and a ``<path>.meta`` sidecar with the full config."""
    g = generate_planted_tag(cfg)
    write_tag(g, path)
    write_metadata(cfg, str(path) + ".meta")
    return g
