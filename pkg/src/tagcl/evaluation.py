"""Link-prediction ranking metrics and the node-classification probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .encoder import DTYPE, EncoderParams, embed_nodes
from .graph import TextAttributedGraph

SPLIT_RATIOS = (0.7, 0.1, 0.2)


@dataclass(eq=False)
class RankedQuery:
    query: np.ndarray
    target: np.ndarray
    negatives: np.ndarray

    @property
    def rank(self) -> int:
        """1 + number of negatives scoring at least as high as the target."""
        q = np.asarray(self.query, dtype=np.float64)
        true = float(np.dot(q, self.target))
        neg = np.asarray(self.negatives, dtype=np.float64).reshape(-1, q.shape[0]) @ q
        return 1 + int(np.sum(neg >= true))


@dataclass(frozen=True)
class RankMetrics:
    p1: float
    ndcg: float
    mrr: float
    count: int

    def as_dict(self) -> dict[str, float]:
        return {"p1": self.p1, "ndcg": self.ndcg, "mrr": self.mrr, "queries": self.count}


def metrics_from_ranks(ranks: Sequence[int], ndcg_cutoff: int | None = None) -> RankMetrics:
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise ValueError("no queries to evaluate")
    if np.any(r < 1):
        raise ValueError("ranks start at 1")
    gains = 1.0 / np.log2(1.0 + r)
    if ndcg_cutoff is not None:
        gains = np.where(r <= ndcg_cutoff, gains, 0.0)
    return RankMetrics(float(np.mean(r == 1)), float(np.mean(gains)), float(np.mean(1.0 / r)), int(r.size))


def rank_metrics(queries: Sequence[RankedQuery], ndcg_cutoff: int | None = None) -> RankMetrics:
    """P@1, NDCG (one relevant item, so ideal DCG is 1) and MRR."""
    if not queries:
        raise ValueError("no queries to evaluate")
    return metrics_from_ranks([q.rank for q in queries], ndcg_cutoff)


@dataclass(eq=False)
class LinkResult:
    metrics: RankMetrics
    ranks: np.ndarray
    edges: np.ndarray


def sample_link_negatives(
    g: TextAttributedGraph, u: int, v: int, count: int, rng: np.random.Generator
) -> np.ndarray:
    excluded = np.zeros(g.node_count, dtype=bool)
    excluded[[u, v]] = True
    excluded[g.neighbors(u)] = True
    pool = np.flatnonzero(~excluded)
    if len(pool) < count:
        raise ValueError(f"only {len(pool)} candidate negatives for query {u}, need {count}")
    return rng.choice(pool, size=count, replace=False)


def rank_edges(
    emb: np.ndarray,
    g: TextAttributedGraph,
    edges: np.ndarray,
    negatives_per_query: int,
    rng: np.random.Generator,
) -> np.ndarray:
    ranks = np.empty(len(edges), dtype=np.int64)
    for r, (u, v) in enumerate(edges):
        neg = sample_link_negatives(g, int(u), int(v), negatives_per_query, rng)
        q = emb[u]
        true = q @ emb[v]
        ranks[r] = 1 + int(np.sum(emb[neg] @ q >= true))
    return ranks


def link_prediction_eval(
    params: EncoderParams | np.ndarray,
    g: TextAttributedGraph,
    test_edges: np.ndarray,
    negatives_per_query: int = 50,
    rng: np.random.Generator | None = None,
    ndcg_cutoff: int | None = None,
) -> LinkResult:
    """Rank each held-out edge's target among uniformly sampled non-neighbours.

    ``g`` is the training graph: its edges supply encoder neighbourhoods and
    the query's excluded neighbours. ``params`` may also be a precomputed
    (N, d) embedding matrix.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    edges = np.asarray(test_edges, dtype=np.int64).reshape(-1, 2)
    if isinstance(params, EncoderParams):
        with torch.no_grad():
            emb = embed_nodes(params, g).numpy()
    else:
        emb = np.asarray(params, dtype=np.float64)
    ranks = rank_edges(emb, g, edges, negatives_per_query, rng)
    return LinkResult(metrics_from_ranks(ranks, ndcg_cutoff), ranks, edges)


# ---------------------------------------------------------------------------
# node classification probe


@dataclass(frozen=True)
class ProbeConfig:
    hidden: int = 32
    epochs: int = 200
    learning_rate: float = 1e-2
    mode: str = "transductive"
    seed: int = 0
    ratios: tuple[float, float, float] = SPLIT_RATIOS

    def __post_init__(self):
        if self.mode not in ("transductive", "inductive"):
            raise ValueError("mode must be 'transductive' or 'inductive'")
        if abs(sum(self.ratios) - 1.0) > 1e-12 or min(self.ratios) < 0:
            raise ValueError("split ratios must be non-negative and sum to 1")


@dataclass(eq=False)
class ProbeResult:
    accuracy: float
    val_accuracy: float
    per_class: dict[int, float]
    best_epoch: int
    split: dict[str, np.ndarray] = field(repr=False)


def stratified_split(labels: np.ndarray, ratios=SPLIT_RATIOS, seed: int = 0) -> dict[str, np.ndarray]:
    """Per-class 7:1:2 split; every class keeps at least one training node."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    parts = {"train": [], "valid": [], "test": []}
    for c in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == c))
        n = len(members)
        n_test = int(round(ratios[2] * n))
        n_val = int(round(ratios[1] * n))
        n_train = n - n_test - n_val
        if n_train < 1:
            if n_test > 0:
                n_test -= 1
            elif n_val > 0:
                n_val -= 1
            n_train = n - n_test - n_val
        parts["train"].append(members[:n_train])
        parts["valid"].append(members[n_train : n_train + n_val])
        parts["test"].append(members[n_train + n_val :])
    return {k: np.sort(np.concatenate(v)) for k, v in parts.items()}


def node_classification_probe(
    embeddings: np.ndarray,
    labels: np.ndarray,
    cfg: ProbeConfig = ProbeConfig(),
    split: dict[str, np.ndarray] | None = None,
) -> ProbeResult:
    """Two-layer ReLU MLP on frozen embeddings.

    Trained with Adam on the training split, the epoch with the best
    validation accuracy is kept, accuracy is reported on the test split.
    Features are standardized with training-split statistics.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise ValueError("one label per embedding row required")
    split = stratified_split(y, cfg.ratios, cfg.seed) if split is None else split
    tr, va, te = split["train"], split["valid"], split["test"]
    classes = int(y.max()) + 1
    missing = set(np.unique(y[te]).tolist()) - set(np.unique(y[tr]).tolist())
    if missing:
        raise ValueError(f"classes {sorted(missing)} absent from the training split")

    mu, sd = x[tr].mean(axis=0), x[tr].std(axis=0)
    sd[sd < 1e-12] = 1.0
    xt = torch.from_numpy((x - mu) / sd)
    yt = torch.from_numpy(y.copy())

    gen = torch.Generator().manual_seed(cfg.seed)
    model = torch.nn.Sequential(
        torch.nn.Linear(x.shape[1], cfg.hidden, dtype=DTYPE),
        torch.nn.ReLU(),
        torch.nn.Linear(cfg.hidden, classes, dtype=DTYPE),
    )
    with torch.no_grad():
        for layer in (model[0], model[2]):
            bound = 1.0 / math.sqrt(layer.in_features)
            for prm in (layer.weight, layer.bias):
                prm.copy_(torch.empty(prm.shape, dtype=DTYPE).uniform_(-bound, bound, generator=gen))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    tr_t, va_t, te_t = (torch.from_numpy(s) for s in (tr, va, te))

    def accuracy(idx):
        if len(idx) == 0:
            return float("nan")
        with torch.no_grad():
            return float((model(xt[idx]).argmax(dim=1) == yt[idx]).to(DTYPE).mean())

    def val_loss(idx):
        with torch.no_grad():
            return float(torch.nn.functional.cross_entropy(model(xt[idx]), yt[idx]))

    sel = va_t if len(va) else tr_t
    best_val, best_loss, best_epoch = -1.0, math.inf, 0
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    for epoch in range(1, cfg.epochs + 1):
        opt.zero_grad()
        with torch.enable_grad():
            loss = torch.nn.functional.cross_entropy(model(xt[tr_t]), yt[tr_t])
            loss.backward()
        opt.step()
        val, vloss = accuracy(sel), val_loss(sel)
        # small validation sets saturate early; equal accuracy falls back to loss
        if val > best_val or (val == best_val and vloss < best_loss):
            best_val, best_loss, best_epoch = val, vloss, epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)

    with torch.no_grad():
        pred = model(xt[te_t]).argmax(dim=1).numpy()
    truth = y[te]
    per_class = {int(c): float(np.mean(pred[truth == c] == c)) for c in np.unique(truth)}
    return ProbeResult(
        accuracy=float(np.mean(pred == truth)) if len(te) else float("nan"),
        val_accuracy=best_val,
        per_class=per_class,
        best_epoch=best_epoch,
        split=split,
    )
