"""HFC-aware spectral contrastive loss and the five hierarchical objectives.

Every objective builds a :class:`ContrastiveBatch` and scores it with
:func:`hfc_loss`. Discrete choices (negative selection, which negatives get
mixed, shuffles) are either drawn from a :class:`BatchPlan` or recorded in a
``choices`` dict so a second evaluation at perturbed parameters can replay
them exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .encoder import DTYPE, EncoderParams, forward, mean_matrix, pack_sequences
from .graph import TextAttributedGraph
from .ppr import ContextSubgraph, ImportanceMatrix, most_important_neighbor, sample_subgraph

TERMS = ("tc", "nc", "sc", "tnc", "nsc")
MIN_TAU = 1e-12


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    lambdas: tuple[float, float, float, float, float] = (1.0, 1.0, 1.0, 1.0, 1.0)
    select_ratio: float = 0.5
    select_keep: str = "lowest"
    tau_epsilon: float = 1.0
    mix_beta_range: tuple[float, float] = (0.6, 0.9)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if len(self.lambdas) != len(TERMS) or any(w < 0 for w in self.lambdas):
            raise ValueError("need five non-negative lambda weights")
        if not 0.0 < self.select_ratio <= 1.0:
            raise ValueError("select_ratio must lie in (0, 1]")
        if self.select_keep not in ("lowest", "highest"):
            raise ValueError("select_keep must be 'lowest' or 'highest'")
        if self.tau_epsilon <= 0:
            raise ValueError("tau_epsilon must be positive")
        lo, hi = self.mix_beta_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError("mix_beta_range must be an interval inside (0, 1)")

    def weight(self, term: str) -> float:
        return self.lambdas[TERMS.index(term)]


@dataclass(eq=False)
class ContrastiveBatch:
    """Anchors/positives (M, d); negatives padded to (M, K, d) with a validity mask."""

    anchors: torch.Tensor
    positives: torch.Tensor
    negatives: torch.Tensor
    neg_mask: torch.Tensor

    def __post_init__(self):
        m, d = self.anchors.shape
        if m < 1:
            raise ValueError("batch needs at least one anchor")
        if self.positives.shape != (m, d) or self.negatives.shape[0] != m or self.negatives.shape[2] != d:
            raise ValueError("anchor, positive and negative dimensions disagree")
        if not bool(self.neg_mask.any(dim=1).all()):
            raise ValueError("every anchor needs at least one negative")

    @classmethod
    def from_lists(cls, anchors, positives, negatives) -> "ContrastiveBatch":
        a = torch.stack([torch.as_tensor(x, dtype=DTYPE) for x in anchors])
        p = torch.stack([torch.as_tensor(x, dtype=DTYPE) for x in positives])
        if len(negatives) != a.shape[0]:
            raise ValueError("one negative list per anchor required")
        k = max(len(ns) for ns in negatives)
        if min(len(ns) for ns in negatives) == 0:
            raise ValueError("every anchor needs at least one negative")
        d = a.shape[1]
        rows, mask = [], torch.zeros(a.shape[0], k, dtype=torch.bool)
        for r, ns in enumerate(negatives):
            ns = [torch.as_tensor(x, dtype=DTYPE) for x in ns]
            if any(x.shape != (d,) for x in ns):
                raise ValueError("negative dimension disagrees with anchors")
            pad = [torch.zeros(d, dtype=DTYPE)] * (k - len(ns))
            rows.append(torch.stack(ns + pad))
            mask[r, : len(ns)] = True
        return cls(a, p, torch.stack(rows), mask)


def _terms(b: ContrastiveBatch) -> tuple[torch.Tensor, torch.Tensor]:
    pos = (b.anchors * b.positives).sum(dim=-1)
    sq = torch.einsum("md,mkd->mk", b.anchors, b.negatives) ** 2
    w = b.neg_mask.to(DTYPE)
    neg = (sq * w).sum(dim=1) / w.sum(dim=1)
    return pos, neg


def hfc_loss(b: ContrastiveBatch, alpha: float) -> torch.Tensor:
    """Mean over anchors of -2*alpha*<a, p> + mean_n <a, n>^2."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    pos, neg = _terms(b)
    return ((-2.0 * alpha) * pos + neg).mean()


def spectral_loss(b: ContrastiveBatch) -> torch.Tensor:
    """Plain spectral contrastive loss (no HFC rate)."""
    pos, neg = _terms(b)
    return (-2.0 * pos + neg).mean()


def node_temperature(token_hiddens, h_v, eps: float = 1.0) -> torch.Tensor:
    """Mean token distance to h_v divided by log(|H_v| + eps)."""
    h = torch.as_tensor(token_hiddens, dtype=DTYPE)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("need a non-empty list of token hidden states")
    if eps <= 0:
        raise ValueError("eps must be positive")
    n = h.shape[0]
    dist = torch.linalg.vector_norm(h - torch.as_tensor(h_v, dtype=DTYPE), dim=1).sum()
    return dist / (n * math.log(n + eps))


def scaled_similarity(h_span, h_v, tau) -> torch.Tensor:
    tau = float(tau)
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return torch.dot(torch.as_tensor(h_span, dtype=DTYPE), torch.as_tensor(h_v, dtype=DTYPE)) / tau


def selection_size(ratio: float, count: int) -> int:
    return max(1, min(count, math.ceil(ratio * count)))


def _select_indices(scores: np.ndarray, ratio: float, keep: str = "lowest") -> np.ndarray:
    """Positions kept by negative selection, returned in input order."""
    n = selection_size(ratio, len(scores))
    key = scores if keep == "lowest" else -scores
    chosen = np.argsort(key, kind="stable")[:n]
    return np.sort(chosen)


def select_negatives(query_node_rep, candidates: Sequence[tuple], ratio: float, keep: str = "lowest") -> list:
    """Keep the ceil(ratio * count) candidates least similar to the query's node.

    Each candidate is ``(rep, owner_tau)``; its score is
    ``<rep, query_node_rep> / owner_tau``. Ties keep the earlier candidate and
    the output preserves input order.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    if not candidates:
        raise ValueError("no candidates")
    scores = np.array([float(scaled_similarity(rep, query_node_rep, tau)) for rep, tau in candidates])
    return [candidates[i] for i in _select_indices(scores, ratio, keep)]


def mix_count(n: int) -> int:
    return max(1, n // 2)


def mix_hard_negatives(anchor, negatives: Sequence, beta_range: tuple[float, float], rng: np.random.Generator) -> list:
    """Replace the most anchor-similar half of the negatives by beta*n + (1-beta)*anchor.

    Output positions match the input positions.
    """
    if not negatives:
        raise ValueError("no negatives")
    lo, hi = beta_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError("beta_range must be an interval inside [0, 1]")
    a = torch.as_tensor(anchor, dtype=DTYPE)
    negs = [torch.as_tensor(n, dtype=DTYPE) for n in negatives]
    sims = np.array([float(torch.dot(a, n)) for n in negs])
    chosen = np.argsort(-sims, kind="stable")[: mix_count(len(negs))]
    out = list(negs)
    for i in chosen:
        beta = rng.uniform(lo, hi)
        out[i] = beta * negs[i] + (1.0 - beta) * a
    return out


def shuffle_permutation(m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of range(m), redrawn until it is not the identity."""
    if m < 2:
        raise ValueError("shuffle corruption needs at least two items")
    ident = np.arange(m)
    while True:
        perm = rng.permutation(m)
        if not np.array_equal(perm, ident):
            return perm


def shuffle_corrupt(reps: Sequence, rng: np.random.Generator) -> list:
    perm = shuffle_permutation(len(reps), rng)
    return [reps[i] for i in perm]


def total_loss(losses: dict[str, torch.Tensor] | Sequence, cfg: LossConfig):
    if isinstance(losses, dict):
        losses = [losses[t] for t in TERMS]
    if any(w < 0 for w in cfg.lambdas):
        raise ValueError("lambda weights must be non-negative")
    total = 0.0
    for w, value in zip(cfg.lambdas, losses):
        if w != 0.0:
            total = total + w * value
    return total


# ---------------------------------------------------------------------------
# batch materials


@dataclass(eq=False)
class BatchPlan:
    """Everything random about one training batch, drawn before any encoding."""

    nodes: np.ndarray
    spans: np.ndarray
    neighbors: list[np.ndarray]
    subgraphs: list[ContextSubgraph]
    partners: np.ndarray
    partner_subgraphs: list[ContextSubgraph]
    betas: np.ndarray
    perm_tnc: np.ndarray
    perm_nsc: np.ndarray

    @property
    def size(self) -> int:
        return len(self.nodes)


def make_plan(
    g: TextAttributedGraph,
    importance: ImportanceMatrix,
    nodes: Sequence[int],
    rng: np.random.Generator,
    subgraph_k: int = 4,
    neighbor_cap: int = 5,
    span_length_range: tuple[int, int] = (1, 3),
    max_seq_len: int = 16,
    beta_range: tuple[float, float] = (0.6, 0.9),
    subgraph_cache: dict | None = None,
) -> BatchPlan:
    nodes = np.asarray(nodes, dtype=np.int64)
    b = len(nodes)
    if b < 2:
        raise ValueError("a contrastive batch needs at least two nodes")
    k = min(subgraph_k, g.node_count)
    cache = {} if subgraph_cache is None else subgraph_cache

    def subgraph(i: int) -> ContextSubgraph:
        if i not in cache:
            cache[i] = sample_subgraph(g, importance, i, k)
        return cache[i]

    spans = np.zeros((b, 2), dtype=np.int64)
    neighbors = []
    for r, v in enumerate(nodes):
        n_tok = min(len(g.tokens[v]), max_seq_len - 1)
        lo, hi = span_length_range
        length = min(int(rng.integers(lo, hi + 1)), n_tok)
        start = int(rng.integers(1, n_tok - length + 2))
        spans[r] = (start, start + length - 1)
        nb = g.neighbors(v)
        if len(nb) > neighbor_cap:
            nb = np.sort(rng.choice(nb, size=neighbor_cap, replace=False))
        neighbors.append(np.asarray(nb, dtype=np.int64))
    partners = np.array([most_important_neighbor(importance, int(v)) for v in nodes], dtype=np.int64)
    lo, hi = beta_range
    return BatchPlan(
        nodes=nodes,
        spans=spans,
        neighbors=neighbors,
        subgraphs=[subgraph(int(v)) for v in nodes],
        partners=partners,
        partner_subgraphs=[subgraph(int(u)) for u in partners],
        betas=rng.uniform(lo, hi, size=(b, b)),
        perm_tnc=shuffle_permutation(b, rng),
        perm_nsc=shuffle_permutation(b, rng),
    )


@dataclass(eq=False)
class BatchViews:
    hiddens: torch.Tensor
    hiddens_masked: torch.Tensor
    lengths: torch.Tensor
    node_emb: torch.Tensor
    text_emb: torch.Tensor
    neighbor_mean: torch.Tensor
    has_neighbors: np.ndarray
    sub_emb: torch.Tensor
    partner_sub_emb: torch.Tensor


def encode_batch(p: EncoderParams, g: TextAttributedGraph, plan: BatchPlan) -> BatchViews:
    """Two batched passes: text-only over every node touched, then all contextual instances."""
    b = plan.size
    subs = plan.subgraphs + plan.partner_subgraphs
    touched = set(plan.nodes.tolist())
    for nb in plan.neighbors:
        touched.update(nb.tolist())
    for sub in subs:
        touched.update(sub.member_ids)
    universe = sorted(touched)
    row = {v: r for r, v in enumerate(universe)}
    t_len = p.config.max_seq_len

    ids_u, len_u = pack_sequences([g.tokens[v] for v in universe], t_len)
    text_u = forward(p, ids_u, len_u)[1]

    inst_nodes: list[int] = []
    inst_nbrs: list[list[int]] = []
    for v, nb in zip(plan.nodes, plan.neighbors):
        inst_nodes.append(int(v))
        inst_nbrs.append([row[u] for u in nb])
    inst_nodes = inst_nodes + inst_nodes
    inst_nbrs = inst_nbrs + inst_nbrs
    segments = []
    for sub in subs:
        start = len(inst_nodes)
        for r, v in enumerate(sub.member_ids):
            inst_nodes.append(v)
            inst_nbrs.append([row[sub.member_ids[c]] for c in np.flatnonzero(sub.adjacency[r])])
        segments.append(list(range(start, len(inst_nodes))))

    ids, lengths = pack_sequences([g.tokens[v] for v in inst_nodes], t_len)
    spans = torch.zeros(len(inst_nodes), 2, dtype=torch.int64)
    spans[b : 2 * b] = torch.from_numpy(plan.spans)
    nb_mean = mean_matrix(inst_nbrs, len(universe)) @ text_u
    mix = torch.tensor([len(n) > 0 for n in inst_nbrs], dtype=DTYPE)
    hid, emb = forward(p, ids, lengths, spans, neighbor_mean=nb_mean, mix=mix)

    readout = mean_matrix(segments, len(inst_nodes)) @ emb
    node_rows = [row[int(v)] for v in plan.nodes]
    return BatchViews(
        hiddens=hid[:b],
        hiddens_masked=hid[b : 2 * b],
        lengths=lengths[:b],
        node_emb=emb[:b],
        text_emb=text_u[node_rows],
        neighbor_mean=nb_mean[:b],
        has_neighbors=np.array([len(n) > 0 for n in plan.neighbors]),
        sub_emb=readout[:b],
        partner_sub_emb=readout[b:],
    )


def _span_means(hiddens: torch.Tensor, spans: np.ndarray) -> torch.Tensor:
    t = hiddens.shape[1]
    slots = np.arange(t)[None, :]
    w = ((slots >= spans[:, :1]) & (slots <= spans[:, 1:])).astype(np.float64)
    w /= w.sum(axis=1, keepdims=True)
    return torch.einsum("bt,btd->bd", torch.from_numpy(w), hiddens)


def _full_spans(lengths: torch.Tensor) -> np.ndarray:
    n = lengths.numpy()
    return np.stack([np.ones_like(n), n], axis=1)


def _gather_batch(anchors, positives, pool, neg_index: list[np.ndarray], keep: list[int], mixed=None):
    """Assemble a padded ContrastiveBatch for the anchors listed in ``keep``."""
    k = max(len(neg_index[m]) for m in keep)
    d = anchors.shape[1]
    idx = np.zeros((len(keep), k), dtype=np.int64)
    mask = np.zeros((len(keep), k), dtype=bool)
    for r, m in enumerate(keep):
        idx[r, : len(neg_index[m])] = neg_index[m]
        mask[r, : len(neg_index[m])] = True
    negs = pool[torch.from_numpy(idx)]
    if mixed is not None:
        negs = mixed(keep, idx, mask, negs)
    keep_t = torch.tensor(keep, dtype=torch.int64)
    return ContrastiveBatch(anchors[keep_t], positives[keep_t], negs.reshape(len(keep), k, d), torch.from_numpy(mask))


def _zero() -> torch.Tensor:
    return torch.zeros((), dtype=DTYPE)


def tc_loss(views: BatchViews, plan: BatchPlan, cfg: LossConfig, alpha: float | None = None, choices: dict | None = None):
    """Masked-span vs. unmasked-span, negatives = selected spans of other batch nodes."""
    alpha = cfg.alpha if alpha is None else alpha
    choices = {} if choices is None else choices
    anchors = _span_means(views.hiddens, plan.spans)
    positives = _span_means(views.hiddens_masked, plan.spans)
    if "tc" not in choices:
        with torch.no_grad():
            taus = np.array(
                [
                    max(float(node_temperature(views.hiddens[m, 1 : int(views.lengths[m]) + 1], views.node_emb[m], cfg.tau_epsilon)), MIN_TAU)
                    for m in range(plan.size)
                ]
            )
            # sims[m, c] = <span_c, h_m> / tau_c
            sims = (views.node_emb @ anchors.T).numpy() / taus[None, :]
        picked = []
        for m in range(plan.size):
            cand = np.flatnonzero(plan.nodes != plan.nodes[m])
            picked.append(cand[_select_indices(sims[m, cand], cfg.select_ratio, cfg.select_keep)] if len(cand) else cand)
        choices["tc"] = picked
    picked = choices["tc"]
    keep = [m for m in range(plan.size) if len(picked[m])]
    if not keep:
        return _zero()
    return hfc_loss(_gather_batch(anchors, positives, anchors, picked, keep), alpha)


def nc_loss(views: BatchViews, plan: BatchPlan, cfg: LossConfig, alpha: float | None = None, choices: dict | None = None):
    """Text-only embedding vs. neighbour mean, with mixup-hardened negatives."""
    alpha = cfg.alpha if alpha is None else alpha
    choices = {} if choices is None else choices
    anchors, positives = views.text_emb, views.neighbor_mean
    negs = [np.flatnonzero(plan.nodes != plan.nodes[m]) for m in range(plan.size)]
    if "nc" not in choices:
        with torch.no_grad():
            sims = (anchors @ anchors.T).numpy()
        mixed_sets = []
        for m in range(plan.size):
            order = np.argsort(-sims[m, negs[m]], kind="stable")
            mixed_sets.append(negs[m][order[: mix_count(len(negs[m]))]] if len(negs[m]) else negs[m])
        choices["nc"] = mixed_sets
    mixed_sets = choices["nc"]
    keep = [m for m in range(plan.size) if len(negs[m]) and views.has_neighbors[m]]
    if not keep:
        return _zero()

    def mix(keep_rows, idx, mask, pool_negs):
        beta = np.ones(idx.shape)
        for r, m in enumerate(keep_rows):
            hit = np.isin(idx[r], mixed_sets[m]) & mask[r]
            beta[r, hit] = plan.betas[m, idx[r, hit]]
        beta_t = torch.from_numpy(beta)[..., None]
        a = anchors[torch.tensor(keep_rows)][:, None, :]
        return beta_t * pool_negs + (1.0 - beta_t) * a

    return hfc_loss(_gather_batch(anchors, positives, anchors, negs, keep, mixed=mix), alpha)


def sc_loss(views: BatchViews, plan: BatchPlan, cfg: LossConfig, alpha: float | None = None, choices: dict | None = None):
    """Own context subgraph vs. the most important neighbour's; other subgraphs are negatives."""
    alpha = cfg.alpha if alpha is None else alpha
    negs = []
    for m in range(plan.size):
        bad = (plan.nodes == plan.nodes[m]) | (plan.nodes == plan.partners[m])
        negs.append(np.flatnonzero(~bad))
    keep = [m for m in range(plan.size) if len(negs[m])]
    if not keep:
        return _zero()
    return hfc_loss(_gather_batch(views.sub_emb, views.partner_sub_emb, views.sub_emb, negs, keep), alpha)


def _shuffled_negatives(plan: BatchPlan, perm: np.ndarray) -> list[np.ndarray]:
    # a shuffled partner that is the anchor's own node would be its positive
    return [perm[m : m + 1] if plan.nodes[perm[m]] != plan.nodes[m] else perm[:0] for m in range(plan.size)]


def tnc_loss(views: BatchViews, plan: BatchPlan, cfg: LossConfig, alpha: float | None = None, choices: dict | None = None):
    """Whole-sequence text representation vs. node embedding; shuffled node embeddings are negatives."""
    alpha = cfg.alpha if alpha is None else alpha
    anchors = _span_means(views.hiddens, _full_spans(views.lengths))
    negs = _shuffled_negatives(plan, plan.perm_tnc)
    keep = [m for m in range(plan.size) if len(negs[m])]
    if not keep:
        return _zero()
    return hfc_loss(_gather_batch(anchors, views.node_emb, views.node_emb, negs, keep), alpha)


def nsc_loss(views: BatchViews, plan: BatchPlan, cfg: LossConfig, alpha: float | None = None, choices: dict | None = None):
    """Node embedding vs. its context-subgraph readout; shuffled readouts are negatives."""
    alpha = cfg.alpha if alpha is None else alpha
    negs = _shuffled_negatives(plan, plan.perm_nsc)
    keep = [m for m in range(plan.size) if len(negs[m])]
    if not keep:
        return _zero()
    return hfc_loss(_gather_batch(views.node_emb, views.sub_emb, views.sub_emb, negs, keep), alpha)


LOSS_FUNCTIONS = {"tc": tc_loss, "nc": nc_loss, "sc": sc_loss, "tnc": tnc_loss, "nsc": nsc_loss}


def compute_losses(
    p: EncoderParams,
    g: TextAttributedGraph,
    plan: BatchPlan,
    cfg: LossConfig,
    choices: dict | None = None,
    alpha: float | None = None,
) -> dict[str, torch.Tensor]:
    views = encode_batch(p, g, plan)
    choices = {} if choices is None else choices
    return {t: fn(views, plan, cfg, alpha=alpha, choices=choices) for t, fn in LOSS_FUNCTIONS.items()}
