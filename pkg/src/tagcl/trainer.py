"""Training loop, gradient verification and the factorization-convergence check."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .encoder import EncoderConfig, EncoderParams, init_encoder
from .evaluation import link_prediction_eval
from .graph import GraphMatrices, TextAttributedGraph, build_matrices, from_edges
from .objectives import TERMS, LossConfig, compute_losses, make_plan, total_loss
from .ppr import ppr_importance
from .spectral import best_rank_k, eigendecompose, hfc_kernel, principal_angles

log = logging.getLogger(__name__)

VALIDATION_STREAM = 1_000_003


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = LossConfig()
    learning_rate: float = 1e-2
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 2
    subgraph_k: int = 4
    alpha_ppr: float = 0.15
    seed: int = 0
    span_length_range: tuple[int, int] = (1, 3)
    neighbor_cap: int = 5
    val_negatives: int = 50

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 2 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("invalid training hyperparameters")
        if self.subgraph_k < 1 or self.neighbor_cap < 1 or not 0 < self.alpha_ppr <= 1:
            raise ValueError("invalid sampler hyperparameters")
        lo, hi = self.span_length_range
        if not 1 <= lo <= hi:
            raise ValueError("span_length_range must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class EdgeSplits:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez(fh, train=self.train, valid=self.valid, test=self.test)

    @classmethod
    def load(cls, path: str | Path) -> "EdgeSplits":
        with np.load(path) as data:
            return cls(data["train"], data["valid"], data["test"])


def split_edges(g: TextAttributedGraph, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> EdgeSplits:
    """Random 7:1:2 edge split.

    A node that would lose every training edge gets one of its held-out
    edges moved back, so the training graph has no isolated nodes.
    """
    rng = np.random.default_rng(seed)
    edges = g.edges()[rng.permutation(len(g.edges()))]
    n_train = int(round(ratios[0] * len(edges)))
    n_valid = int(round(ratios[1] * len(edges)))
    part = np.full(len(edges), 2)
    part[:n_train] = 0
    part[n_train : n_train + n_valid] = 1
    covered = np.zeros(g.node_count, dtype=bool)
    covered[edges[part == 0].ravel()] = True
    for e in range(len(edges)):
        u, v = edges[e]
        if part[e] != 0 and not (covered[u] and covered[v]):
            part[e] = 0
            covered[[u, v]] = True

    def pick(k):
        sel = edges[part == k]
        return sel[np.lexsort((sel[:, 1], sel[:, 0]))] if len(sel) else sel.reshape(0, 2)

    return EdgeSplits(pick(0), pick(1), pick(2))


def subsample_edges(edges: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if fraction == 1.0:
        return edges
    rng = np.random.default_rng([seed, 7])
    k = max(1, int(round(fraction * len(edges))))
    keep = np.sort(rng.choice(len(edges), size=k, replace=False))
    return edges[keep]


@dataclass
class EpochRecord:
    epoch: int
    losses: dict[str, float]
    total: float
    val_p1: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0

    @property
    def best_p1(self) -> float:
        return max((r.val_p1 for r in self.records), default=float("nan"))

    def rows(self) -> list[list]:
        return [[r.epoch, *(r.losses[t] for t in TERMS), r.total, r.val_p1] for r in self.records]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", *(f"l_{t}" for t in TERMS), "total", "val_p1"])
            for row in self.rows():
                w.writerow([row[0], *(repr(float(x)) for x in row[1:])])

    @classmethod
    def read_csv(cls, path: str | Path) -> "TrainHistory":
        h = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                h.records.append(
                    EpochRecord(
                        int(row["epoch"]),
                        {t: float(row[f"l_{t}"]) for t in TERMS},
                        float(row["total"]),
                        float(row["val_p1"]),
                    )
                )
        return h


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train(
    g: TextAttributedGraph,
    splits: EdgeSplits,
    cfg: TrainConfig = TrainConfig(),
    encoder_cfg: EncoderConfig | None = None,
    exclude_nodes: Sequence[int] = (),
    val_fn: Callable[[EncoderParams, int], float] | None = None,
) -> tuple[EncoderParams, TrainHistory]:
    """Minimize the weighted five-term objective with Adam and P@1 early stopping.

    Only training edges are visible. Nodes in ``exclude_nodes`` (and nodes
    left without training edges) never appear in a batch, a neighbour list or
    a context subgraph. Returns the parameters of the best validation epoch.
    """
    if len(splits.train) == 0:
        raise ValueError("no training edges")
    g_train = g.with_edges(splits.train)
    excluded = np.zeros(g.node_count, dtype=bool)
    excluded[np.asarray(exclude_nodes, dtype=np.int64)] = True
    work_edges = [(u, v) for u, v in splits.train if not (excluded[u] or excluded[v])]
    g_work = g.with_edges(work_edges)
    active = np.flatnonzero((g_work.degree() > 0) & ~excluded)
    if len(active) < 2:
        raise ValueError("fewer than two trainable nodes")
    g_work = g_work.induced(active)
    importance = ppr_importance(build_matrices(g_work), cfg.alpha_ppr)

    encoder_cfg = encoder_cfg or EncoderConfig.for_graph(g, seed=cfg.seed)
    params = init_encoder(encoder_cfg).requires_grad_(True)
    opt = torch.optim.Adam(params.parameters(), lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)

    if val_fn is None:
        val_edges = splits.valid if len(splits.valid) else splits.train

        def val_fn(p: EncoderParams, epoch: int) -> float:
            # same candidate draw every epoch so scores are comparable
            rng = np.random.default_rng([cfg.seed, VALIDATION_STREAM])
            return link_prediction_eval(p, g_train, val_edges, cfg.val_negatives, rng).metrics.p1

    history = TrainHistory()
    best_p1, best_params, stale = -math.inf, params.clone(), 0
    cache: dict = {}
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(active))
        sums = dict.fromkeys(TERMS, 0.0)
        total_sum, n_batches = 0.0, 0
        for bi, batch in enumerate(_batches(order, cfg.batch_size)):
            rng = np.random.default_rng([cfg.seed, epoch, bi])
            plan = make_plan(
                g_work,
                importance,
                batch,
                rng,
                subgraph_k=cfg.subgraph_k,
                neighbor_cap=cfg.neighbor_cap,
                span_length_range=cfg.span_length_range,
                max_seq_len=encoder_cfg.max_seq_len,
                beta_range=cfg.loss.mix_beta_range,
                subgraph_cache=cache,
            )
            losses = compute_losses(params, g_work, plan, cfg.loss)
            for t in TERMS:
                if not torch.isfinite(losses[t]):
                    raise NumericalFailure(f"non-finite {t} loss at epoch {epoch}, batch {bi}")
            total = total_loss(losses, cfg.loss)
            opt.zero_grad()
            if torch.is_tensor(total) and total.requires_grad:
                total.backward()
                opt.step()
            for t in TERMS:
                sums[t] += float(torch.as_tensor(losses[t]).detach())
            total_sum += float(torch.as_tensor(total).detach())
            n_batches += 1
        with torch.no_grad():
            p1 = float(val_fn(params, epoch))
        rec = EpochRecord(epoch, {t: sums[t] / n_batches for t in TERMS}, total_sum / n_batches, p1)
        history.records.append(rec)
        log.info("epoch %d total=%.5f val_p1=%.4f", epoch, rec.total, p1)
        if p1 > best_p1:
            best_p1, best_params, stale = p1, params.clone(), 0
            history.best_epoch = epoch
        else:
            stale += 1
        history.stop_epoch = epoch
        if stale >= cfg.patience:
            break
    return best_params, history


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradientReport:
    max_rel_error: dict[str, float]
    trials: int
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def tiny_problem(seed: int, nodes: int = 6, vocab: int = 6, tokens: tuple[int, int] = (2, 5)):
    """Small connected random TAG for gradient checks."""
    rng = np.random.default_rng(seed)
    while True:
        a = np.triu(rng.random((nodes, nodes)) < 0.5, k=1)
        a = a | a.T
        if a.sum(axis=1).min() > 0:
            break
    edges = [(int(u), int(v)) for u, v in zip(*np.nonzero(np.triu(a, 1)))]
    toks = [[f"t{int(x)}" for x in rng.integers(0, vocab, rng.integers(tokens[0], tokens[1] + 1))] for _ in range(nodes)]
    return from_edges(nodes, edges, toks)


def gradient_check_instance(
    params: EncoderParams,
    g: TextAttributedGraph,
    plan,
    loss_cfg: LossConfig,
    step: float = 1e-5,
    corrupt: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> dict[str, float]:
    """Per-term relative error between autograd and central differences.

    Discrete choices made at the base point are replayed at every perturbed
    point so the finite differences see the same smooth branch.
    """
    p = params.clone().requires_grad_(True)
    choices: dict = {}
    losses = compute_losses(p, g, plan, loss_cfg, choices=choices)
    analytic = {}
    for t in TERMS:
        if losses[t].requires_grad:
            grads = torch.autograd.grad(losses[t], p.parameters(), retain_graph=True, allow_unused=True)
            vec = np.concatenate(
                [(gr if gr is not None else torch.zeros_like(x)).detach().numpy().ravel() for gr, x in zip(grads, p.parameters())]
            )
        else:
            vec = np.zeros(p.count())
        analytic[t] = corrupt(t, vec) if corrupt else vec
    base = torch.from_numpy(params.flat())

    def evaluate(vec: torch.Tensor) -> torch.Tensor:
        out = compute_losses(params.with_flat(vec), g, plan, loss_cfg, choices=choices)
        return torch.stack([out[t] for t in TERMS])

    shift = step * torch.eye(base.numel(), dtype=base.dtype)
    with torch.no_grad():
        plus = torch.func.vmap(evaluate)(base + shift)
        minus = torch.func.vmap(evaluate)(base - shift)
    diff = ((plus - minus) / (2.0 * step)).numpy()
    numeric = {t: diff[:, j] for j, t in enumerate(TERMS)}
    return {t: relative_error(analytic[t], numeric[t]) for t in TERMS}


def check_gradients(
    loss_cfg: LossConfig = LossConfig(),
    trials: int = 50,
    seed: int = 0,
    dim: int = 4,
    layers: int = 1,
    max_seq_len: int = 5,
    batch: int = 4,
    step: float = 1e-5,
    zero_params: bool = False,
    corrupt: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradientReport:
    """Autograd vs. central differences for all five losses on random tiny instances."""
    if dim > 8:
        raise ValueError("gradient checks are limited to dim <= 8")
    worst = dict.fromkeys(TERMS, 0.0)
    for trial in range(trials):
        g = tiny_problem(seed * 100_003 + trial)
        enc = EncoderConfig.for_graph(g, dim=dim, layers=layers, max_seq_len=max_seq_len, seed=seed * 7919 + trial)
        params = init_encoder(enc)
        if zero_params:
            params = params.with_flat(np.zeros(params.count()))
        imp = ppr_importance(build_matrices(g))
        rng = np.random.default_rng([seed, trial])
        nodes = rng.choice(g.node_count, size=min(batch, g.node_count), replace=False)
        plan = make_plan(g, imp, nodes, rng, subgraph_k=3, neighbor_cap=3, max_seq_len=max_seq_len, beta_range=loss_cfg.mix_beta_range)
        errs = gradient_check_instance(params, g, plan, loss_cfg, step, corrupt)
        for t in TERMS:
            worst[t] = max(worst[t], errs[t])
    return GradientReport(worst, trials)


# ---------------------------------------------------------------------------
# factorization-convergence check


@dataclass
class Lemma1Report:
    residual: float
    oracle_residual: float
    ratio: float
    max_principal_angle: float
    eigengap: float
    residual_trace: np.ndarray = field(repr=False)

    def within(self, ratio_tol: float = 1.05, angle_tol: float = 0.05) -> bool:
        ratio_ok = self.residual <= ratio_tol * self.oracle_residual or self.residual < 1e-12
        return ratio_ok and self.max_principal_angle < angle_tol


def verify_lemma1(
    gm: GraphMatrices,
    alpha: float,
    k: int,
    steps: int = 5000,
    lr: float = 1e-2,
    seed: int = 0,
    init_scale: float = 0.1,
) -> Lemma1Report:
    """Gradient descent on ||(I - alpha L_sym) - F F^T||_F^2 against the Eckart-Young oracle.

    F is a free N x K matrix. The principal angle is measured between span(F)
    and the eigenvectors of the kernel's top-K positive eigenvalues.
    """
    n = gm.node_count
    if n > 30 or not 1 <= k <= n:
        raise ValueError("need N <= 30 and 1 <= K <= N")
    kern = hfc_kernel(gm, alpha).kernel
    _, oracle = best_rank_k(kern, k)
    dec = eigendecompose(kern)
    desc = dec.eigenvalues[::-1]
    gap = float(desc[k - 1] - desc[k]) if k < n else math.inf
    rng = np.random.default_rng(seed)
    f = init_scale * rng.standard_normal((n, k))
    trace = np.empty(steps + 1)
    for s in range(steps):
        r = kern - f @ f.T
        trace[s] = np.sum(r * r)
        f = f + lr * 4.0 * (r @ f)
    r = kern - f @ f.T
    trace[steps] = np.sum(r * r)
    positive = int(np.sum(desc[:k] > 0))
    if positive:
        top = dec.eigenvectors[:, ::-1][:, :positive]
        angle = float(np.max(principal_angles(f, top)[:positive]))
    else:
        angle = 0.0
    ratio = float(trace[-1] / oracle) if oracle > 0 else (1.0 if trace[-1] < 1e-12 else math.inf)
    return Lemma1Report(float(trace[-1]), oracle, ratio, angle, gap, trace)
