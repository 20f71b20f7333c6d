"""Personalized PageRank importance scores and context-subgraph extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphMatrices, TextAttributedGraph

DEFAULT_ALPHA_PPR = 0.15
# PPR scores closer than this (relative to the row maximum) count as ties
SCORE_TIE_TOL = 1e-12


class IsolatedNodeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImportanceMatrix:
    """Row i is the PPR distribution personalized at node i."""

    scores: np.ndarray
    teleport: float


@dataclass(frozen=True, eq=False)
class ContextSubgraph:
    center: int
    member_ids: tuple[int, ...]
    adjacency: np.ndarray
    tokens: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.member_ids)


def ppr_importance(gm: GraphMatrices, alpha_ppr: float = DEFAULT_ALPHA_PPR, invert: bool = True) -> ImportanceMatrix:
    """Solve pi_i = a e_i + (1 - a) A D^-1 pi_i for every source i.

    With ``invert=False`` the matrix a (I - (1 - a) A D^-1) is returned
    as printed, without the inverse; it is not a distribution.
    """
    if not 0.0 < alpha_ppr <= 1.0:
        raise ValueError(f"alpha_ppr must lie in (0, 1], got {alpha_ppr}")
    if np.any(gm.degree == 0):
        isolated = np.flatnonzero(gm.degree == 0)
        raise IsolatedNodeError(f"isolated nodes present: {isolated[:10].tolist()}")
    n = gm.node_count
    system = np.eye(n) - (1.0 - alpha_ppr) * gm.col_norm_adjacency
    if not invert:
        s = (alpha_ppr * system).T
    else:
        # columns of the solution are the personalized distributions
        pi = np.linalg.solve(system, alpha_ppr * np.eye(n))
        assert np.all(np.isfinite(pi)), "PPR system is singular"
        s = pi.T
    s = np.ascontiguousarray(s)
    s.setflags(write=False)
    return ImportanceMatrix(s, float(alpha_ppr))


def ppr_power_iteration(gm: GraphMatrices, alpha_ppr: float = DEFAULT_ALPHA_PPR, steps: int = 200) -> np.ndarray:
    """Fixed-point iteration of the PPR recurrence for all sources at once."""
    n = gm.node_count
    pi = np.eye(n)
    teleport = alpha_ppr * np.eye(n)
    for _ in range(steps):
        pi = teleport + (1.0 - alpha_ppr) * gm.col_norm_adjacency @ pi
    return pi.T


def top_rank(scores: np.ndarray, k: int, tie_tol: float = 0.0) -> np.ndarray:
    """Indices of the k largest scores, descending; ties go to the smaller index.

    With ``tie_tol`` > 0, scores within that fraction of the largest finite
    magnitude are treated as equal, so round-off cannot break exact ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    keys = scores
    finite = np.isfinite(scores)
    if tie_tol > 0 and finite.any():
        scale = np.max(np.abs(scores[finite])) * tie_tol
        if scale > 0:
            keys = np.where(finite, np.round(scores / scale), scores)
    return np.argsort(-keys, kind="stable")[:k]


def sample_subgraph(g: TextAttributedGraph, s: ImportanceMatrix, i: int, k: int) -> ContextSubgraph:
    n = g.node_count
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    idx = [int(i)]
    if k > 1:
        row = np.array(s.scores[i], dtype=np.float64)
        row[i] = -np.inf
        idx.extend(int(j) for j in top_rank(row, k - 1, SCORE_TIE_TOL))
    adj = g.adjacency[np.ix_(idx, idx)]
    return ContextSubgraph(
        center=int(i),
        member_ids=tuple(idx),
        adjacency=adj,
        tokens=tuple(g.tokens[j] for j in idx),
    )


def most_important_neighbor(s: ImportanceMatrix, i: int) -> int:
    n = s.scores.shape[0]
    if n < 2:
        raise ValueError("need at least two nodes")
    row = np.array(s.scores[i], dtype=np.float64)
    row[i] = -np.inf
    return int(top_rank(row, 1, SCORE_TIE_TOL)[0])
