"""Text-attributed graph container, file format, and dense graph matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HEADER_MAGIC = "TAG"
FORMAT_VERSION = "v1"
NO_LABEL = "-"


class TagFormatError(ValueError):
    """Base class for graph-file parse failures; carries the 1-based line number."""

    reason = "malformed line"

    def __init__(self, lineno: int, detail: str = ""):
        self.lineno = lineno
        self.detail = detail
        msg = f"line {lineno}: {self.reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class MalformedLineError(TagFormatError):
    reason = "malformed line"


class DanglingEdgeError(TagFormatError):
    reason = "dangling edge endpoint"


class AsymmetricEdgeError(TagFormatError):
    reason = "asymmetric edge list"


class DuplicateEdgeError(TagFormatError):
    reason = "duplicate edge"


class SelfLoopError(TagFormatError):
    reason = "self-loop"


class EmptyTokenSequenceError(TagFormatError):
    reason = "empty token sequence"


class GraphValidationError(ValueError):
    pass


def _label_sort_key(name: str):
    return (0, int(name), "") if name.lstrip("-").isdigit() else (1, 0, name)


@dataclass(frozen=True, eq=False)
class TextAttributedGraph:
    """Undirected graph whose nodes carry token-id sequences.

    ``adjacency`` is a dense float64 0/1 matrix, symmetric with zero diagonal.
    ``tokens[i]`` holds ids into ``vocab``. ``labels`` (optional) are class ids
    into ``label_names``.
    """

    adjacency: np.ndarray
    tokens: tuple[tuple[int, ...], ...]
    vocab: tuple[str, ...]
    node_ids: tuple[str, ...]
    labels: np.ndarray | None = None
    label_names: tuple[str, ...] = ()
    _neighbors: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64)
        n = a.shape[0]
        if a.ndim != 2 or a.shape != (n, n) or n < 1:
            raise GraphValidationError("adjacency must be a non-empty square matrix")
        if not np.isin(a, (0.0, 1.0)).all():
            raise GraphValidationError("adjacency entries must be 0 or 1")
        if not np.array_equal(a, a.T):
            raise GraphValidationError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise GraphValidationError("adjacency must have a zero diagonal")
        if len(self.tokens) != n or len(self.node_ids) != n:
            raise GraphValidationError("tokens and node_ids must cover every node")
        if len(set(self.node_ids)) != n:
            raise GraphValidationError("node ids must be unique")
        v = len(self.vocab)
        toks = tuple(tuple(int(t) for t in seq) for seq in self.tokens)
        for i, seq in enumerate(toks):
            if not seq:
                raise GraphValidationError(f"node {self.node_ids[i]}: empty token sequence")
            if min(seq) < 0 or max(seq) >= v:
                raise GraphValidationError(f"node {self.node_ids[i]}: token id out of range")
        labels = None
        if self.labels is not None:
            labels = np.array(self.labels, dtype=np.int64)
            if labels.shape != (n,):
                raise GraphValidationError("labels must cover every node")
            if labels.min() < 0 or (self.label_names and labels.max() >= len(self.label_names)):
                raise GraphValidationError("label id out of range")
            labels.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "labels", labels)
        nbrs = tuple(np.flatnonzero(row) for row in a)
        object.__setattr__(self, "_neighbors", nbrs)

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def num_classes(self) -> int:
        if self.labels is None:
            return 0
        return max(len(self.label_names), int(self.labels.max()) + 1)

    def neighbors(self, i: int) -> np.ndarray:
        return self._neighbors[i]

    def degree(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self) -> np.ndarray:
        """Undirected edges as an (E, 2) int array with u < v, lexicographic order."""
        u, v = np.nonzero(np.triu(self.adjacency, k=1))
        return np.stack([u, v], axis=1).astype(np.int64)

    def with_edges(self, edges: Iterable[Sequence[int]]) -> "TextAttributedGraph":
        """Same nodes and text, adjacency rebuilt from ``edges``."""
        return TextAttributedGraph(
            adjacency=adjacency_from_edges(self.node_count, edges),
            tokens=self.tokens,
            vocab=self.vocab,
            node_ids=self.node_ids,
            labels=self.labels,
            label_names=self.label_names,
        )

    def induced(self, keep: Sequence[int]) -> "TextAttributedGraph":
        """Induced subgraph on ``keep`` (re-indexed in the given order)."""
        keep = np.asarray(keep, dtype=np.int64)
        return TextAttributedGraph(
            adjacency=self.adjacency[np.ix_(keep, keep)],
            tokens=tuple(self.tokens[i] for i in keep),
            vocab=self.vocab,
            node_ids=tuple(self.node_ids[i] for i in keep),
            labels=None if self.labels is None else self.labels[keep],
            label_names=self.label_names,
        )


def adjacency_from_edges(n: int, edges: Iterable[Sequence[int]]) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.float64)
    for u, v in edges:
        if u == v:
            raise GraphValidationError(f"self-loop at node {u}")
        a[u, v] = a[v, u] = 1.0
    return a


def from_edges(
    n: int,
    edges: Iterable[Sequence[int]],
    tokens: Sequence[Sequence[str]] | None = None,
    labels: Sequence[int] | None = None,
) -> TextAttributedGraph:
    """Convenience constructor; tokens default to one distinct word per node."""
    if tokens is None:
        tokens = [[f"w{i}"] for i in range(n)]
    vocab: dict[str, int] = {}
    ids = []
    for seq in tokens:
        ids.append(tuple(vocab.setdefault(t, len(vocab)) for t in seq))
    label_names: tuple[str, ...] = ()
    if labels is not None:
        label_names = tuple(str(c) for c in range(int(max(labels)) + 1))
    return TextAttributedGraph(
        adjacency=adjacency_from_edges(n, edges),
        tokens=tuple(ids),
        vocab=tuple(vocab),
        node_ids=tuple(str(i) for i in range(n)),
        labels=None if labels is None else np.asarray(labels),
        label_names=label_names,
    )


def load_tag(path: str | Path) -> TextAttributedGraph:
    """Parse a ``TAG v1`` file.

    Token ids are assigned in order of first appearance. Labels are mapped to
    class ids by sorted label name (numeric names sort numerically).
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedLineError(1, "missing header")
    head = lines[0].split()
    if len(head) != 4 or head[0] != HEADER_MAGIC or head[1] != FORMAT_VERSION:
        raise MalformedLineError(1, "expected 'TAG v1 <N> <E>'")
    try:
        n, e = int(head[2]), int(head[3])
    except ValueError:
        raise MalformedLineError(1, "non-integer node or edge count") from None
    if n < 1 or e < 0:
        raise MalformedLineError(1, "invalid node or edge count")
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(body) != n + e:
        raise MalformedLineError(len(lines), f"expected {n} node and {e} edge lines, found {len(body)} lines")

    vocab: dict[str, int] = {}
    index: dict[str, int] = {}
    node_ids, raw_labels, tokens, label_lines = [], [], [], []
    for lineno, ln in body[:n]:
        parts = ln.split()
        if len(parts) < 3 or parts[0] != "node":
            raise MalformedLineError(lineno, "expected 'node <id> <label> <tokens...>'")
        nid, label = parts[1], parts[2]
        if nid in index:
            raise MalformedLineError(lineno, f"duplicate node id {nid!r}")
        if len(parts) == 3:
            raise EmptyTokenSequenceError(lineno, f"node {nid!r}")
        index[nid] = len(node_ids)
        node_ids.append(nid)
        raw_labels.append(label)
        label_lines.append(lineno)
        tokens.append(tuple(vocab.setdefault(t, len(vocab)) for t in parts[3:]))

    a = np.zeros((n, n), dtype=np.float64)
    for lineno, ln in body[n:]:
        parts = ln.split()
        if len(parts) != 3 or parts[0] != "edge":
            raise MalformedLineError(lineno, "expected 'edge <u> <v>'")
        for endpoint in parts[1:]:
            if endpoint not in index:
                raise DanglingEdgeError(lineno, f"unknown node {endpoint!r}")
        u, v = index[parts[1]], index[parts[2]]
        if u == v:
            raise SelfLoopError(lineno, f"node {parts[1]!r}")
        if u > v:
            raise AsymmetricEdgeError(lineno, f"edge {parts[1]}-{parts[2]} must be listed once as u<v")
        if a[u, v]:
            raise DuplicateEdgeError(lineno, f"{parts[1]}-{parts[2]}")
        a[u, v] = a[v, u] = 1.0

    labels = None
    label_names: tuple[str, ...] = ()
    given = [lb != NO_LABEL for lb in raw_labels]
    if any(given):
        if not all(given):
            missing = given.index(False)
            raise MalformedLineError(label_lines[missing], "labels must cover every node")
        label_names = tuple(sorted(set(raw_labels), key=_label_sort_key))
        lookup = {name: i for i, name in enumerate(label_names)}
        labels = np.array([lookup[lb] for lb in raw_labels], dtype=np.int64)

    return TextAttributedGraph(
        adjacency=a,
        tokens=tuple(tokens),
        vocab=tuple(vocab),
        node_ids=tuple(node_ids),
        labels=labels,
        label_names=label_names,
    )


def write_tag(g: TextAttributedGraph, path: str | Path) -> None:
    edges = g.edges()
    out = [f"{HEADER_MAGIC} {FORMAT_VERSION} {g.node_count} {len(edges)}"]
    for i in range(g.node_count):
        label = NO_LABEL if g.labels is None else g.label_names[g.labels[i]]
        words = " ".join(g.vocab[t] for t in g.tokens[i])
        out.append(f"node {g.node_ids[i]} {label} {words}")
    for u, v in edges:
        out.append(f"edge {g.node_ids[u]} {g.node_ids[v]}")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class GraphMatrices:
    degree: np.ndarray
    laplacian: np.ndarray
    sym_laplacian: np.ndarray
    col_norm_adjacency: np.ndarray
    adjacency: np.ndarray

    @property
    def node_count(self) -> int:
        return self.degree.shape[0]


def build_matrices(g: TextAttributedGraph | np.ndarray) -> GraphMatrices:
    """Degree vector, L = D - A, L_sym = D^-1/2 L D^-1/2 and A D^-1.

    Isolated nodes get zero rows/columns in every normalized matrix.
    """
    a = g.adjacency if isinstance(g, TextAttributedGraph) else np.asarray(g, dtype=np.float64)
    d = a.sum(axis=1)
    lap = np.diag(d) - a
    pos = d > 0
    inv_sqrt = np.zeros_like(d)
    inv_sqrt[pos] = 1.0 / np.sqrt(d[pos])
    inv = np.zeros_like(d)
    inv[pos] = 1.0 / d[pos]
    # outer product first so the result is exactly symmetric
    sym = lap * (inv_sqrt[:, None] * inv_sqrt[None, :])
    col_norm = a * inv[None, :]
    mats = (d, lap, sym, col_norm, a.copy())
    for m in mats:
        m.setflags(write=False)
    return GraphMatrices(*mats)
