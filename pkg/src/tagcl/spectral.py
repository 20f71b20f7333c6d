"""Symmetric eigensolver, graph Fourier tools, HFC kernel and low-rank factorization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphMatrices


class NotSymmetricError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Ascending eigenvalues with orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


@dataclass(frozen=True, eq=False)
class HfcKernel:
    alpha: float
    kernel: np.ndarray


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Disjoint (p, q) pairings covering every index pair once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.int64), np.array(q, dtype=np.int64)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(m: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a symmetric matrix, unsorted.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs (chess-tournament ordering) so a round is one vectorized
    two-sided rotation.
    """
    a = np.array(m, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            app, aqq = a[p, p], a[q, q]
            theta = (aqq - app) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            # columns, then rows: A <- J^T A J
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def fix_signs(u: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive (first index on ties)."""
    u = np.array(u, dtype=np.float64)
    if u.size == 0:
        return u
    lead = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[lead, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    return u * signs


def eigendecompose(m: np.ndarray, sym_tol: float = 1e-10) -> SpectralDecomposition:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetricError("matrix must be square")
    if m.size and np.max(np.abs(m - m.T)) > sym_tol:
        raise NotSymmetricError("matrix is not symmetric within tolerance")
    vals, vecs = jacobi_eigh(0.5 * (m + m.T))
    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = fix_signs(vecs[:, order])
    vals.setflags(write=False)
    vecs.setflags(write=False)
    return SpectralDecomposition(vals, vecs)


def _check_k(k: int, n: int) -> None:
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= n:
        raise ValueError(f"K must be an integer in [1, {n}], got {k!r}")


def low_pass_features(d: SpectralDecomposition, k: int) -> np.ndarray:
    """Spectral-clustering features: row v is (u_1(v), ..., u_K(v))."""
    _check_k(k, d.size)
    return d.eigenvectors[:, :k].copy()


def low_pass_delta(d: SpectralDecomposition, k: int, v: int) -> np.ndarray:
    """Ideal low-pass filter of the delta at node v, expressed in the eigenbasis.

    The step response keeps the first K coefficients of U^T delta_v; the
    returned vector is those K coefficients (the zero tail is dropped).
    """
    _check_k(k, d.size)
    n = d.size
    delta = np.zeros(n)
    delta[v] = 1.0
    step = (np.arange(n) < k).astype(np.float64)
    # U is orthogonal, so U^-1 = U^T
    coeffs = step * (d.eigenvectors.T @ delta)
    return coeffs[:k]


def hfc_kernel(gm: GraphMatrices, alpha: float) -> HfcKernel:
    """I - alpha * L_sym."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    n = gm.node_count
    k = np.eye(n) - alpha * gm.sym_laplacian
    k.setflags(write=False)
    return HfcKernel(float(alpha), k)


def best_rank_k(k: HfcKernel | np.ndarray, rank: int) -> tuple[np.ndarray, float]:
    """Best symmetric PSD rank-K factor F (FF^T ~ kernel) and its squared Frobenius residual.

    Columns follow descending kernel eigenvalue; negative eigenvalues are
    clamped to zero. The residual is measured against the unclamped kernel.
    """
    mat = k.kernel if isinstance(k, HfcKernel) else np.asarray(k, dtype=np.float64)
    dec = eigendecompose(mat)
    _check_k(rank, dec.size)
    top = np.arange(dec.size - 1, dec.size - 1 - rank, -1)
    lam = np.clip(dec.eigenvalues[top], 0.0, None)
    f = dec.eigenvectors[:, top] * np.sqrt(lam)
    residual = float(np.sum((mat - f @ f.T) ** 2))
    return f, residual


def graph_fourier(x: np.ndarray, d: SpectralDecomposition) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d.size,):
        raise ValueError(f"signal length {x.shape} does not match {d.size} nodes")
    return d.eigenvectors.T @ x


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between column spans of a and b."""
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    s = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.sort(np.arccos(np.clip(s, -1.0, 1.0)))
