"""Self-checks against independent oracles, reported as key=value lines."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .evaluation import RankedQuery, rank_metrics
from .graph import adjacency_from_edges, build_matrices
from .objectives import ContrastiveBatch, hfc_loss, spectral_loss
from .ppr import ppr_importance, ppr_power_iteration
from .spectral import eigendecompose
from .trainer import check_gradients, verify_lemma1

SUITES = ("losses", "spectral", "ppr", "gradients", "lemma1", "metrics")


@dataclass
class SuiteReport:
    suite: str
    passed: bool
    values: dict[str, object] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"suite={self.suite}", f"passed={str(self.passed).lower()}"]
        out += [f"{self.suite}.{k}={_fmt(v)}" for k, v in self.values.items()]
        return out


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.4, connected: bool = True) -> np.ndarray:
    """Erdos-Renyi adjacency; with ``connected`` a random spanning path is added first."""
    a = np.triu(rng.random((n, n)) < p, k=1).astype(np.float64)
    if connected:
        order = rng.permutation(n)
        for u, v in zip(order[:-1], order[1:]):
            a[min(u, v), max(u, v)] = 1.0
    return a + a.T


def random_batch(rng: np.random.Generator, max_m: int = 8, max_d: int = 16) -> ContrastiveBatch:
    m = int(rng.integers(1, max_m + 1))
    d = int(rng.integers(1, max_d + 1))
    k = int(rng.integers(1, max_m + 1))
    mask = rng.random((m, k)) < 0.8
    mask[:, 0] = True
    return ContrastiveBatch(
        torch.from_numpy(rng.standard_normal((m, d))),
        torch.from_numpy(rng.standard_normal((m, d))),
        torch.from_numpy(rng.standard_normal((m, k, d))),
        torch.from_numpy(mask),
    )


def loop_spectral_loss(b: ContrastiveBatch) -> float:
    """Plain-loop spectral contrastive loss, independent of the tensor code."""
    a, p, n, mask = (x.numpy() for x in (b.anchors, b.positives, b.negatives, b.neg_mask))
    total = 0.0
    for m in range(a.shape[0]):
        negs = [float(np.dot(a[m], n[m, j])) ** 2 for j in range(n.shape[1]) if mask[m, j]]
        total += -2.0 * float(np.dot(a[m], p[m])) + sum(negs) / len(negs)
    return total / a.shape[0]


def suite_losses(batches: int = 1000, seed: int = 0, tol: float = 1e-15) -> SuiteReport:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = ref = 0.0
    for _ in range(batches):
        b = random_batch(rng)
        h = float(hfc_loss(b, 1.0))
        worst = max(worst, abs(h - float(spectral_loss(b))))
        ref = max(ref, abs(h - loop_spectral_loss(b)) / max(1.0, abs(h)))
    secs = time.perf_counter() - t0
    values = {"batches": batches, "max_abs_diff": worst, "max_rel_diff_loop_oracle": ref, "seconds": secs}
    return SuiteReport("losses", worst < tol and ref < 1e-12, values)


def suite_spectral(matrices: int = 20, seed: int = 0, tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    orth = recon = 0.0
    for _ in range(matrices):
        n = int(rng.integers(2, 31))
        x = rng.standard_normal((n, n))
        m = (x + x.T) / 2
        d = eigendecompose(m)
        u = d.eigenvectors
        orth = max(orth, float(np.max(np.abs(u.T @ u - np.eye(n)))))
        recon = max(recon, float(np.max(np.abs(d.reconstruct() - m))))
    path = build_matrices(adjacency_from_edges(3, [(0, 1), (1, 2)]))
    p3 = eigendecompose(path.sym_laplacian).eigenvalues
    p3_err = float(np.max(np.abs(p3 - np.array([0.0, 1.0, 2.0]))))
    ok = orth < tol and recon < tol and p3_err < 1e-9
    return SuiteReport(
        "spectral",
        ok,
        {"matrices": matrices, "max_orthonormality_error": orth, "max_reconstruction_error": recon, "p3_spectrum_error": p3_err},
    )


def suite_ppr(graphs: int = 20, seed: int = 0, alpha_ppr: float = 0.15, tol: float = 1e-8) -> SuiteReport:
    rng = np.random.default_rng(seed)
    diff = rowsum = 0.0
    for _ in range(graphs):
        n = int(rng.integers(2, 51))
        gm = build_matrices(random_graph(rng, n, p=float(rng.uniform(0.05, 0.5))))
        s = ppr_importance(gm, alpha_ppr).scores
        diff = max(diff, float(np.max(np.abs(s - ppr_power_iteration(gm, alpha_ppr, 200)))))
        rowsum = max(rowsum, float(np.max(np.abs(s.sum(axis=1) - 1.0))))
    return SuiteReport("ppr", diff < tol and rowsum < tol, {"graphs": graphs, "max_abs_diff": diff, "max_row_sum_error": rowsum})


def suite_gradients(trials: int = 50, seed: int = 0, tol: float = 1e-4) -> SuiteReport:
    t0 = time.perf_counter()
    rep = check_gradients(trials=trials, seed=seed)
    values: dict[str, object] = {"trials": trials}
    values.update({f"max_rel_error.{t}": e for t, e in rep.max_rel_error.items()})
    values["seconds"] = time.perf_counter() - t0
    return SuiteReport("gradients", all(e < tol for e in rep.max_rel_error.values()), values)


def suite_lemma1(
    alphas=(0.25, 0.5, 0.75), k: int = 3, graphs: int = 20, seed: int = 0, min_gap: float = 0.1
) -> SuiteReport:
    rng = np.random.default_rng(seed)
    worst_ratio, worst_angle, checked, skipped, failures = 0.0, 0.0, 0, 0, 0
    t0 = time.perf_counter()
    for gi in range(graphs):
        n = int(rng.integers(k + 1, 13))
        gm = build_matrices(random_graph(rng, n, p=float(rng.uniform(0.2, 0.7))))
        for alpha in alphas:
            rep = verify_lemma1(gm, alpha, k, seed=gi)
            if rep.eigengap < min_gap:
                skipped += 1
                continue
            checked += 1
            # exactly representable kernels give 0/0-like ratios; within() handles them
            if rep.oracle_residual > 1e-12:
                worst_ratio = max(worst_ratio, rep.ratio)
            worst_angle = max(worst_angle, rep.max_principal_angle)
            failures += not rep.within(1.05, 0.05)
    values = {
        "alphas": ",".join(str(a) for a in alphas),
        "k": k,
        "checked": checked,
        "skipped_small_gap": skipped,
        "worst_residual_ratio": worst_ratio,
        "worst_principal_angle": worst_angle,
        "failures": failures,
        "seconds": time.perf_counter() - t0,
    }
    return SuiteReport("lemma1", failures == 0 and checked > 0, values)


def brute_force_rank(query: np.ndarray, target: np.ndarray, negatives: np.ndarray) -> int:
    """Sort every score descending and locate the target after all of its ties."""
    scores = [(float(np.dot(query, target)), 1)] + [(float(np.dot(query, n)), 0) for n in negatives]
    # among equal scores the target sorts last
    ordered = sorted(scores, key=lambda s: (-s[0], s[1]))
    return 1 + ordered.index((scores[0][0], 1))


def suite_metrics(sets: int = 100, seed: int = 0) -> SuiteReport:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(sets):
        q = int(rng.integers(1, 20))
        d = int(rng.integers(1, 6))
        queries, ranks = [], []
        for _ in range(q):
            # small integer entries force plenty of exact ties
            qv, tv = rng.integers(-2, 3, d).astype(float), rng.integers(-2, 3, d).astype(float)
            negs = rng.integers(-2, 3, (int(rng.integers(1, 12)), d)).astype(float)
            queries.append(RankedQuery(qv, tv, negs))
            ranks.append(brute_force_rank(qv, tv, negs))
        got = rank_metrics(queries)
        r = np.array(ranks, dtype=float)
        want = (float(np.mean(r == 1)), float(np.mean(1 / np.log2(1 + r))), float(np.mean(1 / r)))
        mismatches += (got.p1, got.ndcg, got.mrr) != want
    return SuiteReport("metrics", mismatches == 0, {"query_sets": sets, "mismatches": mismatches})


def run_suites(names, alpha: float | None = None, k: int = 3, seed: int = 0) -> list[SuiteReport]:
    runners: dict[str, Callable[[], SuiteReport]] = {
        "losses": lambda: suite_losses(seed=seed),
        "spectral": lambda: suite_spectral(seed=seed),
        "ppr": lambda: suite_ppr(seed=seed),
        "gradients": lambda: suite_gradients(seed=seed),
        "lemma1": lambda: suite_lemma1(alphas=(alpha,) if alpha is not None else (0.25, 0.5, 0.75), k=k, seed=seed),
        "metrics": lambda: suite_metrics(seed=seed),
    }
    names = SUITES if "all" in names else names
    return [runners[n]() for n in names]
