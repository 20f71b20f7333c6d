import numpy as np
import pytest

from tagcl.objectives import spectral_loss
from tagcl.verify import (
    SUITES,
    brute_force_rank,
    loop_spectral_loss,
    random_batch,
    random_graph,
    run_suites,
    suite_gradients,
    suite_lemma1,
    suite_losses,
    suite_metrics,
    suite_ppr,
    suite_spectral,
)


def test_losses_suite():
    rep = suite_losses()
    assert rep.passed and rep.values["batches"] == 1000
    assert rep.values["max_abs_diff"] < 1e-15


def test_spectral_suite():
    assert suite_spectral().passed


def test_ppr_suite():
    assert suite_ppr().passed


def test_gradient_suite_small():
    rep = suite_gradients(trials=5)
    assert rep.passed
    assert {f"max_rel_error.{t}" for t in ("tc", "nc", "sc", "tnc", "nsc")} <= set(rep.values)


def test_lemma1_suite():
    rep = suite_lemma1(alphas=(0.5,), graphs=10)
    assert rep.passed and rep.values["checked"] > 0
    assert rep.values["worst_residual_ratio"] <= 1.05


def test_metrics_suite():
    rep = suite_metrics()
    assert rep.passed and rep.values["mismatches"] == 0


def test_report_lines():
    rep = suite_metrics(sets=3)
    lines = rep.lines()
    assert lines[:2] == ["suite=metrics", "passed=true"]
    assert all(line.count("=") == 1 for line in lines)


def test_run_suites_selects():
    reps = run_suites(["metrics", "spectral"])
    assert [r.suite for r in reps] == ["metrics", "spectral"]
    assert len(SUITES) == 6


def test_random_graph_connected_and_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = random_graph(rng, int(rng.integers(2, 20)), p=0.0)
        assert np.array_equal(a, a.T) and a.sum(axis=1).min() >= 1


def test_loop_oracle_matches_tensor_loss():
    rng = np.random.default_rng(4)
    for _ in range(50):
        b = random_batch(rng)
        assert loop_spectral_loss(b) == pytest.approx(float(spectral_loss(b)), rel=1e-12, abs=1e-12)


def test_brute_force_rank_ties():
    q = np.array([1.0])
    assert brute_force_rank(q, np.array([1.0]), np.array([[1.0], [1.0], [0.0]])) == 3
    assert brute_force_rank(q, np.array([2.0]), np.array([[1.0]])) == 1
