import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tagcl.graph import build_matrices, from_edges
from tagcl.spectral import (
    NotSymmetricError,
    best_rank_k,
    eigendecompose,
    graph_fourier,
    hfc_kernel,
    jacobi_eigh,
    low_pass_delta,
    low_pass_features,
    principal_angles,
)

from conftest import random_symmetric_adjacency


def sym(rng, n):
    x = rng.standard_normal((n, n))
    return (x + x.T) / 2


def test_two_by_two_by_hand():
    d = eigendecompose(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    np.testing.assert_allclose(d.eigenvalues, [0.0, 2.0], atol=1e-15)
    np.testing.assert_allclose(d.eigenvectors[:, 0], [1 / math.sqrt(2)] * 2, atol=1e-15)


def test_identity_gives_identity_basis():
    d = eigendecompose(np.eye(4))
    np.testing.assert_array_equal(d.eigenvalues, np.ones(4))
    np.testing.assert_array_equal(d.eigenvectors, np.eye(4))


def test_path3_laplacian(path3):
    d = eigendecompose(build_matrices(path3).sym_laplacian)
    np.testing.assert_allclose(d.eigenvalues, [0, 1, 2], atol=1e-12)


def test_rejects_non_symmetric():
    with pytest.raises(NotSymmetricError):
        eigendecompose(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(NotSymmetricError):
        eigendecompose(np.ones((2, 3)))


@pytest.mark.parametrize("seed", range(100))
def test_against_dense_solver(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 31))
    m = sym(rng, n)
    d = eigendecompose(m)
    u = d.eigenvectors
    assert np.max(np.abs(u.T @ u - np.eye(n))) < 1e-10
    assert np.max(np.abs(d.reconstruct() - m)) < 1e-8
    assert np.all(np.diff(d.eigenvalues) >= 0)
    np.testing.assert_allclose(d.eigenvalues, np.linalg.eigvalsh(m), atol=1e-12)


def test_sign_convention():
    rng = np.random.default_rng(3)
    u = eigendecompose(sym(rng, 8)).eigenvectors
    lead = np.argmax(np.abs(u), axis=0)
    assert np.all(u[lead, np.arange(8)] > 0)


def test_jacobi_handles_degenerate_and_zero():
    vals, vecs = jacobi_eigh(np.zeros((3, 3)))
    np.testing.assert_array_equal(vals, 0.0)
    # repeated eigenvalue: triangle Laplacian
    gm = build_matrices(from_edges(3, [(0, 1), (1, 2), (0, 2)]))
    d = eigendecompose(gm.sym_laplacian)
    np.testing.assert_allclose(d.eigenvalues, [0, 1.5, 1.5], atol=1e-14)
    assert np.max(np.abs(d.reconstruct() - gm.sym_laplacian)) < 1e-14


def test_low_pass_k2():
    d = eigendecompose(build_matrices(from_edges(2, [(0, 1)])).sym_laplacian)
    np.testing.assert_allclose(low_pass_features(d, 1), [[1 / math.sqrt(2)]] * 2, atol=1e-15)


def test_low_pass_full_is_u(path3):
    d = eigendecompose(build_matrices(path3).sym_laplacian)
    assert np.array_equal(low_pass_features(d, 3), d.eigenvectors)


def test_low_pass_p3_degree_weighted(path3):
    d = eigendecompose(build_matrices(path3).sym_laplacian)
    f = low_pass_features(d, 1)[:, 0]
    np.testing.assert_allclose(f, np.sqrt([1, 2, 1]) / 2, atol=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_low_pass_two_formulations_agree_bitwise(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 15))
    d = eigendecompose(build_matrices(random_symmetric_adjacency(rng, n)).sym_laplacian)
    k = int(rng.integers(1, n + 1))
    f = low_pass_features(d, k)
    for v in range(n):
        assert np.array_equal(low_pass_delta(d, k, v), f[v])
    assert np.array_equal(f, d.eigenvectors[:, :k])


def test_low_pass_bad_k(path3):
    d = eigendecompose(build_matrices(path3).sym_laplacian)
    for k in (0, 4, 1.5):
        with pytest.raises(ValueError):
            low_pass_features(d, k)


def test_hfc_kernel_examples(path3, k2):
    gm3 = build_matrices(path3)
    np.testing.assert_array_equal(hfc_kernel(gm3, 0.0).kernel, np.eye(3))
    np.testing.assert_allclose(hfc_kernel(build_matrices(k2), 0.5).kernel, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    lam = np.linalg.eigvalsh(hfc_kernel(gm3, 1.0).kernel)
    np.testing.assert_allclose(lam, [-1, 0, 1], atol=1e-12)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            hfc_kernel(gm3, bad)


@pytest.mark.parametrize("seed", range(10))
def test_hfc_kernel_spectrum_bounds(seed):
    rng = np.random.default_rng(seed)
    gm = build_matrices(random_symmetric_adjacency(rng, int(rng.integers(2, 15))))
    alpha = float(rng.uniform())
    k = hfc_kernel(gm, alpha).kernel
    assert np.array_equal(k, k.T)
    lam = np.linalg.eigvalsh(k)
    assert lam.min() >= 1 - 2 * alpha - 1e-9 and lam.max() <= 1 + 1e-9


def test_highest_frequency_is_scaled_exactly(path3):
    gm = build_matrices(path3)
    d = eigendecompose(gm.sym_laplacian)
    u_top = d.eigenvectors[:, -1]
    out = hfc_kernel(gm, 1.0).kernel @ u_top
    np.testing.assert_allclose(out, (1 - d.eigenvalues[-1]) * u_top, atol=1e-14)


def test_best_rank_k_examples(path3, k2):
    f, res = best_rank_k(hfc_kernel(build_matrices(k2), 0.5), 1)
    np.testing.assert_allclose(f @ f.T, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    assert res < 1e-30
    _, res = best_rank_k(hfc_kernel(build_matrices(path3), 0.5), 1)
    assert res == pytest.approx(0.25, abs=1e-14)
    _, res = best_rank_k(hfc_kernel(build_matrices(path3), 0.4), 3)
    assert res < 1e-28


def test_best_rank_k_clamps_negative_eigenvalues():
    m = np.diag([1.0, -0.5])
    f, res = best_rank_k(m, 2)
    np.testing.assert_allclose(f @ f.T, np.diag([1.0, 0.0]))
    assert res == pytest.approx(0.25)


@pytest.mark.parametrize("seed", range(5))
def test_eckart_young_beats_random_factorizations(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 10))
    kern = hfc_kernel(build_matrices(random_symmetric_adjacency(rng, n, 0.5)), float(rng.uniform())).kernel
    k = int(rng.integers(1, n))
    _, res = best_rank_k(kern, k)
    f0, _ = best_rank_k(kern, k)
    for _ in range(1000):
        f = rng.standard_normal((n, k)) if rng.random() < 0.5 else f0 + 0.1 * rng.standard_normal((n, k))
        assert res <= np.sum((kern - f @ f.T) ** 2) + 1e-12


def test_graph_fourier(path3):
    d = eigendecompose(build_matrices(path3).sym_laplacian)
    u = d.eigenvectors
    np.testing.assert_allclose(graph_fourier(u[:, 2], d), [0, 0, 1], atol=1e-15)
    np.testing.assert_array_equal(graph_fourier(np.zeros(3), d), np.zeros(3))
    np.testing.assert_allclose(graph_fourier(u[:, 0] + 2 * u[:, 1], d), [1, 2, 0], atol=1e-14)
    with pytest.raises(ValueError):
        graph_fourier(np.zeros(4), d)


@given(arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)))
def test_fourier_preserves_energy(x):
    rng = np.random.default_rng(0)
    d = eigendecompose(build_matrices(random_symmetric_adjacency(rng, 12)).sym_laplacian)
    c = graph_fourier(x, d)
    assert abs(np.linalg.norm(c) - np.linalg.norm(x)) <= 1e-10 * max(1.0, np.linalg.norm(x))


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_eigendecompose_property(n, seed):
    m = sym(np.random.default_rng(seed), n)
    d = eigendecompose(m)
    assert np.max(np.abs(d.eigenvectors.T @ d.eigenvectors - np.eye(n))) < 1e-10
    assert np.max(np.abs(d.reconstruct() - m)) < 1e-8


def test_principal_angles():
    a = np.eye(3)[:, :2]
    np.testing.assert_allclose(principal_angles(a, a), [0, 0], atol=1e-7)
    b = np.array([[1.0], [0.0], [0.0]])
    c = np.array([[0.0], [1.0], [0.0]])
    np.testing.assert_allclose(principal_angles(b, c), [math.pi / 2])
