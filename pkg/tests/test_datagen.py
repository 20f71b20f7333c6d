import math

import numpy as np
import pytest

from tagcl.datagen import GenConfig, GenerationError, community_sizes, generate_planted_tag, generate_to_file
from tagcl.graph import build_matrices, load_tag
from tagcl.spectral import eigendecompose, hfc_kernel


def test_same_seed_identical_files(tmp_path):
    cfg = GenConfig(nodes=60, seed=5, shared_fraction=0.3)
    generate_to_file(cfg, tmp_path / "a.tag")
    generate_to_file(cfg, tmp_path / "b.tag")
    assert (tmp_path / "a.tag").read_bytes() == (tmp_path / "b.tag").read_bytes()


def test_different_seed_differs():
    a = generate_planted_tag(GenConfig(nodes=60, seed=1))
    b = generate_planted_tag(GenConfig(nodes=60, seed=2))
    assert not np.array_equal(a.adjacency, b.adjacency)


def test_file_round_trip_and_metadata(tmp_path):
    cfg = GenConfig(nodes=40, communities=3, p_in=0.5, p_out=0.05, seed=2)
    g = generate_to_file(cfg, tmp_path / "g.tag")
    back = load_tag(tmp_path / "g.tag")
    assert np.array_equal(back.adjacency, g.adjacency)
    assert back.tokens == g.tokens and back.vocab == g.vocab
    assert np.array_equal(back.labels, g.labels)
    meta = dict(line.split("=", 1) for line in (tmp_path / "g.tag.meta").read_text().splitlines())
    assert meta["nodes"] == "40" and meta["communities"] == "3" and meta["seed"] == "2"
    assert set(meta) >= {"p_in", "p_out", "tokens_per_node", "vocab_per_community", "shared_fraction"}


def test_two_disjoint_cliques():
    g = generate_planted_tag(GenConfig(nodes=10, p_in=1.0, p_out=0.0, seed=0))
    same = g.labels[:, None] == g.labels[None, :]
    assert np.array_equal(g.adjacency, (same & ~np.eye(10, dtype=bool)).astype(float))


def test_structureless_limit_has_uniform_density():
    g = generate_planted_tag(GenConfig(nodes=100, p_in=0.1, p_out=0.1, seed=0))
    same = g.labels[:, None] == g.labels[None, :]
    iu = np.triu_indices(100, 1)
    intra = g.adjacency[iu][same[iu]].mean()
    inter = g.adjacency[iu][~same[iu]].mean()
    assert abs(intra - inter) < 0.03


@pytest.mark.parametrize("n,c", [(200, 2), (101, 3), (7, 2), (12, 4)])
def test_label_balance(n, c):
    g = generate_planted_tag(GenConfig(nodes=n, communities=c, p_in=0.9, p_out=0.3, seed=0))
    counts = np.bincount(g.labels, minlength=c)
    assert counts.sum() == n and counts.max() - counts.min() <= 1
    assert np.array_equal(counts, community_sizes(n, c))


@pytest.mark.parametrize("seed", range(5))
def test_edge_densities_within_binomial_bounds(seed):
    cfg = GenConfig(nodes=200, p_in=0.1, p_out=0.01, seed=seed)
    g = generate_planted_tag(cfg)
    same = g.labels[:, None] == g.labels[None, :]
    iu = np.triu_indices(cfg.nodes, 1)
    for mask, p in ((same[iu], cfg.p_in), (~same[iu], cfg.p_out)):
        pairs = int(mask.sum())
        hits = float(g.adjacency[iu][mask].sum())
        assert abs(hits - pairs * p) <= 3 * math.sqrt(pairs * p * (1 - p))


def test_min_degree_one():
    for seed in range(5):
        g = generate_planted_tag(GenConfig(nodes=50, p_in=0.1, p_out=0.0, seed=seed))
        assert g.degree().min() >= 1


def test_isolated_nodes_exhaust_retries():
    with pytest.raises(GenerationError):
        generate_planted_tag(GenConfig(nodes=20, p_in=0.0, p_out=0.0, max_retries=3))


def test_tokens_come_from_own_community_or_shared_pool():
    g = generate_planted_tag(GenConfig(nodes=40, shared_fraction=0.4, seed=3))
    for i, seq in enumerate(g.tokens):
        assert len(seq) == 12
        for t in seq:
            word = g.vocab[t]
            assert word.startswith("sw") or word.startswith(f"c{g.labels[i]}w")


def test_disjoint_vocabularies_without_sharing():
    g = generate_planted_tag(GenConfig(nodes=40, seed=3))
    words = [{g.vocab[t] for t in seq} for seq in g.tokens]
    assert all(not any(w.startswith("sw") for w in ws) for ws in words)


@pytest.mark.parametrize(
    "kw",
    [{"communities": 0}, {"nodes": 3, "communities": 2}, {"p_in": 1.5}, {"p_out": -0.1}, {"shared_fraction": 2.0}, {"tokens_per_node": 0}],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GenConfig(**kw)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10))
def test_second_kernel_eigenvector_partitions_communities(seed):
    g = generate_planted_tag(GenConfig(nodes=200, communities=2, p_in=0.1, p_out=0.01, seed=seed))
    dec = eigendecompose(hfc_kernel(build_matrices(g), 0.5).kernel)
    # ascending order: the last column is the trivial top eigenvector
    second = dec.eigenvectors[:, -2]
    agree = np.mean((second > 0) == (g.labels == 1))
    assert max(agree, 1 - agree) >= 0.95
