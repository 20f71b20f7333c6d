import numpy as np
import pytest
import torch

import tagcl.trainer as trainer_mod
from tagcl.datagen import GenConfig, generate_planted_tag
from tagcl.encoder import EncoderConfig, init_encoder
from tagcl.graph import build_matrices, from_edges
from tagcl.objectives import TERMS, LossConfig
from tagcl.trainer import (
    EdgeSplits,
    NumericalFailure,
    TrainConfig,
    TrainHistory,
    check_gradients,
    relative_error,
    split_edges,
    subsample_edges,
    train,
    verify_lemma1,
)

from conftest import random_symmetric_adjacency


@pytest.fixture(scope="module")
def graph():
    return generate_planted_tag(GenConfig(nodes=40, p_in=0.3, p_out=0.05, tokens_per_node=6, seed=1))


@pytest.fixture(scope="module")
def splits(graph):
    return split_edges(graph, seed=1)


def small_cfg(**kw):
    base = dict(max_epochs=2, batch_size=16, seed=0, val_negatives=5)
    base.update(kw)
    return TrainConfig(**base)


ENC = dict(dim=4, layers=1, max_seq_len=6)


def test_split_edges_partition(graph, splits):
    all_edges = {tuple(e) for e in graph.edges()}
    parts = [{tuple(e) for e in s} for s in (splits.train, splits.valid, splits.test)]
    assert set().union(*parts) == all_edges
    assert sum(len(p) for p in parts) == len(all_edges)
    assert abs(len(parts[0]) / len(all_edges) - 0.7) < 0.1
    assert (graph.with_edges(splits.train).degree() > 0).all()
    again = split_edges(graph, seed=1)
    assert np.array_equal(again.test, splits.test)


def test_splits_save_load(splits, tmp_path):
    splits.save(tmp_path / "s.npz")
    back = EdgeSplits.load(tmp_path / "s.npz")
    assert all(np.array_equal(a, b) for a, b in zip((back.train, back.valid, back.test), (splits.train, splits.valid, splits.test)))


def test_subsample_edges(splits):
    assert subsample_edges(splits.train, 1.0, 0) is splits.train
    half = subsample_edges(splits.train, 0.5, 0)
    assert len(half) == round(0.5 * len(splits.train))
    assert {tuple(e) for e in half} <= {tuple(e) for e in splits.train}
    with pytest.raises(ValueError):
        subsample_edges(splits.train, 0.0, 0)


def test_train_config_validation():
    for kw in ({"patience": 0}, {"learning_rate": -1.0}, {"batch_size": 1}, {"span_length_range": (2, 1)}, {"alpha_ppr": 0.0}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


def test_zero_learning_rate_keeps_init(graph, splits):
    params, _ = train(graph, splits, small_cfg(learning_rate=0.0), EncoderConfig.for_graph(graph, seed=4, **ENC))
    init = init_encoder(EncoderConfig.for_graph(graph, seed=4, **ENC))
    assert np.array_equal(params.flat(), init.flat())


def test_all_weights_zero_keeps_init(graph, splits):
    cfg = small_cfg(loss=LossConfig(lambdas=(0.0,) * 5))
    params, hist = train(graph, splits, cfg, EncoderConfig.for_graph(graph, seed=4, **ENC))
    assert np.array_equal(params.flat(), init_encoder(EncoderConfig.for_graph(graph, seed=4, **ENC)).flat())
    assert all(r.total == 0.0 for r in hist.records)


def test_training_is_deterministic(graph, splits):
    enc = EncoderConfig.for_graph(graph, seed=0, **ENC)
    p1, h1 = train(graph, splits, small_cfg(), enc)
    p2, h2 = train(graph, splits, small_cfg(), enc)
    assert h1.rows() == h2.rows()
    assert np.array_equal(p1.flat(), p2.flat())
    assert len(h1.records) == h1.stop_epoch
    assert h1.best_p1 == max(r.val_p1 for r in h1.records)


def test_patience_one_stops_at_epoch_two(graph, splits):
    scores = iter([0.5, 0.4, 0.3, 0.2])
    _, hist = train(graph, splits, small_cfg(max_epochs=4, patience=1), EncoderConfig.for_graph(graph, **ENC), val_fn=lambda p, e: next(scores))
    assert hist.stop_epoch == 2 and hist.best_epoch == 1


def test_returns_best_epoch_parameters(graph, splits):
    scores = {1: 0.1, 2: 0.3, 3: 0.2, 4: 0.2, 5: 0.9}
    snapshots = {}

    def val_fn(p, epoch):
        snapshots[epoch] = p.flat().copy()
        return scores[epoch]

    params, hist = train(graph, splits, small_cfg(max_epochs=5, patience=2), EncoderConfig.for_graph(graph, **ENC), val_fn=val_fn)
    assert hist.stop_epoch == 4 and hist.best_epoch == 2
    assert np.array_equal(params.flat(), snapshots[2])
    assert not np.array_equal(snapshots[2], snapshots[4])


def test_non_finite_loss_aborts(graph, splits, monkeypatch):
    def bad(*args, **kw):
        out = {t: torch.zeros((), dtype=torch.float64) for t in TERMS}
        out["sc"] = torch.tensor(float("nan"), dtype=torch.float64)
        return out

    monkeypatch.setattr(trainer_mod, "compute_losses", bad)
    with pytest.raises(NumericalFailure, match="sc"):
        train(graph, splits, small_cfg(), EncoderConfig.for_graph(graph, **ENC))


def test_excluded_nodes_never_batched(graph, splits, monkeypatch):
    seen = []
    real = trainer_mod.make_plan

    def spy(g, importance, nodes, rng, **kw):
        seen.append({g.node_ids[i] for i in nodes})
        plan = real(g, importance, nodes, rng, **kw)
        for sub in plan.subgraphs + plan.partner_subgraphs:
            seen.append({g.node_ids[j] for j in sub.member_ids})
        for nb in plan.neighbors:
            seen.append({g.node_ids[j] for j in nb})
        return plan

    monkeypatch.setattr(trainer_mod, "make_plan", spy)
    held = [0, 5, 17, 33]
    train(graph, splits, small_cfg(max_epochs=1), EncoderConfig.for_graph(graph, **ENC), exclude_nodes=held)
    touched = set().union(*seen)
    assert touched and not touched & {graph.node_ids[i] for i in held}


def test_history_csv_round_trip(graph, splits, tmp_path):
    _, hist = train(graph, splits, small_cfg(), EncoderConfig.for_graph(graph, **ENC))
    path = tmp_path / "h.csv"
    hist.write_csv(path)
    assert path.read_text().splitlines()[0] == "epoch,l_tc,l_nc,l_sc,l_tnc,l_nsc,total,val_p1"
    assert TrainHistory.read_csv(path).rows() == hist.rows()


def test_relative_error():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)


def test_gradient_check_zero_params():
    rep = check_gradients(trials=2, zero_params=True)
    assert rep.passed and rep.max_rel_error["tc"] == 0.0


def test_gradient_check_random_instances():
    rep = check_gradients(trials=5, seed=3, dim=4)
    assert rep.passed, rep.max_rel_error


def test_gradient_check_flags_corruption():
    def corrupt(term, grad):
        return grad * 1.01 if term == "nc" else grad

    rep = check_gradients(trials=2, corrupt=corrupt)
    assert not rep.passed and rep.max_rel_error["nc"] > 1e-4
    assert rep.max_rel_error["tc"] < 1e-4


def test_gradient_check_dim_limit():
    with pytest.raises(ValueError):
        check_gradients(trials=1, dim=9)


def test_lemma1_k2():
    rep = verify_lemma1(build_matrices(from_edges(2, [(0, 1)])), 0.5, 1)
    # arccos near 1 only resolves angles to about sqrt(eps)
    assert rep.residual < 1e-20 and rep.max_principal_angle < 1e-6 and rep.within()


def test_lemma1_full_rank_psd(path3):
    rep = verify_lemma1(build_matrices(path3), 0.5, 3, steps=20000)
    # kernel spectrum {1, 0.5, 0} is PSD, so the rank-3 residual vanishes;
    # the null direction of F decays only like 1/t under gradient descent
    assert rep.oracle_residual < 1e-28 and rep.residual < 1e-6
    assert rep.max_principal_angle < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_lemma1_random_graph_and_monotone_descent(seed):
    rng = np.random.default_rng(seed)
    a = random_symmetric_adjacency(rng, 10, 0.4)
    rep = verify_lemma1(build_matrices(a), 0.5, 3, seed=seed)
    assert np.all(np.diff(rep.residual_trace) <= 1e-12)
    if rep.eigengap > 0.1:
        assert rep.ratio <= 1.05 and rep.max_principal_angle < 0.05


def test_lemma1_limits(path3):
    with pytest.raises(ValueError):
        verify_lemma1(build_matrices(path3), 0.5, 4)
