import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactrnn import linear_maps as lm
from compactrnn.config import TrainConfig, config_from_dict
from compactrnn.numerics import SplitMix64
from compactrnn.recurrent_nets import Network, OutputLayer, RnnLayer, build_network
from compactrnn.tasks import IGNORE, SequenceBatch, gen_frame_task, make_task
from compactrnn.training import (DivergenceError, MetricsWriter, Trainer, WindowStream,
                                 clip_gradient_norm, delayed_targets, evaluate, frame_accuracy,
                                 global_norm, lr_at, read_metrics, sgd_step, truncated_bptt)


def small_config(**train):
    return config_from_dict({
        "task": {"num_utterances": 12, "length": 23, "num_classes": 5, "feature_dim": 3, "seed": 2},
        "network": {"layers": [{"type": "lstm", "hidden": 4}, {"type": "lstm", "hidden": 4}],
                    "init_range": 0.3},
        "train": {"unroll": 6, "label_delay": 2, "batch_size": 3, "lr0": 0.5, "eval_interval": 5,
                  **train},
    })


def small_network(cfg, seed=0):
    return build_network(cfg.network, SplitMix64(seed), cfg.train.cell_clip)


# learning-rate schedule

def test_lr_at_start():
    assert lr_at(TrainConfig(), 0) == 0.004


def test_lr_after_one_horizon():
    cfg = TrainConfig()
    assert math.isclose(lr_at(cfg, cfg.decay_horizon), 0.0004, rel_tol=1e-12)


def test_lr_after_half_horizon():
    cfg = TrainConfig()
    assert math.isclose(lr_at(cfg, cfg.decay_horizon / 2), 0.004 * 10 ** -0.5, rel_tol=1e-12)
    assert abs(lr_at(cfg, cfg.decay_horizon / 2) - 1.2649e-3) < 1e-7


def test_lr_rejects_negative_frames():
    with pytest.raises(ValueError):
        lr_at(TrainConfig(), -1)


# gradient clipping

def test_clip_halves_norm_20():
    grads = {"a": np.array([12.0, 16.0])}
    clipped, norm = clip_gradient_norm(grads, 10.0)
    assert norm == 20.0
    np.testing.assert_allclose(clipped["a"], [6.0, 8.0])


def test_clip_leaves_small_norm():
    grads = {"a": np.array([3.0, 4.0])}
    clipped, _ = clip_gradient_norm(grads, 10.0)
    assert clipped["a"] is grads["a"]


def test_clip_rejects_non_positive_threshold():
    with pytest.raises(ValueError):
        clip_gradient_norm({"a": np.ones(2)}, 0.0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), threshold=st.floats(1e-3, 100.0))
def test_clip_post_norm_and_direction(seed, threshold):
    rng = np.random.default_rng(seed)
    grads = {"a": rng.normal(scale=10, size=(3, 4)), "b": rng.normal(size=5)}
    norm = global_norm(grads)
    clipped, _ = clip_gradient_norm(grads, threshold)
    assert abs(global_norm(clipped) - min(norm, threshold)) <= 1e-12 * max(1.0, norm)
    scale = clipped["a"].ravel()[0] / grads["a"].ravel()[0]
    assert scale > 0
    for k in grads:
        np.testing.assert_allclose(clipped[k], scale * grads[k], rtol=1e-12)


# SGD

def test_sgd_zero_lr_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    sgd_step(p, {"w": np.array([5.0, 5.0])}, 0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_sgd_quadratic_step_and_geometric_convergence():
    p = {"w": np.array([1.0])}
    sgd_step(p, {"w": p["w"].copy()}, 0.1)
    assert p["w"][0] == 0.9
    for k in range(2, 30):
        sgd_step(p, {"w": p["w"].copy()}, 0.1)
        assert math.isclose(p["w"][0], 0.9 ** k, rel_tol=1e-12)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, 0.1)


def test_sgd_updates_every_map_kind():
    cfg = config_from_dict({
        "task": {"num_classes": 3, "feature_dim": 4},
        "network": {"layers": [{"type": "lstm", "hidden": 4}],
                    "compression": [{"matrix": "U", "layer": 1, "gates": ["i"], "kind": "lowrank", "rank": 2},
                                    {"matrix": "U", "layer": 1, "gates": ["f"], "kind": "hashed", "rank": 1},
                                    {"matrix": "U", "layer": 1, "gates": ["c"], "kind": "toeplitz", "rank": 1}]},
    })
    net = build_network(cfg.network, SplitMix64(0))
    params = net.parameters()
    before = {k: v.copy() for k, v in params.items()}
    sgd_step(params, {k: np.ones_like(v) for k, v in params.items()}, 0.25)
    for k, v in net.parameters().items():
        np.testing.assert_allclose(v, before[k] - 0.25)


# windowed loss

def test_zero_output_weights_give_ln_k():
    cfg = small_config()
    net = small_network(cfg)
    net.output.weight.weights[:] = 0
    net.output.bias[:] = 0
    rng = np.random.default_rng(0)
    result = truncated_bptt(net, rng.normal(size=(6, 3, 3)), rng.integers(0, 5, (6, 3)), cfg.train)
    assert result.loss == math.log(5)


def test_window_ignores_frames_after_unroll():
    cfg = small_config()
    net = small_network(cfg)
    rng = np.random.default_rng(1)
    frames, labels = rng.normal(size=(9, 2, 3)), rng.integers(0, 5, (9, 2))
    base = truncated_bptt(net, frames, labels, cfg.train)
    frames[6:] += rng.normal(scale=100.0, size=(3, 2, 3))
    labels[6:] = (labels[6:] + 1) % 5
    moved = truncated_bptt(net, frames, labels, cfg.train)
    assert base.loss == moved.loss
    for k in base.grads:
        assert np.array_equal(base.grads[k], moved.grads[k])


def test_window_rejects_short_batch():
    cfg = small_config()
    with pytest.raises(ValueError):
        truncated_bptt(small_network(cfg), np.zeros((5, 1, 3)), np.zeros((5, 1), int), cfg.train)


def test_delayed_targets():
    labels = np.array([10, 11, 12, 13, 14, 15, 16])
    np.testing.assert_array_equal(delayed_targets(labels, 2), [IGNORE, IGNORE, 10, 11, 12, 13, 14])
    np.testing.assert_array_equal(delayed_targets(labels, 0), labels)


def test_first_delay_frames_are_not_scored():
    cfg = small_config()
    net = small_network(cfg)
    rng = np.random.default_rng(2)
    result = truncated_bptt(net, rng.normal(size=(6, 3, 3)), rng.integers(0, 5, (6, 3)), cfg.train)
    assert result.scored == (6 - 2) * 3


def test_carried_state_changes_loss_but_is_not_differentiated():
    cfg = small_config()
    net = small_network(cfg)
    rng = np.random.default_rng(3)
    frames, labels = rng.normal(size=(6, 2, 3)), rng.integers(0, 5, (6, 2))
    states = net.initial_states(2)
    for s in states:
        s.hidden = rng.normal(size=s.hidden.shape)
        s.cell = rng.normal(size=s.cell.shape)
    carried = truncated_bptt(net, frames, labels, cfg.train, states)
    fresh = truncated_bptt(net, frames, labels, cfg.train)
    assert carried.loss != fresh.loss


# evaluation

def test_uniform_network_accuracy_is_chance():
    cfg = config_from_dict({"task": {"num_utterances": 300, "length": 100},
                            "network": {"layers": [{"type": "rnn", "hidden": 2}]}})
    net = build_network(cfg.network, SplitMix64(0))
    net.output.weight.weights[:] = 0
    utts = gen_frame_task(4, 300, 100)
    acc = frame_accuracy(net, utts, label_delay=0)
    # argmax of a uniform row is class 0, so accuracy is the share of class 0
    assert abs(acc - 1 / 42) < 0.01


def one_hot_oracle(K):
    layer = RnnLayer(lm.DenseMap(40.0 * np.eye(K)), lm.DenseMap(np.zeros((K, K))), np.full(K, -20.0))
    return Network([layer], OutputLayer(lm.DenseMap(10.0 * np.eye(K)), np.zeros(K)))


def one_hot_utterances(K, count, T, seed):
    rng = np.random.default_rng(seed)
    out = []
    for u in range(count):
        labels = rng.integers(0, K, T)
        out.append(SequenceBatch(np.eye(K)[labels], labels, u))
    return out


def test_perfect_oracle_accuracy():
    utts = one_hot_utterances(6, 5, 12, 0)
    assert frame_accuracy(one_hot_oracle(6), utts, label_delay=0) == 1.0


def test_accuracy_is_deterministic():
    cfg = small_config()
    net = small_network(cfg)
    utts = make_task(cfg.task).heldout
    assert evaluate(net, utts, 2) == evaluate(net, utts, 2)


def test_evaluate_rejects_empty():
    with pytest.raises(ValueError):
        evaluate(one_hot_oracle(3), [], 0)


# streams and the trainer

def test_window_stream_walks_utterances():
    utts = one_hot_utterances(3, 4, 7, 1)
    stream = WindowStream(utts, batch_size=2, unroll=3, seed=9)
    order = stream._stream_utterances(0, 0)
    first = utts[order[0]]
    f1, l1, r1 = stream.next()
    f2, l2, r2 = stream.next()
    f3, l3, r3 = stream.next()
    assert r1[0] and not r2[0] and not r3[0]
    np.testing.assert_array_equal(f1[:, 0], first.features[0:3])
    np.testing.assert_array_equal(f2[:, 0], first.features[3:6])
    np.testing.assert_array_equal(l3[:, 0], [first.labels[6], IGNORE, IGNORE])
    np.testing.assert_array_equal(f3[1:, 0], 0.0)
    _, _, r4 = stream.next()
    assert r4[0]


def test_window_stream_needs_enough_utterances():
    with pytest.raises(ValueError):
        WindowStream(one_hot_utterances(3, 2, 5, 0), batch_size=3, unroll=2, seed=0)


def test_trainer_is_deterministic():
    cfg = small_config()
    split = make_task(cfg.task)
    a, b = Trainer(cfg, split), Trainer(cfg, split)
    for _ in range(7):
        assert a.train_step() == b.train_step()
    pa, pb = a.network.parameters(), b.network.parameters()
    assert all(pa[k].tobytes() == pb[k].tobytes() for k in pa)


def test_trainer_zero_steps_only_evaluates():
    cfg = small_config(max_steps=0)
    trainer = Trainer(cfg, make_task(cfg.task))
    history = trainer.run()
    assert len(history) == 1 and history[0].step == 0 and trainer.step == 0


def test_trainer_reduces_loss():
    cfg = config_from_dict({
        "task": {"num_utterances": 24, "length": 40, "num_classes": 5, "feature_dim": 20, "seed": 2},
        "network": {"layers": [{"type": "lstm", "hidden": 8}], "init_range": 0.3},
        "train": {"unroll": 10, "label_delay": 2, "batch_size": 4, "lr0": 1.0, "eval_interval": 20,
                  "max_steps": 100},
    })
    history = Trainer(cfg, make_task(cfg.task)).run()
    assert history[-1].train_ce < 0.5 * history[0].train_ce


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    cfg = small_config(lr0=1e308, grad_clip_norm=None, cell_clip=None)
    trainer = Trainer(cfg, make_task(cfg.task))
    with pytest.raises(DivergenceError) as err:
        trainer.run(max_steps=10)
    assert 1 <= err.value.step <= 10
    assert f"step {err.value.step}" in str(err.value)


def test_metrics_csv(tmp_path):
    cfg = small_config(max_steps=12)
    path = tmp_path / "m.csv"
    Trainer(cfg, make_task(cfg.task)).run(metrics_path=path)
    assert path.read_text().splitlines()[0] == "step,frames_seen,lr,train_ce,heldout_frame_acc"
    rows = read_metrics(path)
    assert [r.step for r in rows] == [0, 5, 10, 12]
    assert [r.frames_seen for r in rows] == [0, 90, 180, 216]
    assert all(r.train_ce >= 0 and 0 <= r.heldout_frame_acc <= 1 for r in rows)


def test_metrics_writer_appends(tmp_path):
    path = tmp_path / "m.csv"
    MetricsWriter(path)
    MetricsWriter(path)
    assert path.read_text().count("step,") == 1


def test_stop_when_ends_run_early():
    cfg = small_config(max_steps=50)
    trainer = Trainer(cfg, make_task(cfg.task))
    history = trainer.run(stop_when=lambda m: m.step >= 10)
    assert trainer.step == 10 and history[-1].step == 10
