import numpy as np
import pytest

from chrono_dce.model import ModelConfig, init_model, save_checkpoint
from chrono_dce.skeleton import reversal_pair_spec, synth_generate
from chrono_dce.tensor import Tensor
from chrono_dce.training import (FeatureConfig, TrainConfig, clip_grad_norm,
                                 confusion_from_predictions, ensemble_eval, ensemble_from_probs, evaluate, lr_at,
                                 model_config_for, prepare_inputs, scaled_decay_epochs, sgd_step, train)

TINY = dict(widths=(4, 4, 6), chron_hidden=4)


def test_sgd_examples():
    p = Tensor(np.zeros(1))
    sgd_step([p], [np.ones(1)], [], lr=0.1, momentum=0.0)
    assert p.data.tolist() == [-0.1]
    q = Tensor(np.array([2.0]))
    state = [np.array([1.0])]
    sgd_step([q], [np.zeros(1)], state, lr=0.1, momentum=0.9)
    assert abs(state[0][0] - 0.9) < 1e-15
    r = Tensor(np.zeros(1))
    state = []
    for _ in range(2):
        sgd_step([r], [np.array([0.5])], state, lr=0.1, momentum=0.9)
    assert abs(r.data[0] + 0.1 * 0.5 * 2.9) < 1e-15
    with pytest.raises(ValueError):
        sgd_step([r], [np.ones(2)], [], lr=0.1, momentum=0.9)


def test_full_length_schedule():
    cfg = TrainConfig(epochs=60)
    assert cfg.decay_epochs == (28, 36, 44, 52)
    assert lr_at(0, cfg) == 0.05
    assert abs(lr_at(28, cfg) - 0.005) < 1e-15
    assert abs(lr_at(52, cfg) - 5e-6) < 1e-18
    rates = [lr_at(e, cfg) for e in range(60)]
    assert all(b <= a for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_desk_schedule_and_config_validation():
    assert scaled_decay_epochs(20) == (9, 12, 15, 17)
    assert TrainConfig().decay_epochs == (9, 12, 15, 17)
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, decay_epochs=(5, 3))
    with pytest.raises(ValueError):
        TrainConfig(epochs=10, decay_epochs=(10,))
    with pytest.raises(ValueError):
        TrainConfig(grad_clip=0.0)


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_grad_norm(g, 1.0) == 5.0
    assert np.allclose([g[0][0], g[1][0]], [0.6, 0.8])
    h = [np.array([0.3])]
    clip_grad_norm(h, 1.0)
    assert h[0][0] == 0.3


def test_confusion_examples():
    labels = np.repeat(np.arange(4), 5)
    perfect = confusion_from_predictions(labels, labels, 4)
    assert perfect.accuracy == 1.0 and np.count_nonzero(perfect.confusion - np.diag(np.diag(perfect.confusion))) == 0
    assert perfect.most_confused == [None] * 4
    const = confusion_from_predictions(np.zeros(20, dtype=int), labels, 4)
    assert const.accuracy == 0.25 and const.per_class == [1.0, 0.0, 0.0, 0.0]
    assert const.confusion.sum(axis=1).tolist() == [5] * 4
    assert const.most_confused == [None, 0, 0, 0]
    tie = confusion_from_predictions(np.array([1, 2]), np.array([0, 0]), 3)
    assert tie.most_confused[0] == 1
    with pytest.raises(ValueError):
        confusion_from_predictions(np.array([], dtype=int), np.array([], dtype=int), 3)


def test_constant_logit_model_predicts_class_zero():
    model = init_model(ModelConfig(in_channels=3, num_classes=4, **TINY))
    model.params["cls.weight"].data[:] = 0.0
    model.params["cls.bias"].data[:] = 0.0
    x = np.random.default_rng(0).normal(size=(8, 3, 10, 9, 1))
    labels = np.repeat(np.arange(4), 2)
    res = evaluate(model, x, labels)
    assert res.accuracy == 0.25 and res.per_class == [1.0, 0.0, 0.0, 0.0]
    assert res.accuracy == np.trace(res.confusion) / res.confusion.sum()


def test_ensemble_examples():
    model = init_model(ModelConfig(in_channels=3, num_classes=4, **TINY), seed=1)
    x = np.random.default_rng(2).normal(size=(8, 3, 10, 9, 1))
    labels = np.repeat(np.arange(4), 2)
    single = evaluate(model, x, labels).accuracy
    assert ensemble_eval([model], [x], labels).accuracy == single
    assert ensemble_eval([model, model.copy()], [x, x], labels).accuracy == single
    with pytest.raises(ValueError):
        ensemble_eval([model, init_model(ModelConfig(in_channels=3, num_classes=5, **TINY))], [x, x], labels)


def test_disjoint_experts_ensemble():
    K, per = 6, 10
    labels = np.repeat(np.arange(K), per)
    uniform = np.full(K, 1.0 / K)

    def expert(classes):
        rows = []
        for y in labels:
            rows.append(np.eye(K)[y] if y in classes else uniform)
        return np.array(rows)

    a, b = expert({0, 1, 2}), expert({3, 4, 5})
    acc_a = ensemble_from_probs([a], labels).accuracy
    acc_b = ensemble_from_probs([b], labels).accuracy
    assert ensemble_from_probs([a, b], labels).accuracy >= max(acc_a, acc_b)


@pytest.fixture(scope="module")
def toy():
    ds = synth_generate(reversal_pair_spec(pairs=1, samples_per_class=6, T=24, seed=5))
    feat = FeatureConfig(encoding="dce", K=4, frames=24)
    return ds, feat, prepare_inputs(ds, feat)


def test_zero_learning_rate_leaves_parameters_unchanged(toy):
    ds, feat, X = toy
    cfg = model_config_for(feat, 2, **TINY)
    before = init_model(cfg, seed=0).state()
    model, _ = train(cfg, X[:1], ds.labels[:1], TrainConfig(lr0=0.0, epochs=1, decay_epochs=()))
    after = model.state()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_training_is_bitwise_deterministic(toy, tmp_path):
    ds, feat, X = toy
    cfg = model_config_for(feat, 2, **TINY)
    tc = TrainConfig(epochs=2, decay_epochs=(1,), batch_size=4, seed=3)
    runs = []
    for i in range(2):
        model, run = train(cfg, X, ds.labels, tc, val=(X, ds.labels))
        save_checkpoint(model, tmp_path / f"m{i}")
        runs.append(run)
    assert (tmp_path / "m0.bin").read_bytes() == (tmp_path / "m1.bin").read_bytes()
    assert [e["loss"] for e in runs[0].epochs] == [e["loss"] for e in runs[1].epochs]
    assert 0.0 <= runs[0].final_val_accuracy <= 1.0
    assert sum(map(sum, runs[0].confusion)) == len(ds)


def test_channel_mismatch_and_divergence_are_reported(toy):
    ds, feat, X = toy
    with pytest.raises(ValueError, match="channels"):
        train(ModelConfig(in_channels=3, num_classes=2, **TINY), X, ds.labels, TrainConfig(epochs=1))
    bad = X.copy()
    bad[0, 0, 0, 0, 0] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        train(model_config_for(feat, 2, **TINY), bad, ds.labels, TrainConfig(epochs=1, decay_epochs=()))


def test_noise_is_shared_across_encodings(toy):
    ds, _, _ = toy
    raw = FeatureConfig(encoding="none", frames=24)
    a = prepare_inputs(ds, raw, noise_eps=0.1, noise_seed=4)
    b = prepare_inputs(ds, FeatureConfig(encoding="dce", K=4, frames=24), noise_eps=0.1, noise_seed=4)
    assert np.array_equal(a, b[:, :3])
    assert not np.array_equal(a, prepare_inputs(ds, raw))


def test_short_runs_drop_colliding_milestones():
    assert scaled_decay_epochs(1) == ()
    assert scaled_decay_epochs(4) == (2, 3)
    assert scaled_decay_epochs(12) == (6, 7, 9, 10)
