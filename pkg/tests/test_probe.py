import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chrono_dce import losses
from chrono_dce.model import init_model
from chrono_dce.probe import (ProbeConfig, curves_csv_rows, minmax_norm, monotonicity_fraction, probe_forward,
                              probe_input, probe_inputs, probe_model_config, probe_train)
from chrono_dce.skeleton import reversal_pair_spec, synth_generate


def test_minmax_examples():
    v, deg = minmax_norm([2.0, 4.0, 6.0])
    assert v.tolist() == [0.0, 0.5, 1.0] and not deg
    z, deg = minmax_norm([3.0, 3.0, 3.0])
    assert z.tolist() == [0.0] * 3 and deg
    u = np.array([0.0, 0.3, 1.0, 0.7])
    assert np.max(np.abs(minmax_norm(u)[0] - u)) < 1e-12
    with pytest.raises(ValueError):
        minmax_norm([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=20), st.floats(0.01, 100), st.floats(-1e3, 1e3))
def test_minmax_is_invariant_under_positive_affine_maps(v, a, b):
    v = np.array(v)
    if np.ptp(v) < 1e-6:
        return
    x, _ = minmax_norm(v)
    y, _ = minmax_norm(a * v + b)
    assert np.max(np.abs(x - y)) < 1e-9


def test_monotonicity_examples():
    assert monotonicity_fraction(np.arange(5.0)) == 1.0
    assert monotonicity_fraction(-np.arange(5.0)) == 0.0
    assert monotonicity_fraction([0.0, 1, 0, 1]) == 2 / 3
    with pytest.raises(ValueError):
        monotonicity_fraction([1.0])


def test_order_loss_zero_iff_fully_monotone():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = minmax_norm(np.cumsum(rng.normal(size=8)) if rng.random() < 0.5 else np.sort(rng.normal(size=8)))[0]
        assert (losses.probe_order_loss(v).item() == 0) == (monotonicity_fraction(v) == 1.0)


def test_config_validation_and_widths():
    with pytest.raises(ValueError):
        ProbeConfig(kind="dct")
    with pytest.raises(ValueError):
        ProbeConfig(kind="tte", K=0)
    assert ProbeConfig(kind="none").channels == 3
    assert ProbeConfig(kind="tte").channels == 9
    assert ProbeConfig(kind="tte", include_original=True).channels == 12
    assert probe_model_config(ProbeConfig(kind="tte")).in_channels == 9


@pytest.fixture(scope="module")
def small():
    ds = synth_generate(reversal_pair_spec(pairs=1, samples_per_class=4, T=40, seed=2))
    return ds.split(0.25)


def test_probe_inputs(small):
    tr, _ = small
    cfg = ProbeConfig(kind="random", frames=40)
    a = probe_input(tr.sequences[0], cfg, 5)
    assert a.shape == (9, 40, 9, 1)
    assert np.array_equal(a, probe_input(tr.sequences[0], cfg, 5))
    assert not np.array_equal(a, probe_input(tr.sequences[0], cfg, 6))
    tte = probe_inputs(tr, ProbeConfig(kind="tte", frames=40))
    assert tte.shape[1] == 9 and np.all(np.isfinite(tte))


def test_forward_length_and_bounds():
    cfg = ProbeConfig(kind="tte")
    model = init_model(probe_model_config(cfg), seed=0)
    x = np.random.default_rng(1).normal(size=(2, 9, 300, 9, 1))
    v, deg = probe_forward(model, x)
    assert v.shape == (2, 75)
    assert v.data.min() >= 0.0 and v.data.max() <= 1.0 and not deg.any()


def test_probe_train_runs_and_is_deterministic(small):
    tr, ho = small
    cfg = ProbeConfig(kind="tte", frames=40, epochs=2)
    over = dict(widths=(4, 4, 6), chron_hidden=4)
    _, a = probe_train(tr, ho, cfg, over)
    _, b = probe_train(tr, ho, cfg, over)
    assert a.fractions == b.fractions and a.epoch_losses == b.epoch_losses
    assert a.curves.shape == (len(ho), 10)
    rows = curves_csv_rows(a)
    assert rows[0][0] == 0 and rows[0][2] == "tte" and len(rows) == 10
    assert "curves" not in a.summary()
    with pytest.raises(ValueError):
        probe_train(tr.subset([]), ho, cfg)
