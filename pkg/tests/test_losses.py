import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chrono_dce import tensor as tc
from chrono_dce.losses import LossWeights, combined_loss, crl_loss, cross_entropy, naive_chron_loss, probe_order_loss
from chrono_dce.tensor import Tensor, grad_check


def test_crl_examples():
    assert crl_loss([0.0, 1, 2, 3]).item() == 0
    assert crl_loss([3.0, 2, 1, 0]).item() == 3
    assert crl_loss([0.0, 2, 1, 3]).item() == 1
    assert crl_loss([5.0, 5, 5]).item() == 0
    with pytest.raises(ValueError):
        crl_loss([1.0])


def test_naive_loss_cannot_tell_a_detour_from_a_ramp():
    assert naive_chron_loss([0.0, 1, 2]).item() == naive_chron_loss([0.0, 5, 2]).item() == -2
    assert crl_loss([0.0, 5, 2]).item() == 3


def test_brute_force_length_five_ternary():
    by_naive = {}
    for seq in itertools.product((0.0, 1.0, 2.0), repeat=5):
        v = list(seq)
        monotone = all(a <= b for a, b in zip(v, v[1:]))
        assert (crl_loss(v).item() == 0) == monotone
        assert naive_chron_loss(v).item() == v[0] - v[-1]
        by_naive.setdefault(v[0] - v[-1], set()).add(monotone)
    assert any(flags == {True, False} for flags in by_naive.values())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=12), st.floats(-50, 50))
def test_crl_is_shift_invariant_and_non_negative(v, c):
    a = crl_loss(v).item()
    b = crl_loss([x + c for x in v]).item()
    assert a >= 0
    assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


def test_batched_losses_average_rows():
    v = np.array([[0.0, 1, 0], [3.0, 2, 1]])
    assert crl_loss(v).item() == (1 + 2) / 2
    assert naive_chron_loss(v).item() == (0 + 2) / 2
    assert probe_order_loss(np.array([0.0, 0.5, 1.0])).item() == 0


def test_cross_entropy_uniform_logits_is_log_k():
    assert abs(cross_entropy(np.zeros(4), 2).item() - math.log(4)) < 1e-15
    assert abs(cross_entropy(np.zeros((3, 4)), [0, 1, 3]).item() - math.log(4)) < 1e-15
    assert cross_entropy(np.array([[1000.0, 0.0]]), [0]).item() < 1e-12


def test_combined_loss_weighting_and_errors():
    cls, crl = Tensor(2.0), Tensor(3.0)
    assert combined_loss(cls, crl).item() == 5
    assert combined_loss(cls, crl, LossWeights(0.5)).item() == 3.5
    assert combined_loss(cls, crl, LossWeights(0.0)) is cls
    with pytest.raises(ValueError):
        combined_loss(Tensor(float("nan")), crl)
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def test_loss_gradients():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(3, 6))
    assert grad_check(crl_loss, v) < 1e-6
    assert grad_check(naive_chron_loss, v) < 1e-6
    assert grad_check(lambda t: cross_entropy(t, [1, 0, 4]), rng.normal(size=(3, 5))) < 1e-6
    # the naive loss only sees its end points
    t = Tensor(v, requires_grad=True)
    tc.backward(naive_chron_loss(t))
    assert np.allclose(t.grad[:, 1:-1], 0) and np.allclose(t.grad[:, 0], 1 / 3) and np.allclose(t.grad[:, -1], -1 / 3)


def test_reversal_and_scaling_identities():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = rng.normal(size=7)
        assert abs(crl_loss(v[::-1].copy()).item() - crl_loss(-v).item()) < 1e-12
        assert abs(crl_loss(3.5 * v).item() - 3.5 * crl_loss(v).item()) < 1e-12
        ramp = np.sort(v)
        assert (crl_loss(ramp).item() == 0) != (crl_loss(ramp[::-1].copy()).item() == 0)


def test_cross_entropy_shift_invariance():
    z = np.random.default_rng(2).normal(size=(4, 6))
    assert abs(cross_entropy(z, [0, 1, 2, 3]).item() - cross_entropy(z + 17.0, [0, 1, 2, 3]).item()) < 1e-12
