import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relabel_distill.numkit import (
    Rng,
    ShapeError,
    bce_with_logits,
    kl_diag_gaussian_to_standard,
    matmul,
    rng_normal,
    sgd_step,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)

from .gradcheck import numeric_grad, rel_error


def test_matmul_identity_and_zero():
    a = np.array([[1, 2], [3, 4]], np.float32)
    np.testing.assert_array_equal(matmul(a, np.eye(2, dtype=np.float32)), a)
    np.testing.assert_array_equal(matmul(a, np.zeros((2, 3), np.float32)), np.zeros((2, 3)))


def test_matmul_hand_value():
    # 1*3 + 2*4
    assert matmul(np.array([[1, 2]], np.float32), np.array([[3], [4]], np.float32)).tolist() == [[11.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_sigmoid_cases():
    assert sigmoid(np.float32(0.0)) == 0.5
    big = float(sigmoid(np.float32(100.0)))
    assert 1 - 1e-6 < big <= 1.0
    assert float(sigmoid(np.float64(-100.0))) > 0.0


@given(arrays(np.float32, st.integers(1, 20), elements=st.floats(-100, 100, width=32)))
def test_sigmoid_symmetry(x):
    s = sigmoid(x).astype(np.float64) + sigmoid(-x).astype(np.float64)
    np.testing.assert_allclose(s, 1.0, atol=1e-6)
    assert np.all(np.isfinite(sigmoid(x)))


def test_softmax_cases():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(softmax(np.array([1000.0, 1000.0, 1000.0])), [1 / 3] * 3, atol=1e-7)
    e = math.e
    np.testing.assert_allclose(softmax(np.array([1.0, 2.0])), [1 / (1 + e), e / (1 + e)], atol=1e-9)
    np.testing.assert_allclose(softmax(np.array([1.0, 2.0])), [0.268941, 0.731059], atol=1e-6)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1000, 1000)), st.floats(-500, 500))
def test_softmax_normalised_and_shift_invariant(logits, shift):
    p = softmax(logits)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-6
    np.testing.assert_allclose(softmax(logits + shift), p, atol=1e-9)


def test_kl_cases():
    assert kl_diag_gaussian_to_standard(np.zeros(4), np.zeros(4)) == 0.0
    assert kl_diag_gaussian_to_standard(np.array([1.0]), np.array([0.0])) == pytest.approx(0.5)
    with pytest.raises(ShapeError):
        kl_diag_gaussian_to_standard(np.zeros(2), np.zeros(3))


@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), arrays(np.float64, 5, elements=st.floats(-10, 10)))
def test_kl_nonnegative(mu, logvar):
    assert kl_diag_gaussian_to_standard(mu, logvar) >= -1e-12


def test_sgd_step_cases():
    p = np.array([1.0, -2.0], np.float32)
    np.testing.assert_array_equal(sgd_step(p, np.zeros(2), 0.3), p)
    np.testing.assert_array_equal(sgd_step(p, np.ones(2), 0.0), p)
    assert sgd_step(np.array([1.0], np.float32), np.array([2.0]), 0.5).tolist() == [0.0]
    with pytest.raises(ShapeError):
        sgd_step(p, np.ones(3), 0.1)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad = softmax_cross_entropy(logits, labels)
    num = numeric_grad(lambda: softmax_cross_entropy(logits, labels)[0], logits)
    assert rel_error(grad, num) <= 1e-3


def test_bce_gradient_and_value():
    logits = np.array([[0.3, -1.2, 2.0]])
    targets = np.array([[1.0, 0.0, 0.4]])
    loss, grad = bce_with_logits(logits, targets)
    p = 1 / (1 + np.exp(-logits))
    expected = -np.sum(targets * np.log(p) + (1 - targets) * np.log(1 - p))
    assert loss == pytest.approx(expected, rel=1e-12)
    num = numeric_grad(lambda: bce_with_logits(logits, targets)[0], logits)
    assert rel_error(grad, num) <= 1e-3


# --- Rng ------------------------------------------------------------------

def test_splitmix_seeding_reference_values():
    # splitmix64 from state 0: first output is 0xE220A8397B1DCDAF
    assert Rng(0).state[0] == 0xE220A8397B1DCDAF


def test_xoshiro256pp_reference_vector():
    # published xoshiro256++ outputs for state {1, 2, 3, 4}
    rng = Rng(0)
    rng._s = [1, 2, 3, 4]
    assert rng.next_u64s(6) == [
        41943041,
        58720359,
        3588806011781223,
        3591011842654386,
        9228616714210784205,
        9973669472204895162,
    ]


def test_xoshiro_matches_reference_step():
    rng = Rng(0)
    s0, s1, s2, s3 = rng.state
    mask = (1 << 64) - 1
    t = (s0 + s3) & mask
    expected = ((((t << 23) | (t >> 41)) & mask) + s0) & mask
    assert rng.next_u64() == expected


def test_rng_determinism_and_streams():
    a = Rng(42).next_u64s(100)
    assert a == Rng(42).next_u64s(100)
    assert a != Rng(43).next_u64s(100)
    streams = [tuple(Rng(42, s).next_u64s(8)) for s in range(50)]
    assert len(set(streams)) == 50
    assert Rng(42).derive(5).next_u64s(4) == Rng(42, 5).next_u64s(4)


def test_rng_normal_determinism():
    np.testing.assert_array_equal(rng_normal(Rng(9), (3, 5)), rng_normal(Rng(9), (3, 5)))
    assert rng_normal(Rng(9), 7).dtype == np.float32


def test_rng_normal_moments():
    z = rng_normal(Rng(2024), 100_000).astype(np.float64)
    assert abs(z.mean()) <= 0.02
    assert abs(z.var() - 1.0) <= 0.03


def test_uniform_range_and_below():
    u = Rng(1).uniform(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    rng = Rng(1)
    draws = [rng.below(3) for _ in range(3000)]
    assert set(draws) == {0, 1, 2}
    counts = np.bincount(draws)
    assert np.all(np.abs(counts - 1000) < 120)


@given(st.integers(0, 2**64 - 1), st.integers(1, 60))
def test_permutation_is_permutation(seed, n):
    perm = Rng(seed).permutation(n)
    assert sorted(perm.tolist()) == list(range(n))
