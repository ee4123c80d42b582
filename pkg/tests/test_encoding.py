import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from qformer.encoding import (
    build_cqsp,
    positional_state,
    prepare_psi_x,
    prepare_psi_x_prime,
)
from qformer.exceptions import PostSelectionError, ShapeError
from qformer.reference import ref_positional_matrix
from qformer.transformer import read_matrix

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def amplitudes(X):
    return X.T.ravel() / np.linalg.norm(X)


@given(arrays(float, (4, 4), elements=finite))
def test_psi_x_amplitudes(X):
    if np.linalg.norm(X) < 1e-6:
        return
    enc = prepare_psi_x(X)
    f = abs(np.vdot(enc.state.amplitudes, amplitudes(X))) ** 2
    assert f >= 1 - 1e-9
    assert np.isclose(enc.frobenius_norm, np.linalg.norm(X))


def test_zero_columns_are_padded(rng):
    X = rng.normal(size=(4, 4))
    X[:, 2] = 0
    enc = prepare_psi_x(X)
    assert enc.padded_columns == (2,)
    assert np.allclose(enc.state.amplitudes.real, amplitudes(X))
    with pytest.raises(ShapeError):
        build_cqsp(X, pad=False)


def test_cqsp_blocks_load_columns(rng):
    X = rng.normal(size=(8, 4))
    cq = build_cqsp(X)
    for i in range(4):
        assert np.allclose(cq.blocks[i][:, 0], X[:, i] / np.linalg.norm(X[:, i]))
        assert np.allclose(cq.blocks[i].T @ cq.blocks[i], np.eye(8))
    M = cq.matrix()
    assert np.allclose(M.T @ M, np.eye(32))


def test_rejects_non_power_of_two():
    with pytest.raises(ShapeError):
        build_cqsp(np.ones((3, 4)))


@pytest.mark.parametrize("n", [4, 8])
@pytest.mark.parametrize("d", [2, 4, 8])
def test_positional_matches_reference(n, d):
    P = ref_positional_matrix(n, d)
    got = read_matrix(positional_state(n, d), d, physical=False)
    assert np.abs(got - P / np.linalg.norm(P)).max() <= 1e-9
    assert np.allclose(read_matrix(positional_state(n, d), d), P, atol=1e-9)


@given(st.integers(0, 2 ** 31))
def test_psi_x_prime_adds_positions(seed):
    X = np.random.default_rng(seed).normal(size=(4, 4))
    state, prob = prepare_psi_x_prime(X)
    target = X + ref_positional_matrix(4, 4)
    assert abs(np.vdot(state.amplitudes, amplitudes(target))) ** 2 >= 1 - 1e-9
    assert 0 < prob <= 1


def test_psi_x_prime_cancellation_raises():
    P = ref_positional_matrix(4, 4)
    with pytest.raises(PostSelectionError):
        prepare_psi_x_prime(-P)
    with pytest.raises(ValueError):
        prepare_psi_x_prime(P, position_weight=-1)
