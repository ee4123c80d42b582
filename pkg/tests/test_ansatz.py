import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from qformer.ansatz import (
    AnsatzSpec,
    ansatz_matrix,
    ansatz_weight,
    build_ansatz,
    pauli_string,
    qubits_for,
    real_generator_labels,
)
from qformer.exceptions import NonUnitaryError, ShapeError


def test_generator_counts():
    # odd number of Y factors: dimension of so(2^q)
    assert len(real_generator_labels(1)) == 1
    assert len(real_generator_labels(2)) == 6
    assert len(real_generator_labels(3)) == 28


def test_product_order_matches_expm():
    spec = AnsatzSpec.real(2, 2, rng=3)
    expect = np.eye(4, dtype=complex)
    for l in range(2):
        for k, g in enumerate(spec.generators):
            expect = expect @ expm(-1j * spec.theta[l, k] * g)
    assert np.allclose(ansatz_matrix(spec), expect, atol=1e-12)


def test_non_pauli_generators_take_the_general_path():
    g = np.diag([1.0, 2.0])
    spec = AnsatzSpec([g], [[0.3]])
    assert not spec.involutory
    assert np.allclose(ansatz_matrix(spec), expm(-0.3j * g))


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_real_ansatz_is_orthogonal(seed, qubits):
    U = ansatz_matrix(AnsatzSpec.real(qubits, 2, rng=seed))
    assert np.abs(U.imag).max() < 1e-12
    assert np.allclose(U.real.T @ U.real, np.eye(1 << qubits), atol=1e-10)


def test_weight_block_and_errors():
    spec = AnsatzSpec.real(3, 1, rng=0)
    W = ansatz_weight(spec, 4, 8)
    assert W.shape == (4, 8)
    assert np.allclose(W @ W.T, np.eye(4), atol=1e-10)
    with pytest.raises(ShapeError):
        ansatz_weight(spec, 16, 2)
    with pytest.raises(ShapeError):
        AnsatzSpec(spec.generators, np.zeros((2, 3)))
    with pytest.raises(NonUnitaryError):
        AnsatzSpec([np.array([[0, 1], [0, 0]])], [[0.1]])
    assert build_ansatz(spec).dimension == 8


def test_with_theta_keeps_generators():
    spec = AnsatzSpec.real(2, 2, rng=1)
    other = spec.with_theta(np.zeros(spec.parameter_count))
    assert other.generators is spec.generators
    assert np.allclose(ansatz_matrix(other), np.eye(4))
    assert spec.theta.any()


def test_pauli_and_qubit_helpers():
    assert np.allclose(pauli_string("XZ"), np.kron([[0, 1], [1, 0]], [[1, 0], [0, -1]]))
    assert qubits_for(4, 8) == 3
    assert qubits_for(1, 1) == 1


@given(st.integers(0, 2 ** 31))
def test_parameter_shift_matches_finite_difference(seed):
    rng = np.random.default_rng(seed)
    labels = ["XY", "ZZ", "YI", "IX", "XZ"]
    theta = rng.uniform(-np.pi, np.pi, size=(2, len(labels)))
    spec = AnsatzSpec([pauli_string(l) for l in labels], theta, tuple(labels))
    psi = rng.normal(size=4) + 1j * rng.normal(size=4)
    psi /= np.linalg.norm(psi)
    O = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    O = O + O.conj().T

    def expectation(t):
        U = ansatz_matrix(spec.with_theta(t))
        v = U @ psi
        return float(np.vdot(v, O @ v).real)

    u = rng.normal(size=theta.shape)
    # exp(-i t P) with P^2 = I: d/dt f = f(t + pi/4) - f(t - pi/4)
    shift = 0.0
    for idx in np.ndindex(theta.shape):
        plus, minus = theta.copy(), theta.copy()
        plus[idx] += np.pi / 4
        minus[idx] -= np.pi / 4
        shift += u[idx] * (expectation(plus) - expectation(minus))
    h = 1e-5
    fd = (expectation(theta + h * u) - expectation(theta - h * u)) / (2 * h)
    assert abs(shift - fd) <= 1e-6 * max(1.0, abs(fd))
