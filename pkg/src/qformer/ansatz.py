"""Layered variational ansatz ``U(theta) = prod_l prod_k exp(-i theta_lk H_k)``.

Trainable weight matrices are realized as (restrictions of) such unitaries.
With real generators (Pauli strings carrying an odd number of ``Y``
factors) every factor is a real rotation, so the resulting matrices are
real orthogonal and can be fed directly to the real-amplitude circuits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .exceptions import NonUnitaryError, ShapeError
from .statevector import I2, X, Y, Z, UnitaryOp

_PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


def pauli_string(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, _PAULI[ch])
    return out


@lru_cache(maxsize=None)
def real_generator_labels(num_qubits: int) -> tuple[str, ...]:
    """Pauli labels whose exponentials are real: an odd count of ``Y``.

    These span so(2^q), so products of their exponentials reach every
    rotation in SO(2^q).
    """
    return tuple("".join(p) for p in product("IXYZ", repeat=num_qubits)
                 if p.count("Y") % 2 == 1)


def real_generators(num_qubits: int) -> list[np.ndarray]:
    return [pauli_string(lbl) for lbl in real_generator_labels(num_qubits)]


@dataclass
class AnsatzSpec:
    """Generators shared by every layer plus an ``(L, K)`` angle array."""

    generators: list[np.ndarray]
    theta: np.ndarray
    labels: tuple[str, ...] = field(default=())
    involutory: bool = field(default=False, init=False, repr=False, compare=False)
    real_rotations: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim == 1:
            self.theta = self.theta.reshape(1, -1)
        if self.theta.ndim != 2 or self.theta.shape[1] != len(self.generators):
            raise ShapeError(
                f"theta shape {self.theta.shape} does not match {len(self.generators)} generators")
        dims = {np.shape(g) for g in self.generators}
        if len(dims) != 1:
            raise ShapeError("generators must share one dimension")
        for g in self.generators:
            if not np.allclose(g, np.conj(g).T, atol=1e-10, rtol=0):
                raise NonUnitaryError("ansatz generator is not Hermitian")
        eye = np.eye(self.generators[0].shape[0])
        # Pauli strings square to I, which allows exp(-i t H) = cos t - i sin t H
        self.involutory = all(np.allclose(g @ g, eye, atol=1e-12) for g in self.generators)
        # -i H is real for the odd-Y generators; keep it for real arithmetic
        rotations = [-1j * np.asarray(g) for g in self.generators]
        real = self.involutory and all(np.abs(r.imag).max() < 1e-12 for r in rotations)
        self.real_rotations = np.stack([r.real for r in rotations]) if real else None

    @property
    def layer_count(self) -> int:
        return self.theta.shape[0]

    @property
    def dimension(self) -> int:
        return self.generators[0].shape[0]

    @property
    def parameter_count(self) -> int:
        return self.theta.size

    @classmethod
    def real(cls, num_qubits: int, layers: int, theta=None, rng=None) -> "AnsatzSpec":
        """Real-orthogonal ansatz; random angles in ``[-pi, pi)`` if not given."""
        labels = real_generator_labels(num_qubits)
        if theta is None:
            rng = np.random.default_rng(rng)
            theta = rng.uniform(-np.pi, np.pi, size=(layers, len(labels)))
        return cls([pauli_string(lbl) for lbl in labels], theta, labels)

    def with_theta(self, theta) -> "AnsatzSpec":
        """Same generators, new angles (the generators are not re-validated)."""
        out = object.__new__(AnsatzSpec)
        out.generators = self.generators
        out.theta = np.array(theta, dtype=float).reshape(self.theta.shape)
        out.labels = self.labels
        out.involutory = self.involutory
        out.real_rotations = self.real_rotations
        return out


@lru_cache(maxsize=64)
def _eig_cached(key: bytes, dim: int) -> tuple[np.ndarray, np.ndarray]:
    g = np.frombuffer(key, dtype=complex).reshape(dim, dim)
    w, v = np.linalg.eigh(g)
    return w, v


def _eig(generator: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    g = np.ascontiguousarray(generator, dtype=complex)
    return _eig_cached(g.tobytes(), g.shape[0])


def exp_generator(generator: np.ndarray, angle: float) -> np.ndarray:
    """``exp(-i angle H)`` from a cached eigendecomposition."""
    w, v = _eig(generator)
    return (v * np.exp(-1j * angle * w)) @ v.conj().T


def ansatz_matrix(spec: AnsatzSpec) -> np.ndarray:
    """Dense ``U_1 U_2 ... U_L`` with ``U_l = prod_k exp(-i theta_lk H_k)``.

    Products are taken left to right in the written order, so ``H_1`` of
    layer 1 is the leftmost factor.
    """
    if spec.real_rotations is not None:
        R = spec.real_rotations
        out = np.eye(spec.dimension)
        c, sn = np.cos(spec.theta), np.sin(spec.theta)
        for l in range(spec.layer_count):
            for k in range(R.shape[0]):
                if spec.theta[l, k] != 0.0:
                    out = c[l, k] * out + sn[l, k] * (out @ R[k])
        return out.astype(complex)
    eye = np.eye(spec.dimension, dtype=complex)
    out = eye
    for l in range(spec.layer_count):
        for k, g in enumerate(spec.generators):
            theta = spec.theta[l, k]
            if theta == 0.0:
                continue
            if spec.involutory:
                out = out @ (np.cos(theta) * eye - 1j * np.sin(theta) * g)
            else:
                out = out @ exp_generator(g, theta)
    return out


def build_ansatz(spec: AnsatzSpec) -> UnitaryOp:
    return UnitaryOp(ansatz_matrix(spec), "ansatz")


def ansatz_weight(spec: AnsatzSpec, rows: int, cols: int) -> np.ndarray:
    """Real ``rows x cols`` weight matrix read off the top-left of ``U(theta)``."""
    u = ansatz_matrix(spec)
    if rows > u.shape[0] or cols > u.shape[1]:
        raise ShapeError(f"ansatz of dimension {u.shape[0]} cannot hold a {rows}x{cols} matrix")
    block = u[:rows, :cols]
    if np.max(np.abs(block.imag), initial=0.0) > 1e-9:
        raise ShapeError("ansatz generators do not produce a real matrix")
    return np.ascontiguousarray(block.real)


def qubits_for(rows: int, cols: int) -> int:
    size = max(rows, cols, 2)
    return int(np.ceil(np.log2(size)))
