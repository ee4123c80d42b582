"""Amplitude encoding of a sequence matrix and the positional-encoding circuit.

``|psi_X>`` lives on ``Reg(i) (x) Reg(k)`` and equals ``vec(X) / ||X||_F``
(column ``i`` loaded on ``Reg(k)`` under ``|i>``).  The Reg(i) superposition
is weighted by column norms so the equality is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import PostSelectionError, ShapeError
from .lcu import weighted_lcu
from .statevector import (
    Circuit,
    RegisterLayout,
    StateVector,
    X as PAULI_X,
    hadamard_n,
    householder_loader,
    ry,
    zero_state,
)

POSITIONAL_BASE = 10000.0


def _log2_exact(v: int, what: str) -> int:
    q = int(v).bit_length() - 1
    if v < 1 or (1 << q) != v:
        raise ShapeError(f"{what}={v} must be a power of two")
    return q


def sequence_layout(n: int, d: int, *, index: str = "i", feature: str = "k") -> RegisterLayout:
    if n < 2 or d < 2:
        raise ShapeError("registers need at least two basis states")
    return RegisterLayout([(index, _log2_exact(n, "n")), (feature, _log2_exact(d, "d"))])


@dataclass
class CQSP:
    """Block-diagonal loader ``|i>|0> -> |i>|x_i / ||x_i||>``."""

    blocks: np.ndarray
    padded_columns: tuple[int, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    def matrix(self) -> np.ndarray:
        n, d = self.n, self.d
        out = np.zeros((n * d, n * d))
        for i in range(n):
            out[i * d:(i + 1) * d, i * d:(i + 1) * d] = self.blocks[i]
        return out

    def circuit(self, index: str = "i", feature: str = "k") -> Circuit:
        return Circuit().multiplexed(self.blocks, [index], [feature], label="U_X")


def build_cqsp(X, *, pad: bool = True) -> CQSP:
    """Per-column Householder loaders; zero columns load ``|0>`` when ``pad``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError("CQSP needs a matrix")
    d, n = X.shape
    _log2_exact(d, "d")
    _log2_exact(n, "n")
    norms = np.linalg.norm(X, axis=0)
    padded = tuple(int(i) for i in np.flatnonzero(norms == 0))
    if padded and not pad:
        raise ShapeError(f"columns {list(padded)} are zero and padding is disabled")
    blocks = np.empty((n, d, d))
    for i in range(n):
        blocks[i] = np.eye(d) if norms[i] == 0 else householder_loader(X[:, i])
    return CQSP(blocks, padded)


@dataclass
class EncodedInput:
    X: np.ndarray
    frobenius_norm: float
    state: StateVector
    padded_columns: tuple[int, ...] = ()

    @property
    def is_zero(self) -> bool:
        return self.frobenius_norm == 0.0


def psi_x_circuit(X, *, index: str = "i", feature: str = "k") -> Circuit:
    """Circuit preparing ``vec(X)/||X||_F`` from ``|0>|0>``.

    For the all-zero matrix it prepares the padded uniform state.
    """
    X = np.asarray(X, dtype=float)
    norms = np.linalg.norm(X, axis=0)
    weights = norms if norms.any() else np.ones_like(norms)
    circ = Circuit().unitary(householder_loader(weights), [index], label="column norms")
    return circ.extend(build_cqsp(X).circuit(index, feature))


def prepare_psi_x(X) -> EncodedInput:
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    layout = sequence_layout(n, d)
    cq = build_cqsp(X)
    state = psi_x_circuit(X).apply(zero_state(layout))
    fro = float(np.linalg.norm(X))
    if fro > 0:
        state = state.with_scale(fro)
    return EncodedInput(X, fro, state, cq.padded_columns)


def positional_frequency(d: int) -> float:
    """Per-pair frequency ratio ``w`` so pair ``j`` rotates by ``i * w^j``."""
    return POSITIONAL_BASE ** (-2.0 / d)


def positional_blocks(n: int, d: int) -> np.ndarray:
    """Blocks of ``U_P`` multiplexed over Reg(i), acting on Reg(k) = (j, ancilla).

    Block ``i`` is ``sum_j |j><j| (x) Ry(-2 i w^j)``.
    """
    if d % 2:
        raise ShapeError("positional encoding needs an even dimension")
    w = positional_frequency(d)
    pairs = d // 2
    blocks = np.zeros((n, d, d))
    for i in range(n):
        for j in range(pairs):
            blocks[i, 2 * j:2 * j + 2, 2 * j:2 * j + 2] = ry(-2.0 * i * w ** j).real
    return blocks


def build_positional_unitary(n: int, d: int) -> np.ndarray:
    blocks = positional_blocks(n, d)
    out = np.zeros((n * d, n * d))
    for i in range(n):
        out[i * d:(i + 1) * d, i * d:(i + 1) * d] = blocks[i]
    return out


def positional_circuit(n: int, d: int, *, index: str = "i", feature: str = "k") -> Circuit:
    """Uniform Reg(i) and Reg(j), ancilla flipped to ``|1>``, then ``U_P``.

    The output is ``vec(P)/||P||_F`` exactly: each column of ``P`` has norm
    ``sqrt(d/2)``.
    """
    pair_qubits = _log2_exact(d, "d") - 1
    prep_k = np.kron(hadamard_n(pair_qubits), PAULI_X).real
    return (Circuit()
            .unitary(hadamard_n(_log2_exact(n, "n")).real, [index], label="H index")
            .unitary(prep_k, [feature], label="H pair, X ancilla")
            .multiplexed(positional_blocks(n, d), [index], [feature], label="U_P"))


def positional_state(n: int, d: int) -> StateVector:
    state = positional_circuit(n, d).apply(zero_state(sequence_layout(n, d)))
    return state.with_scale(float(np.sqrt(n * d / 2)))


def prepare_psi_x_prime(X, position_weight: float = 1.0) -> tuple[StateVector, float]:
    """``(vec(X) + position_weight * vec(P))`` normalized via a weighted LCU.

    Returns the post-selected state (``global_scale = ||X + w P||_F``) and the
    post-selection probability.
    """
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    if position_weight < 0:
        raise ValueError("position weight must be non-negative")
    layout = sequence_layout(n, d)
    fro = float(np.linalg.norm(X))
    p_norm = position_weight * float(np.sqrt(n * d / 2))
    branches = [(fro, psi_x_circuit(X)), (p_norm, positional_circuit(n, d))]
    try:
        return weighted_lcu(zero_state(layout), branches, ancilla="lcu")
    except PostSelectionError:
        raise PostSelectionError("X + P vanishes; nothing to encode") from None


__all__ = [
    "CQSP", "EncodedInput", "build_cqsp", "build_positional_unitary",
    "positional_blocks", "positional_circuit", "positional_frequency", "positional_state",
    "prepare_psi_x", "prepare_psi_x_prime", "psi_x_circuit", "sequence_layout",
]
