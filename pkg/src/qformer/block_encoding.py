"""Block-encodings: dense matrices from a score oracle, and plain LCU sums.

A :class:`BlockEncoding` is a circuit over *system* registers plus ancilla
registers.  Its encoded matrix is ``alpha`` times the system block obtained
by starting every ancilla in ``|0>`` and projecting every ancilla back onto
``|0>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import fixedpoint as fp
from .attention_oracle import AttentionOracle
from .exceptions import LayoutError, PostSelectionError
from .lcu import prepare_weights
from .statevector import (
    Circuit,
    RegisterLayout,
    StateVector,
    add_registers,
    apply_matrix,
    basis_state,
    hadamard_n,
    is_unitary,
    post_select_many,
)


@dataclass
class BlockEncoding:
    circuit: Circuit
    system: tuple[tuple[str, int], ...]
    ancillas: tuple[tuple[str, int], ...]
    alpha: float
    epsilon: float = 0.0
    ancilla_qubits: int | None = None
    _block: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.ancilla_qubits is None:
            self.ancilla_qubits = sum(w for _, w in self.ancillas)

    @property
    def layout(self) -> RegisterLayout:
        return RegisterLayout(self.system + self.ancillas)

    @property
    def dimension(self) -> int:
        return 1 << sum(w for _, w in self.system)

    @property
    def total_qubits(self) -> int:
        return self.layout.total_qubits

    def _clean(self) -> dict[str, int]:
        return {name: 0 for name, _ in self.ancillas}

    def extract_block(self) -> np.ndarray:
        """Top-left block, one simulated basis input per column."""
        if self._block is not None:
            return self._block
        dim = self.dimension
        layout = self.layout
        sys_names = [n for n, _ in self.system]
        sys_shape = [1 << w for _, w in self.system]
        block = np.zeros((dim, dim), dtype=complex)
        for col in range(dim):
            values = dict(zip(sys_names, np.unravel_index(col, sys_shape)))
            st = self.circuit.apply(basis_state(layout, **{k: int(v) for k, v in values.items()}))
            t = st.tensor()
            idx = tuple(slice(None) if n in sys_names else 0 for n in layout.names)
            block[:, col] = t[idx].reshape(-1)
        self._block = block
        return block

    def encoded_matrix(self) -> np.ndarray:
        return self.alpha * self.extract_block()

    def apply(self, state: StateVector, targets: Sequence[str] | None = None
              ) -> tuple[StateVector, float]:
        """Run the full circuit on ``state`` and post-select clean ancillas.

        ``targets`` renames the system registers to registers of ``state``.
        The global scale is multiplied by ``alpha`` so the physical output is
        the encoded matrix applied to the physical input.
        """
        sys_names = [n for n, _ in self.system]
        targets = list(targets) if targets is not None else sys_names
        if len(targets) != len(sys_names):
            raise LayoutError("one target register per system register")
        rename = dict(zip(targets, sys_names))
        layout = RegisterLayout((rename.get(n, n), w) for n, w in state.layout.registers)
        st = StateVector(layout, state.amplitudes, state.global_scale)
        st = add_registers(st, *self.ancillas)
        st = self.circuit.apply(st)
        st, prob = post_select_many(st, self._clean(), drop=True)
        back = {v: k for k, v in rename.items()}
        layout = RegisterLayout((back.get(n, n), w) for n, w in st.layout.registers)
        return StateVector(layout, st.amplitudes, st.global_scale * self.alpha), prob

    def apply_projected(self, state: StateVector, target: str | Sequence[str]
                        ) -> tuple[StateVector, float]:
        """Same output as :meth:`apply`, using the extracted block directly."""
        targets = [target] if isinstance(target, str) else list(target)
        amps = apply_matrix(state, self.extract_block(), targets)
        prob = float(np.vdot(amps, amps).real)
        if prob < 1e-14:
            raise PostSelectionError(f"block-encoding branch has probability {prob:.3g}")
        root = math.sqrt(prob)
        return StateVector(state.layout, amps / root,
                           state.global_scale * root * self.alpha), prob


def rotation_blocks(b: int) -> np.ndarray:
    """Controlled rotation table: ``|w>|0> -> |w>(a|0> + sqrt(1-a^2)|1>)``."""
    a = fp.decode_table(b)
    s = np.sqrt(np.clip(1.0 - a * a, 0.0, None))
    out = np.empty((a.size, 2, 2))
    out[:, 0, 0] = a
    out[:, 0, 1] = -s
    out[:, 1, 0] = s
    out[:, 1, 1] = a
    return out


def register_swap(width: int) -> np.ndarray:
    dim = 1 << width
    idx = np.arange(dim * dim)
    a, b = divmod(idx, dim)
    out = np.zeros((dim * dim, dim * dim))
    out[b * dim + a, idx] = 1.0
    return out


def block_encode_dense(oracle: AttentionOracle, rotation: str = "rot") -> BlockEncoding:
    """Dense block-encoding of the oracle's stored matrix ``L``.

    Circuit: ``H^s`` on the column register, ``O_A``, word-controlled
    rotation, ``O_A^dagger``, swap of the two index registers, ``H^s``.
    Projecting onto clean ancillas leaves ``L / (n * lam_hat)`` on the
    system (second) register.
    """
    s = oracle.index_qubits
    h = hadamard_n(s).real
    o = oracle.circuit()
    circ = (Circuit().unitary(h, [oracle.first], label="H column")
            .extend(o)
            .multiplexed(rotation_blocks(oracle.b), [oracle.value], [rotation], label="rotation")
            .extend(o.inverse())
            .unitary(register_swap(s), [oracle.first, oracle.second], label="swap")
            .unitary(h, [oracle.first], label="H column"))
    alpha = oracle.n * oracle.lam_hat
    ancillas = ((oracle.first, s), (rotation, 1), (oracle.value, oracle.b),
                *oracle.work_registers())
    return BlockEncoding(circ, ((oracle.second, s),), tuple(ancillas), alpha,
                         epsilon=alpha * 2.0 ** (-oracle.b + 1), ancilla_qubits=s + 1)


def verify_block_encoding(be: BlockEncoding, A_ref) -> float:
    """Max entrywise error between the extracted block and ``A_ref / alpha``."""
    A_ref = np.asarray(A_ref)
    block = be.extract_block()
    if block.shape != A_ref.shape:
        raise LayoutError(f"block {block.shape} vs reference {A_ref.shape}")
    return float(np.abs(block - A_ref / be.alpha).max())


def lcu_combine(ops: Sequence[tuple[float, np.ndarray]], system: str = "sys",
                ancilla: str = "lcu") -> BlockEncoding:
    """Prepare-select-unprepare block-encoding of ``sum_k w_k U_k`` with ``alpha = sum w``."""
    if not ops:
        raise ValueError("lcu_combine needs at least one operator")
    weights = [float(w) for w, _ in ops]
    if any(w <= 0 for w in weights):
        raise ValueError("LCU weights must be positive")
    mats = [np.asarray(u, dtype=complex) for _, u in ops]
    dim = mats[0].shape[0]
    if any(m.shape != (dim, dim) for m in mats) or dim & (dim - 1):
        raise LayoutError("LCU operators must share one power-of-two dimension")
    if not all(is_unitary(m) for m in mats):
        raise ValueError("LCU operators must be unitary")
    prep = prepare_weights(weights)
    width = int(math.log2(prep.shape[0]))
    blocks = np.broadcast_to(np.eye(dim, dtype=complex), (prep.shape[0], dim, dim)).copy()
    blocks[:len(mats)] = mats
    sq = max(1, int(math.log2(dim)))
    if dim == 1:
        raise LayoutError("system needs at least one qubit")
    circ = (Circuit().unitary(prep, [ancilla], label="prepare")
            .multiplexed(blocks, [ancilla], [system], label="select")
            .unitary(prep.T, [ancilla], label="unprepare"))
    return BlockEncoding(circ, ((system, sq),), ((ancilla, width),), float(sum(weights)))
