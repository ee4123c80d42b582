"""Dense statevector engine over named qubit registers.

Index convention: registers are ordered as listed in the layout and the
first register is the most significant part of the flat index; inside a
register the first qubit is the most significant bit.  For a layout
``[("i", 2), ("k", 2)]`` the amplitude of ``|i>|k>`` sits at flat index
``i * 4 + k``, which is exactly column-major ``vec(X)[k + d*i]`` of a
``d x n`` matrix whose column ``i`` is loaded on ``Reg(k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    CapacityError,
    LayoutError,
    NonUnitaryError,
    PostSelectionError,
)

DEFAULT_MAX_QUBITS = 26
UNITARY_ATOL = 1e-10
NORM_ATOL = 1e-9
MIN_BRANCH_PROBABILITY = 1e-14

_max_qubits = DEFAULT_MAX_QUBITS


def get_max_qubits() -> int:
    return _max_qubits


def set_max_qubits(value: int) -> int:
    """Set the global qubit budget and return the previous one."""
    global _max_qubits
    value = int(value)
    if value < 1:
        raise ValueError("qubit budget must be positive")
    previous, _max_qubits = _max_qubits, value
    return previous


class RegisterLayout:
    """Ordered, named qubit registers with contiguous qubit ranges."""

    __slots__ = ("_registers", "_index")

    def __init__(self, registers: Iterable[tuple[str, int]]):
        regs = tuple((str(name), int(width)) for name, width in registers)
        index = {}
        for pos, (name, width) in enumerate(regs):
            if width < 1:
                raise LayoutError(f"register {name!r} must have at least one qubit")
            if name in index:
                raise LayoutError(f"duplicate register name {name!r}")
            index[name] = pos
        self._registers = regs
        self._index = index

    @property
    def registers(self) -> tuple[tuple[str, int], ...]:
        return self._registers

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self._registers)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(width for _, width in self._registers)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(1 << width for _, width in self._registers)

    @property
    def total_qubits(self) -> int:
        return sum(self.widths)

    @property
    def dim(self) -> int:
        return 1 << self.total_qubits

    def position(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"unknown register {name!r}; layout has {self.names}") from None

    def width(self, name: str) -> int:
        return self._registers[self.position(name)][1]

    def register_dim(self, name: str) -> int:
        return 1 << self.width(name)

    def qubits(self, name: str) -> range:
        """Global qubit indices of ``name`` (qubit 0 is the most significant)."""
        pos = self.position(name)
        start = sum(w for _, w in self._registers[:pos])
        return range(start, start + self._registers[pos][1])

    def extended(self, *registers: tuple[str, int]) -> "RegisterLayout":
        return RegisterLayout(self._registers + tuple(registers))

    def without(self, *names: str) -> "RegisterLayout":
        for name in names:
            self.position(name)
        return RegisterLayout(r for r in self._registers if r[0] not in names)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RegisterLayout) and self._registers == other._registers

    def __hash__(self) -> int:
        return hash(self._registers)

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{w}" for n, w in self._registers)
        return f"RegisterLayout({inner})"


def _check_budget(layout: RegisterLayout, max_qubits: int | None = None) -> None:
    limit = get_max_qubits() if max_qubits is None else max_qubits
    if layout.total_qubits > limit:
        raise CapacityError(
            f"layout needs {layout.total_qubits} qubits, budget is {limit}"
        )


class StateVector:
    """Normalized amplitudes plus a classically tracked norm factor.

    The physical (unnormalized) vector is ``global_scale * amplitudes``.
    Instances are treated as immutable; every operation returns a new one.
    """

    __slots__ = ("layout", "amplitudes", "global_scale")

    def __init__(self, layout: RegisterLayout, amplitudes, global_scale: float = 1.0,
                 *, normalize: bool = False):
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        if amps.size != layout.dim:
            raise LayoutError(f"expected {layout.dim} amplitudes, got {amps.size}")
        norm = float(np.linalg.norm(amps))
        if normalize:
            if norm == 0.0:
                raise PostSelectionError("cannot normalize the zero vector")
            amps = amps / norm
            global_scale = global_scale * norm
        elif abs(norm - 1.0) > NORM_ATOL:
            raise ValueError(f"amplitudes have norm {norm!r}, expected 1")
        if not global_scale > 0:
            raise ValueError("global_scale must be positive")
        self.layout = layout
        self.amplitudes = amps
        self.global_scale = float(global_scale)

    @classmethod
    def from_vector(cls, layout: RegisterLayout, vector) -> "StateVector":
        """Wrap an arbitrary nonzero vector, folding its norm into the scale."""
        return cls(layout, vector, 1.0, normalize=True)

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.shape)

    def physical(self) -> np.ndarray:
        return self.global_scale * self.amplitudes

    def amplitude(self, **values: int) -> complex:
        idx = tuple(values.get(name, 0) for name in self.layout.names)
        return complex(self.tensor()[idx])

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def with_scale(self, global_scale: float) -> "StateVector":
        return StateVector(self.layout, self.amplitudes, global_scale)

    def __repr__(self) -> str:
        return f"StateVector({self.layout!r}, scale={self.global_scale:.6g})"


@dataclass(frozen=True)
class UnitaryOp:
    """An explicit unitary matrix; checked on construction."""

    matrix: np.ndarray
    name: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise NonUnitaryError(f"{self.name or 'op'}: matrix must be square")
        dim = m.shape[0]
        if dim & (dim - 1):
            raise NonUnitaryError(f"{self.name or 'op'}: dimension {dim} is not a power of two")
        if not np.allclose(m.conj().T @ m, np.eye(dim), atol=UNITARY_ATOL, rtol=0):
            raise NonUnitaryError(f"{self.name or 'op'}: matrix is not unitary")
        object.__setattr__(self, "matrix", m)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def dagger(self) -> "UnitaryOp":
        return UnitaryOp(self.matrix.conj().T, f"{self.name}^dagger" if self.name else "")


def is_unitary(matrix: np.ndarray, atol: float = UNITARY_ATOL) -> bool:
    m = np.asarray(matrix)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.allclose(
        m.conj().T @ m, np.eye(m.shape[0]), atol=atol, rtol=0)


# -- elementary gates -------------------------------------------------------

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


def ry(angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def hadamard_n(num_qubits: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for _ in range(num_qubits):
        out = np.kron(out, HADAMARD)
    return out


def qft_matrix(num_qubits: int) -> np.ndarray:
    """Fourier transform ``|x> -> sum_y e^{2 pi i x y / N} |y> / sqrt(N)``."""
    dim = 1 << num_qubits
    k = np.arange(dim)
    return np.exp(2j * np.pi * np.outer(k, k) / dim) / np.sqrt(dim)


def zero_reflection(dim: int) -> np.ndarray:
    """``I - 2|0><0|``."""
    out = np.eye(dim, dtype=complex)
    out[0, 0] = -1.0
    return out


def householder_loader(vector) -> np.ndarray:
    """Real orthogonal matrix whose first column is ``vector / ||vector||``."""
    v = np.asarray(vector, dtype=float).reshape(-1)
    peak = np.abs(v).max(initial=0.0)
    if peak == 0:
        raise ValueError("cannot load the zero vector")
    v = v / peak  # avoids underflow in the norm of tiny vectors
    u = v / np.linalg.norm(v)
    e0 = np.zeros_like(u)
    e0[0] = 1.0
    w = e0 - u
    wn = w @ w
    if wn < 1e-30:
        return np.eye(u.size)
    return np.eye(u.size) - 2.0 * np.outer(w, w) / wn


# -- state construction -----------------------------------------------------

def zero_state(layout: RegisterLayout, max_qubits: int | None = None) -> StateVector:
    _check_budget(layout, max_qubits)
    amps = np.zeros(layout.dim, dtype=complex)
    amps[0] = 1.0
    return StateVector(layout, amps)


def basis_state(layout: RegisterLayout, **values: int) -> StateVector:
    _check_budget(layout)
    amps = np.zeros(layout.shape, dtype=complex)
    idx = []
    for name in layout.names:
        v = int(values.get(name, 0))
        if not 0 <= v < layout.register_dim(name):
            raise LayoutError(f"value {v} out of range for register {name!r}")
        idx.append(v)
    amps[tuple(idx)] = 1.0
    return StateVector(layout, amps.reshape(-1))


def add_registers(state: StateVector, *registers: tuple[str, int]) -> StateVector:
    """Append registers initialised to ``|0>``."""
    layout = state.layout.extended(*registers)
    _check_budget(layout)
    extra = 1 << sum(w for _, w in registers)
    amps = np.zeros((state.layout.dim, extra), dtype=complex)
    amps[:, 0] = state.amplitudes
    return StateVector(layout, amps.reshape(-1), state.global_scale)


def reorder(state: StateVector, names: Sequence[str]) -> StateVector:
    """Permute register order (a relabelling, not a physical operation)."""
    if sorted(names) != sorted(state.layout.names):
        raise LayoutError("reorder needs a permutation of the layout names")
    axes = [state.layout.position(n) for n in names]
    layout = RegisterLayout((n, state.layout.width(n)) for n in names)
    amps = np.transpose(state.tensor(), axes).reshape(-1)
    return StateVector(layout, amps, state.global_scale)


# -- kernels ----------------------------------------------------------------

def _axes(layout: RegisterLayout, names: Sequence[str]) -> list[int]:
    names = list(names)
    if len(set(names)) != len(names):
        raise LayoutError(f"repeated register in {names}")
    return [layout.position(n) for n in names]


def _front(state: StateVector, axes: list[int]) -> tuple[np.ndarray, tuple[int, ...]]:
    t = np.moveaxis(state.tensor(), axes, list(range(len(axes))))
    return t, t.shape


def _back(t: np.ndarray, moved_shape, axes: list[int]) -> np.ndarray:
    t = np.moveaxis(t.reshape(moved_shape), list(range(len(axes))), axes)
    return np.ascontiguousarray(t).reshape(-1)


def _target_dim(layout: RegisterLayout, names: Sequence[str]) -> int:
    return 1 << sum(layout.width(n) for n in names)


def apply_matrix(state: StateVector, matrix: np.ndarray, targets: Sequence[str]) -> np.ndarray:
    """Raw ``(matrix on targets) @ amplitudes``; no unitarity check, no wrapping."""
    axes = _axes(state.layout, targets)
    dim = _target_dim(state.layout, targets)
    if matrix.shape != (dim, dim):
        raise LayoutError(f"matrix shape {matrix.shape} does not match targets dimension {dim}")
    t, shape = _front(state, axes)
    out = matrix @ t.reshape(dim, -1)
    return _back(out, shape, axes)


def apply_unitary(state: StateVector, op: UnitaryOp | np.ndarray,
                  targets: Sequence[str] | str) -> StateVector:
    if isinstance(targets, str):
        targets = [targets]
    if not isinstance(op, UnitaryOp):
        op = UnitaryOp(op)
    amps = apply_matrix(state, op.matrix, targets)
    return StateVector(state.layout, amps, state.global_scale)


def apply_controlled(state: StateVector, op: UnitaryOp | np.ndarray, control: str,
                     control_value: int, targets: Sequence[str] | str) -> StateVector:
    """Apply ``op`` on ``targets`` only in the branch ``control == control_value``."""
    if isinstance(targets, str):
        targets = [targets]
    if control in targets:
        raise LayoutError(f"control register {control!r} overlaps the targets")
    if not isinstance(op, UnitaryOp):
        op = UnitaryOp(op)
    layout = state.layout
    if not 0 <= control_value < layout.register_dim(control):
        raise LayoutError(f"control value {control_value} out of range for {control!r}")
    axes = _axes(layout, [control, *targets])
    dim = _target_dim(layout, targets)
    if op.dimension != dim:
        raise LayoutError(f"op dimension {op.dimension} does not match targets dimension {dim}")
    t, shape = _front(state, axes)
    t = t.reshape(shape[0], dim, -1).copy()
    t[control_value] = op.matrix @ t[control_value]
    return StateVector(layout, _back(t, shape, axes), state.global_scale)


def apply_multiplexed(state: StateVector, blocks: np.ndarray, controls: Sequence[str],
                      targets: Sequence[str], *, check: bool = False) -> StateVector:
    """Apply ``sum_c |c><c| (x) blocks[c]``.

    ``blocks`` has shape ``(C, D, D)`` where ``C`` runs over the joint value of
    ``controls`` (first control most significant) and ``D`` is the joint
    dimension of ``targets``.
    """
    controls, targets = list(controls), list(targets)
    if set(controls) & set(targets):
        raise LayoutError("control and target registers overlap")
    layout = state.layout
    cdim = _target_dim(layout, controls) if controls else 1
    tdim = _target_dim(layout, targets)
    blocks = np.asarray(blocks)
    if blocks.shape != (cdim, tdim, tdim):
        raise LayoutError(f"blocks shape {blocks.shape} != {(cdim, tdim, tdim)}")
    if check:
        gram = np.einsum("cji,cjk->cik", blocks.conj(), blocks)
        if not np.allclose(gram, np.eye(tdim)[None], atol=UNITARY_ATOL, rtol=0):
            raise NonUnitaryError("multiplexed block is not unitary")
    axes = _axes(layout, controls + targets)
    t, shape = _front(state, axes)
    t = t.reshape(cdim, tdim, -1)
    if cdim <= 16:
        # few large blocks: per-block BLAS beats a batched matmul
        out = np.empty(t.shape, dtype=complex)
        for c in range(cdim):
            np.matmul(blocks[c], t[c], out=out[c])
    else:
        out = np.matmul(blocks, t)
    return StateVector(layout, _back(out, shape, axes), state.global_scale)


def apply_xor(state: StateVector, controls: Sequence[str], target: str,
              table) -> StateVector:
    """Reversible classical function ``|c>|v> -> |c>|v XOR table[c]>``."""
    controls = list(controls)
    layout = state.layout
    cdim = _target_dim(layout, controls) if controls else 1
    tdim = layout.register_dim(target)
    table = np.asarray(table, dtype=np.int64).reshape(-1)
    if table.size != cdim:
        raise LayoutError(f"xor table has {table.size} entries, expected {cdim}")
    if table.min(initial=0) < 0 or table.max(initial=0) >= tdim:
        raise LayoutError("xor table value does not fit the target register")
    axes = _axes(layout, controls + [target])
    t, shape = _front(state, axes)
    t = t.reshape(cdim, tdim, -1)
    idx = np.arange(tdim)[None, :] ^ table[:, None]
    out = np.take_along_axis(t, idx[:, :, None], axis=1)
    return StateVector(layout, _back(out, shape, axes), state.global_scale)


def post_select(state: StateVector, register: str, outcome: int = 0, *,
                drop: bool = False) -> tuple[StateVector, float]:
    """Project ``register`` onto ``|outcome>`` and renormalize.

    Returns the post-selected state and the branch probability.  The global
    scale is multiplied by ``sqrt(probability)`` so the physical vector is the
    plain projection of the physical input.  With ``drop=True`` the (now
    definite) register is removed from the layout.
    """
    layout = state.layout
    if not 0 <= outcome < layout.register_dim(register):
        raise LayoutError(f"outcome {outcome} out of range for {register!r}")
    axes = [layout.position(register)]
    t, shape = _front(state, axes)
    branch = t[outcome]
    prob = float(np.vdot(branch, branch).real)
    if prob < MIN_BRANCH_PROBABILITY:
        raise PostSelectionError(
            f"post-selecting {register}={outcome} has probability {prob:.3g}")
    root = np.sqrt(prob)
    if drop:
        return StateVector(layout.without(register), branch.reshape(-1) / root,
                           state.global_scale * root), prob
    out = np.zeros_like(t)
    out[outcome] = branch / root
    return StateVector(layout, _back(out, shape, axes), state.global_scale * root), prob


def post_select_many(state: StateVector, outcomes: dict[str, int], *,
                     drop: bool = False) -> tuple[StateVector, float]:
    """Joint post-selection; the probability is that of the joint outcome."""
    total = 1.0
    for name, value in outcomes.items():
        state, p = post_select(state, name, value, drop=drop)
        total *= p
    return state, total


def fidelity(a: StateVector, b: StateVector) -> float:
    if a.layout != b.layout:
        raise LayoutError("fidelity needs identical layouts")
    return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2))


def vector_fidelity(a, b) -> float:
    """``|<a|b>|^2 / (|a|^2 |b|^2)`` for raw vectors."""
    a = np.asarray(a, dtype=complex).reshape(-1)
    b = np.asarray(b, dtype=complex).reshape(-1)
    na, nb = np.vdot(a, a).real, np.vdot(b, b).real
    if na == 0 or nb == 0:
        raise PostSelectionError("fidelity with a zero vector is undefined")
    return float(min(1.0, abs(np.vdot(a, b)) ** 2 / (na * nb)))


def measure_distribution(state: StateVector, register: str | Sequence[str]) -> np.ndarray:
    """Marginal Born probabilities of one register (or a joint register list)."""
    names = [register] if isinstance(register, str) else list(register)
    axes = _axes(state.layout, names)
    t, _ = _front(state, axes)
    dim = _target_dim(state.layout, names)
    probs = np.abs(t.reshape(dim, -1)) ** 2
    return probs.sum(axis=1)


def reduced_fidelity(state: StateVector, reference: StateVector,
                     traced: Sequence[str]) -> float:
    """``<ref| Tr_traced(|state><state|) |ref>``."""
    keep = [n for n in state.layout.names if n not in traced]
    if reference.layout != RegisterLayout((n, state.layout.width(n)) for n in keep):
        raise LayoutError("reference layout must equal the untraced registers in order")
    axes = _axes(state.layout, keep)
    t, _ = _front(state, axes)
    t = t.reshape(reference.layout.dim, -1)
    overlaps = reference.amplitudes.conj() @ t
    return float(np.sum(np.abs(overlaps) ** 2))


# -- circuits ----------------------------------------------------------------

@dataclass(frozen=True)
class Step:
    """One circuit instruction.

    ``kind`` is ``"unitary"`` (payload: matrix), ``"controlled"`` (payload:
    ``(matrix, control, value)``), ``"multiplexed"`` (payload: block array,
    ``controls``) or ``"xor"`` (payload: table, ``controls``).
    """

    kind: str
    payload: object
    targets: tuple[str, ...]
    controls: tuple[str, ...] = ()
    label: str = ""


class Circuit:
    """Ordered list of steps acting on named registers."""

    def __init__(self, steps: Iterable[Step] = ()):
        self.steps: list[Step] = list(steps)

    def unitary(self, matrix, targets, label: str = "") -> "Circuit":
        targets = (targets,) if isinstance(targets, str) else tuple(targets)
        self.steps.append(Step("unitary", np.asarray(matrix, dtype=complex), targets, (), label))
        return self

    def controlled(self, matrix, control: str, value: int, targets, label: str = "") -> "Circuit":
        targets = (targets,) if isinstance(targets, str) else tuple(targets)
        self.steps.append(Step("controlled", (np.asarray(matrix, dtype=complex), value),
                               targets, (control,), label))
        return self

    def multiplexed(self, blocks, controls, targets, label: str = "") -> "Circuit":
        self.steps.append(Step("multiplexed", np.asarray(blocks, dtype=complex),
                               tuple(targets), tuple(controls), label))
        return self

    def xor(self, table, controls, target: str, label: str = "") -> "Circuit":
        self.steps.append(Step("xor", np.asarray(table, dtype=np.int64), (target,),
                               tuple(controls), label))
        return self

    def extend(self, other: "Circuit") -> "Circuit":
        self.steps.extend(other.steps)
        return self

    def __add__(self, other: "Circuit") -> "Circuit":
        return Circuit(self.steps + other.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def registers(self) -> set[str]:
        out: set[str] = set()
        for s in self.steps:
            out.update(s.targets)
            out.update(s.controls)
        return out

    def inverse(self) -> "Circuit":
        inv = []
        for s in reversed(self.steps):
            if s.kind == "unitary":
                payload = s.payload.conj().T
            elif s.kind == "controlled":
                payload = (s.payload[0].conj().T, s.payload[1])
            elif s.kind == "multiplexed":
                payload = np.conj(np.swapaxes(s.payload, 1, 2))
            else:
                payload = s.payload
            inv.append(Step(s.kind, payload, s.targets, s.controls, s.label))
        return Circuit(inv)

    def controlled_on(self, register: str, value: int, register_dim: int) -> "Circuit":
        """The same circuit acting only when ``register == value``."""
        out = []
        for s in self.steps:
            if register in s.targets or register in s.controls:
                raise LayoutError(f"{register!r} already used by the circuit")
            if s.kind == "unitary":
                dim = s.payload.shape[0]
                blocks = np.broadcast_to(np.eye(dim, dtype=complex), (register_dim, dim, dim)).copy()
                blocks[value] = s.payload
                out.append(Step("multiplexed", blocks, s.targets, (register,), s.label))
            elif s.kind == "controlled":
                raise LayoutError("controlled_on does not nest single-value controls; "
                                  "use multiplexed steps")
            elif s.kind == "multiplexed":
                c, dim, _ = s.payload.shape
                blocks = np.broadcast_to(np.eye(dim, dtype=complex),
                                         (register_dim, c, dim, dim)).copy()
                blocks[value] = s.payload
                out.append(Step("multiplexed", blocks.reshape(register_dim * c, dim, dim),
                                s.targets, (register, *s.controls), s.label))
            else:
                table = np.zeros((register_dim, s.payload.size), dtype=np.int64)
                table[value] = s.payload
                out.append(Step("xor", table.reshape(-1), s.targets,
                                (register, *s.controls), s.label))
        return Circuit(out)

    def apply(self, state: StateVector) -> StateVector:
        for s in self.steps:
            if s.kind == "unitary":
                amps = apply_matrix(state, s.payload, s.targets)
                state = StateVector(state.layout, amps, state.global_scale)
            elif s.kind == "controlled":
                matrix, value = s.payload
                state = apply_controlled(state, UnitaryOp(matrix), s.controls[0], value,
                                         s.targets)
            elif s.kind == "multiplexed":
                state = apply_multiplexed(state, s.payload, s.controls, s.targets)
            elif s.kind == "xor":
                state = apply_xor(state, s.controls, s.targets[0], s.payload)
            else:  # pragma: no cover - guarded by constructors
                raise ValueError(f"unknown step kind {s.kind!r}")
        return state

    def check_unitary(self) -> None:
        for s in self.steps:
            if s.kind == "unitary" and not is_unitary(s.payload):
                raise NonUnitaryError(f"step {s.label or s.kind} is not unitary")
            if s.kind == "multiplexed":
                gram = np.einsum("cji,cjk->cik", s.payload.conj(), s.payload)
                if not np.allclose(gram, np.eye(s.payload.shape[1])[None], atol=UNITARY_ATOL):
                    raise NonUnitaryError(f"step {s.label or s.kind} is not unitary")
