"""Coherent evaluation of attention scores into a fixed-point value register.

For every branch ``|first>|second>`` the oracle

1. prepares an interference test whose good-ancilla probability is
   ``sin^2(theta)`` with ``-cos(2 theta)`` equal to the overlap of the two
   loaded unit vectors,
2. phase-estimates the Grover operator ``G = U C2 U^dagger C1`` (eigenphases
   ``+-2 theta``) into a ``t``-qubit amplitude register,
3. XORs the ``b``-bit word of ``norms * (-cos(phase)) / lam_hat`` into the
   value register, and
4. uncomputes steps 2 and 1.

The stored matrix is ``L[first, second]``.  With ``transpose=True`` (the
default, used for block-encoding ``A^T``) ``L[i, j] = A[j, i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import fixedpoint as fp
from .exceptions import LayoutError, ScaleError, ShapeError
from .statevector import (
    HADAMARD,
    Circuit,
    RegisterLayout,
    StateVector,
    hadamard_n,
    householder_loader,
    measure_distribution,
    qft_matrix,
    zero_reflection,
    zero_state,
)

VARIANTS = ("hadamard", "swap")


def power_of_two_at_least(value: float) -> float:
    if value <= 0:
        return 1.0
    return float(2.0 ** math.ceil(math.log2(value) - 1e-12))


def _is_orthogonal(W: np.ndarray) -> bool:
    return W.shape[0] == W.shape[1] and np.allclose(W.T @ W, np.eye(W.shape[0]), atol=1e-10)


def vector_loaders(X: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Loaders with ``L_i |0> = W^T x_i / ||W^T x_i||`` and the norms.

    An orthogonal ``W`` is applied literally after the column loader; other
    weights load the transformed vector directly.  Zero vectors load ``|0>``.
    """
    V = W.T @ X
    norms = np.linalg.norm(V, axis=0)
    p = W.shape[1]
    out = np.empty((X.shape[1], p, p))
    literal = _is_orthogonal(W)
    for i in range(X.shape[1]):
        if norms[i] == 0:
            out[i] = np.eye(p)
        elif literal:
            out[i] = W.T @ householder_loader(X[:, i])
        else:
            out[i] = householder_loader(V[:, i])
    return out, norms


def hadamard_test_unitary(load_a: np.ndarray, load_b: np.ndarray) -> np.ndarray:
    """``(H (x) I)(|0><0| (x) P_a + |1><1| (x) P_b)(H (x) I)`` on (ancilla, T).

    The ancilla reads ``|0>`` with probability ``(1 + <a|b>)/2``.
    """
    p = load_a.shape[0]
    h = np.kron(HADAMARD.real, np.eye(p))
    sel = np.zeros((2 * p, 2 * p))
    sel[:p, :p] = load_a
    sel[p:, p:] = load_b
    return h @ sel @ h


def swap_matrix(p: int) -> np.ndarray:
    idx = np.arange(p * p)
    a, b = divmod(idx, p)
    out = np.zeros((p * p, p * p))
    out[b * p + a, idx] = 1.0
    return out


def swap_test_unitary(load_a: np.ndarray, load_b: np.ndarray) -> np.ndarray:
    """Swap test on (ancilla, T1, T2) after loading ``a`` on T1 and ``b`` on T2.

    The ancilla reads ``|0>`` with probability ``(1 + |<a|b>|^2)/2``.
    """
    p = load_a.shape[0]
    pp = p * p
    h = np.kron(HADAMARD.real, np.eye(pp))
    cswap = np.zeros((2 * pp, 2 * pp))
    cswap[:pp, :pp] = np.eye(pp)
    cswap[pp:, pp:] = swap_matrix(p)
    load = np.kron(np.eye(2), np.kron(load_a, load_b))
    return h @ cswap @ h @ load


def grover_operator(U: np.ndarray) -> np.ndarray:
    """``G = U C2 U^dagger C1`` with ``C1 = Z`` on the ancilla (leading qubit)
    and ``C2 = I - 2|0><0|``."""
    dim = U.shape[0]
    c1 = np.ones(dim)
    c1[dim // 2:] = -1.0
    return U @ zero_reflection(dim).real @ U.T.conj() @ np.diag(c1)


def grover_powers(G: np.ndarray, count: int) -> np.ndarray:
    out = np.empty((count,) + G.shape, dtype=G.dtype)
    out[0] = np.eye(G.shape[0])
    for c in range(1, count):
        out[c] = out[c - 1] @ G
    return out


def invariant_subspace(U: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the good/bad span of ``U|0>``."""
    dim = U.shape[0]
    psi = U[:, 0]
    cols = []
    for part in (slice(0, dim // 2), slice(dim // 2, dim)):
        v = np.zeros(dim, dtype=psi.dtype)
        v[part] = psi[part]
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            cols.append(v / nv)
    return np.stack(cols, axis=1)


def grover_eigenphases(U: np.ndarray) -> tuple[np.ndarray, float]:
    """Eigenphases of ``G`` restricted to its invariant plane and the
    invariance residual ``||G B - B (B^dagger G B)||``."""
    G = grover_operator(U)
    B = invariant_subspace(U)
    M = B.conj().T @ G @ B
    residual = float(np.linalg.norm(G @ B - B @ M))
    return np.sort(np.angle(np.linalg.eigvals(M))), residual


def overlap_from_good_probability(p_good: float, variant: str = "hadamard") -> float:
    """Invert the ancilla statistics: ``-cos(2 theta)`` with ``sin^2 theta = p``."""
    return float(2.0 * p_good - 1.0)


@dataclass
class AttentionOracle:
    """Score oracle ``|first>|second>|0> -> |first>|second>|word(L[first, second])>``.

    ``mask`` zeroes branches following :func:`qformer.reference.ref_mask`
    conventions applied to ``A`` (``"none"``, ``"lower"``, ``"causal"``).
    """

    X: np.ndarray
    W_Q: np.ndarray
    W_K: np.ndarray
    t: int = 5
    b: int = 6
    variant: str = "hadamard"
    transpose: bool = True
    lam_hat: float | None = None
    mask: str = "none"
    first: str = "i"
    second: str = "j"
    value: str = "value"
    prefix: str = ""
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.W_Q = np.asarray(self.W_Q, dtype=float)
        self.W_K = np.asarray(self.W_K, dtype=float)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.mask not in ("none", "lower", "causal"):
            raise ValueError(f"unknown mask {self.mask!r}")
        if self.t < 3:
            raise ValueError("phase estimation needs t >= 3")
        d, n = self.X.shape
        if self.W_Q.shape != self.W_K.shape or self.W_Q.shape[0] != d:
            raise ShapeError(f"W_Q {self.W_Q.shape} / W_K {self.W_K.shape} vs X {self.X.shape}")
        p = self.W_Q.shape[1]
        if n < 2 or n & (n - 1) or p < 2 or p & (p - 1):
            raise ShapeError("sequence length and key dimension must be powers of two >= 2")
        q_load, q_norm = vector_loaders(self.X, self.W_Q)
        k_load, k_norm = vector_loaders(self.X, self.W_K)
        if self.transpose:
            self._loads = (k_load, q_load)
            self._norms = (k_norm, q_norm)
        else:
            self._loads = (q_load, k_load)
            self._norms = (q_norm, k_norm)
        bound = float(self._norms[0].max() * self._norms[1].max())
        if self.lam_hat is None:
            self.lam_hat = power_of_two_at_least(bound)
        elif self.lam_hat < float(np.abs(self.matrix()).max()):
            raise ScaleError(f"lam_hat={self.lam_hat} is below max|L|={np.abs(self.matrix()).max()}")
        self.lam_hat = float(self.lam_hat)

    # -- geometry -------------------------------------------------------------

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.W_Q.shape[1]

    @property
    def index_qubits(self) -> int:
        return int(math.log2(self.n))

    def name(self, work: str) -> str:
        return f"{self.prefix}{work}"

    def work_registers(self) -> list[tuple[str, int]]:
        pq = int(math.log2(self.p))
        regs = [(self.name("anc"), 1)]
        if self.variant == "hadamard":
            regs.append((self.name("T"), pq))
        else:
            regs += [(self.name("T1"), pq), (self.name("T2"), pq)]
        regs.append((self.name("amp"), self.t))
        if self.mask != "none":
            regs.append((self.name("cmp"), 1))
        return regs

    def test_registers(self) -> list[str]:
        if self.variant == "hadamard":
            return [self.name("anc"), self.name("T")]
        return [self.name("anc"), self.name("T1"), self.name("T2")]

    def layout(self) -> RegisterLayout:
        q = self.index_qubits
        return RegisterLayout([(self.first, q), (self.second, q), (self.value, self.b)]
                              + self.work_registers())

    # -- classical views --------------------------------------------------------

    def attention_matrix(self) -> np.ndarray:
        return self.X.T @ self.W_Q @ self.W_K.T @ self.X

    def keep(self) -> np.ndarray:
        """Boolean ``(n, n)``: branch ``[first, second]`` is not masked."""
        n = self.n
        f, s = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        row, col = (s, f) if self.transpose else (f, s)
        if self.mask == "lower":
            return col <= row
        if self.mask == "causal":
            return row <= col
        return np.ones((n, n), dtype=bool)

    def matrix(self) -> np.ndarray:
        """The exact stored matrix ``L[first, second]`` (after masking)."""
        A = self.attention_matrix()
        L = A.T if self.transpose else A
        return np.where(self.keep(), L, 0.0)

    def norm_products(self) -> np.ndarray:
        return np.outer(self._norms[0], self._norms[1])

    def overlaps(self) -> np.ndarray:
        """Exact per-branch signed overlap of the loaded unit vectors."""
        a = self._loads[0][:, :, 0]
        b = self._loads[1][:, :, 0]
        return a @ b.T

    def thetas(self) -> np.ndarray:
        s = self.overlaps()
        if self.variant == "swap":
            s = s ** 2
        return fp.overlap_angle(s)

    # -- circuit blocks --------------------------------------------------------------

    def test_blocks(self) -> np.ndarray:
        if "test" not in self._cache:
            la, lb = self._loads
            build = hadamard_test_unitary if self.variant == "hadamard" else swap_test_unitary
            n = self.n
            blocks = [build(la[f], lb[s]) for f in range(n) for s in range(n)]
            self._cache["test"] = np.stack(blocks)
        return self._cache["test"]

    def grover_blocks(self) -> np.ndarray:
        """``G^c`` for every branch and codeword, shape ``(n*n*2^t, D, D)``."""
        if "grover" not in self._cache:
            powers = [grover_powers(grover_operator(U), 1 << self.t) for U in self.test_blocks()]
            arr = np.stack(powers)
            self._cache["grover"] = arr.reshape((-1,) + arr.shape[2:])
        return self._cache["grover"]

    def word_table(self) -> np.ndarray:
        """U_O table over ``(first, second, amp)``: word of the dequantized score."""
        c = np.arange(1 << self.t)
        overlap = fp.codeword_overlap(c, self.t)
        vals = self.norm_products()[:, :, None] * overlap[None, None, :] / self.lam_hat
        words = fp.quantize(vals, self.b)
        return words.reshape(-1)

    def ideal_words(self) -> np.ndarray:
        """Words an exact score would produce (no phase-estimation error)."""
        return np.where(self.keep(), fp.quantize(self.matrix() / self.lam_hat, self.b), 0)

    def nearest_codeword_words(self) -> np.ndarray:
        """Words produced by the nearest ``t``-bit codeword of ``2 theta``."""
        c = fp.angle_codeword(self.thetas(), self.t)
        vals = self.norm_products() * fp.codeword_overlap(c, self.t) / self.lam_hat
        return np.where(self.keep(), fp.quantize(vals, self.b), 0)

    def estimation_circuit(self) -> Circuit:
        """Test preparation followed by phase estimation of ``G``."""
        ctrl = [self.first, self.second]
        amp = self.name("amp")
        targets = self.test_registers()
        return (Circuit()
                .multiplexed(self.test_blocks(), ctrl, targets, label="parallel test")
                .unitary(hadamard_n(self.t).real, [amp], label="H amp")
                .multiplexed(self.grover_blocks(), ctrl + [amp], targets, label="G^c")
                .unitary(qft_matrix(self.t).conj().T, [amp], label="QFT^dagger"))

    def store_circuit(self) -> Circuit:
        return Circuit().xor(self.word_table(), [self.first, self.second, self.name("amp")],
                             self.value, label="U_O")

    def unmasked_circuit(self) -> Circuit:
        est = self.estimation_circuit()
        return est + self.store_circuit() + est.inverse()

    def circuit(self) -> Circuit:
        """The full oracle including the comparator when masked.

        Only the store step is conditioned on the comparator: estimation and
        its inverse cancel on masked branches either way, so this equals
        conditioning the whole body.
        """
        if self.mask == "none":
            return self.unmasked_circuit()
        cmp = self.name("cmp")
        flag = self.keep().astype(np.int64).reshape(-1)
        ctrl = [self.first, self.second]
        est = self.estimation_circuit()
        return (Circuit().xor(flag, ctrl, cmp, label="compare")
                .extend(est)
                .extend(self.store_circuit().controlled_on(cmp, 1, 2))
                .extend(est.inverse())
                .extend(Circuit().xor(flag, ctrl, cmp, label="uncompare")))

    # -- simulation ----------------------------------------------------------------

    def prepare_branches(self) -> StateVector:
        """Uniform superposition over all ``(first, second)`` with clean work registers."""
        layout = self.layout()
        st = zero_state(layout)
        h = hadamard_n(self.index_qubits).real
        st = Circuit().unitary(h, [self.first]).unitary(h, [self.second]).apply(st)
        return st

    def run(self, state: StateVector | None = None) -> StateVector:
        if state is None:
            state = self.prepare_branches()
        missing = [r for r in self.work_registers() if r[0] not in state.layout]
        if missing:
            raise LayoutError(f"state lacks oracle registers {missing}")
        return self.circuit().apply(state)

    def word_distribution(self, state: StateVector | None = None) -> np.ndarray:
        """``P(word | first, second)`` after the full oracle, shape ``(n, n, 2^b)``."""
        out = self.run(state)
        joint = measure_distribution(out, [self.first, self.second, self.value])
        joint = joint.reshape(self.n, self.n, 1 << self.b)
        return joint / joint.sum(axis=2, keepdims=True)

    def phase_distribution(self) -> np.ndarray:
        """``P(codeword | first, second)`` right after phase estimation."""
        st = self.estimation_circuit().apply(self.prepare_branches())
        joint = measure_distribution(st, [self.first, self.second, self.name("amp")])
        joint = joint.reshape(self.n, self.n, 1 << self.t)
        return joint / joint.sum(axis=2, keepdims=True)

    def stored_words(self, state: StateVector | None = None) -> np.ndarray:
        """Dominant word per branch."""
        return np.argmax(self.word_distribution(state), axis=2)

    def stored_scores(self, state: StateVector | None = None) -> np.ndarray:
        return fp.decode(self.stored_words(state), self.b) * self.lam_hat


def masked_score_oracle(oracle: AttentionOracle, convention: str = "lower") -> AttentionOracle:
    """The same oracle with a comparator that leaves masked branches at word 0."""
    return replace(oracle, mask=convention, _cache={})


def build_parallel_test(X, W_K, W_Q, variant: str = "hadamard", *, transpose: bool = True
                        ) -> np.ndarray:
    """Per-branch test unitaries, shape ``(n*n, D, D)`` over (first, second)."""
    return AttentionOracle(X, W_Q, W_K, variant=variant, transpose=transpose).test_blocks()


def build_grover(U: np.ndarray) -> np.ndarray:
    return grover_operator(U)


def phase_estimate(G: np.ndarray, vector: np.ndarray, t: int) -> np.ndarray:
    """Codeword distribution of phase estimation of ``G`` on ``vector``."""
    if t < 3:
        raise ValueError("phase estimation needs t >= 3")
    dim = G.shape[0]
    layout = RegisterLayout([("amp", t), ("sys", int(math.log2(dim)))])
    st = StateVector(layout, np.kron(np.eye(1 << t)[0], vector), normalize=True)
    circ = (Circuit().unitary(hadamard_n(t), ["amp"])
            .multiplexed(grover_powers(G.astype(complex), 1 << t), ["amp"], ["sys"])
            .unitary(qft_matrix(t).conj().T, ["amp"]))
    return measure_distribution(circ.apply(st), "amp")
