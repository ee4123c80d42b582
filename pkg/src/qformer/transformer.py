"""One transformer block as quantum state transformations.

Register layouts (most significant first):

* sequence state ``(i, k)``: ``vec(X)`` for a ``d x n`` matrix,
* head state ``(i, h, k)``: flat index ``i*rH + h*r + k``, i.e. ``vec`` of the
  vertically concatenated head outputs,
* FFN state ``(i, m)``: hidden index ``m``; after ``W2^T`` the same register
  is read as ``(h, k)``.

Three evaluation modes share the same bookkeeping:

``full``
    every oracle is simulated gate by gate (phase estimation included),
``shortcut``
    oracle words are computed from the nearest phase-estimation codeword,
    which is what an ideal estimation returns on its dominant outcome,
``ideal``
    exact real-valued scores and ReLU amplitudes (no quantization).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import fixedpoint as fp
from .attention_oracle import (
    AttentionOracle,
    grover_operator,
    grover_powers,
    hadamard_test_unitary,
    power_of_two_at_least,
)
from .block_encoding import BlockEncoding, block_encode_dense, rotation_blocks
from .encoding import prepare_psi_x
from .exceptions import NonUnitaryError, PostSelectionError, ShapeError
from .reference import ModelParams, ref_stages
from .statevector import (
    Circuit,
    RegisterLayout,
    StateVector,
    apply_matrix,
    hadamard_n,
    householder_loader,
    measure_distribution,
    qft_matrix,
    vector_fidelity,
    zero_state,
)

MODES = ("full", "shortcut", "ideal")


def as_scaled_orthogonal(W, name: str = "W") -> tuple[float, np.ndarray]:
    """Split ``W = c * Q`` with ``Q`` orthogonal; raise if impossible."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ShapeError(f"{name} must be square to act on a register, got {W.shape}")
    c = float(np.linalg.norm(W) / math.sqrt(W.shape[0]))
    if c == 0:
        raise NonUnitaryError(f"{name} is zero")
    Q = W / c
    if not np.allclose(Q.T @ Q, np.eye(W.shape[0]), atol=1e-9):
        raise NonUnitaryError(f"{name} is not a multiple of an orthogonal matrix")
    return c, Q


def apply_weight(state: StateVector, W, targets, name: str = "W", *,
                 transpose: bool = False) -> StateVector:
    """Apply ``W`` (or ``W^T``), a scaled orthogonal matrix, on ``targets``.

    The scale goes to ``global_scale``.
    """
    c, Q = as_scaled_orthogonal(W, name)
    amps = apply_matrix(state, (Q.T if transpose else Q).astype(complex), targets)
    return StateVector(state.layout, amps, state.global_scale * c)


def state_fidelity(state: StateVector, M) -> float:
    """Fidelity of a state against ``vec`` of a column-major matrix."""
    return vector_fidelity(state.amplitudes, np.asarray(M, dtype=float).T.reshape(-1))


def read_matrix(state: StateVector, rows: int, physical: bool = True) -> np.ndarray:
    """Inverse of vec: the ``rows x n`` matrix whose columns sit under ``|i>``."""
    amps = state.physical() if physical else state.amplitudes
    return np.real_if_close(amps.reshape(-1, rows).T, tol=1e6).real


@dataclass
class StageRecord:
    name: str
    fidelity: float | None = None
    postselect_prob: float | None = None
    max_abs_error: float | None = None
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "fidelity": self.fidelity,
                "postselect_prob": self.postselect_prob,
                "max_abs_error": self.max_abs_error, "seconds": self.seconds}


# -- attention -------------------------------------------------------------------

@dataclass
class HeadEncoding:
    """Block-encoding of one head's (masked) ``A^T``: block and scale."""

    block: np.ndarray
    alpha: float
    oracle: AttentionOracle
    encoding: BlockEncoding | None = None


def common_lam_hat(X, params: ModelParams) -> float:
    """Shared power-of-two score scale for all heads."""
    bound = 0.0
    for h in range(params.dims.H):
        q = np.linalg.norm(params.W_Q[h].T @ X, axis=0).max()
        k = np.linalg.norm(params.W_K[h].T @ X, axis=0).max()
        bound = max(bound, float(q * k))
    return power_of_two_at_least(bound)


def encode_head(X, W_Q, W_K, *, t: int, b: int, mode: str = "full", mask: str = "none",
                variant: str = "hadamard", lam_hat: float | None = None) -> HeadEncoding:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    oracle = AttentionOracle(X, W_Q, W_K, t=t, b=b, variant=variant, transpose=True,
                             lam_hat=lam_hat, mask=mask, first="col", second="i")
    n = oracle.n
    alpha = n * oracle.lam_hat
    if mode == "full":
        be = block_encode_dense(oracle)
        return HeadEncoding(be.extract_block().real.copy(), alpha, oracle, be)
    if mode == "shortcut":
        words = oracle.nearest_codeword_words()
        return HeadEncoding(fp.decode(words, b) / n, alpha, oracle)
    return HeadEncoding(oracle.matrix() / alpha, alpha, oracle)


def head_operator(head: HeadEncoding, W_V) -> np.ndarray:
    """Projected action on ``(i, k)``: ``block (x) W_V^T`` (orthogonal part)."""
    _, Q = as_scaled_orthogonal(W_V, "W_V")
    return np.kron(head.block, Q.T)


def single_head(X, W_Q, W_K, W_V, *, t: int = 5, b: int = 6, mode: str = "full",
                mask: str = "none", variant: str = "hadamard", lam_hat: float | None = None,
                joint: bool = False) -> tuple[StateVector, float]:
    """Post-selected ``vec(W_V^T X A)`` (masked per ``mask``) and its probability.

    ``joint=True`` runs the block-encoding circuit on the joint register set
    and post-selects its ancillas; otherwise the extracted block is applied,
    which yields the same post-selected state.
    """
    enc = prepare_psi_x(X)
    if enc.is_zero:
        raise PostSelectionError("X = 0: attention output vanishes")
    head = encode_head(X, W_Q, W_K, t=t, b=b, mode=mode, mask=mask, variant=variant,
                       lam_hat=lam_hat)
    c, Q = as_scaled_orthogonal(W_V, "W_V")
    if joint:
        if head.encoding is None:
            raise ValueError("joint simulation needs mode='full'")
        st, prob = head.encoding.apply(enc.state, targets=["i"])
        amps = apply_matrix(st, Q.T.astype(complex), ["k"])
        return StateVector(st.layout, amps, st.global_scale * c), prob
    amps = apply_matrix(enc.state, head_operator(head, W_V).astype(complex), ["i", "k"])
    return project(enc.state.layout, amps, enc.state.global_scale * head.alpha * c)


def project(layout: RegisterLayout, amps: np.ndarray, prepared_scale: float
            ) -> tuple[StateVector, float]:
    """Wrap the sub-normalized clean branch ``amps`` of a post-selection.

    ``prepared_scale`` is the physical scale of the state before the
    post-selection; the result's scale is ``prepared_scale * sqrt(p)``.
    """
    prob = float(np.vdot(amps, amps).real)
    if prob < 1e-10:
        raise PostSelectionError(f"post-selection probability {prob:.3g} is vanishing")
    root = math.sqrt(prob)
    return StateVector(layout, amps / root, prepared_scale * root), prob


def head_layout(dims) -> RegisterLayout:
    regs = [("i", dims.qubits("n"))]
    if dims.H > 1:
        regs.append(("h", dims.qubits("H")))
    regs.append(("k", int(math.log2(dims.r))))
    return RegisterLayout(regs)


def _head_registers(dims) -> list[str]:
    return ["h", "k"] if dims.H > 1 else ["k"]


@dataclass
class AttentionResult:
    """``state`` is ``None`` when a zero weight switches attention off."""

    state: StateVector | None
    prob: float
    heads: list[HeadEncoding]
    prepared_scale: float

    @property
    def vanished(self) -> bool:
        return self.state is None


def attention_vanishes(params: ModelParams) -> bool:
    if not np.any(params.W_O):
        return True
    return all(not (np.any(params.W_Q[h]) and np.any(params.W_K[h]) and np.any(params.W_V[h]))
               for h in range(params.dims.H))


def multi_head(X, params: ModelParams, *, mode: str = "full", mask: str = "none",
               variant: str = "hadamard", t: int | None = None, b: int | None = None
               ) -> AttentionResult:
    """``vec(W_O^T [Z_1; ...; Z_H])`` on ``(i, h, k)``.

    Every head shares one ``lam_hat`` so the heads have a common ``alpha``
    and the post-selected branch is the exact concatenation.
    """
    dims = params.dims
    t = dims.t if t is None else t
    b = dims.b if b is None else b
    if dims.r != dims.d:
        raise ShapeError("the value register must have the width of Reg(k) (r == d)")
    X = np.asarray(X, dtype=float)
    enc = prepare_psi_x(X)
    if enc.is_zero:
        raise PostSelectionError("X = 0: attention output vanishes")
    if attention_vanishes(params):
        return AttentionResult(None, 0.0, [], 0.0)
    lam = common_lam_hat(X, params)
    heads, ops, scales = [], [], []
    for h in range(dims.H):
        head = encode_head(X, params.W_Q[h], params.W_K[h], t=t, b=b, mode=mode, mask=mask,
                           variant=variant, lam_hat=lam)
        c, _ = as_scaled_orthogonal(params.W_V[h], "W_V")
        heads.append(head)
        ops.append(head_operator(head, params.W_V[h]))
        scales.append(c)
    if not np.allclose(scales, scales[0]):
        raise NonUnitaryError("heads need a common W_V scale")
    layout = head_layout(dims)
    # uniform Reg(h) next to |psi_X>: physical vector is H stacked copies of vec(X)
    base = np.kron(enc.state.amplitudes.reshape(dims.n, 1, dims.d),
                   np.ones((1, dims.H, 1)) / math.sqrt(dims.H)).reshape(-1)
    prepared = enc.frobenius_norm * math.sqrt(dims.H)
    st = StateVector(layout, base, prepared)
    # per-head action on (i, k) controlled by h; reorder to (h, i, k) for the multiplexer
    amps = st.tensor().reshape(dims.n, dims.H, dims.d).transpose(1, 0, 2).reshape(dims.H, -1)
    amps = np.einsum("hab,hb->ha", np.stack(ops), amps)
    amps = amps.reshape(dims.H, dims.n, dims.d).transpose(1, 0, 2).reshape(-1)
    st, prob = project(layout, amps, prepared * heads[0].alpha * scales[0])
    st = apply_weight(st, params.W_O, _head_registers(dims), "W_O", transpose=True)
    return AttentionResult(st, prob, heads, prepared * heads[0].alpha * scales[0])


def residual(X, attention: AttentionResult, dims) -> tuple[StateVector, float]:
    """Weighted LCU of the attention branch and ``|psi_X> (x) uniform(h)``.

    The LCU weights equal the branches' pre-post-selection scales, so the
    post-selected vector is ``vec(Z_total) + vec(stack(X, ..., X))``.
    The returned probability covers the attention ancillas and the LCU
    ancilla jointly.
    """
    X = np.asarray(X, dtype=float)
    fro = float(np.linalg.norm(X))
    kappa_a = attention.prepared_scale
    kappa_b = fro * math.sqrt(dims.H)
    layout = head_layout(dims)
    # attention branch vector before renormalization: sqrt(p_A) |Z_hat>
    if attention.vanished:
        v_a = np.zeros(layout.dim, dtype=complex)
    else:
        v_a = attention.state.amplitudes * math.sqrt(attention.prob)
    stacked = np.tile(X, (dims.H, 1))
    v_b = stacked.T.reshape(-1) / kappa_b if kappa_b > 0 else np.zeros_like(v_a)
    total = kappa_a + kappa_b
    u = (kappa_a * v_a + kappa_b * v_b) / total
    prob = float(np.vdot(u, u).real)
    if prob < 1e-14:
        raise PostSelectionError("residual output vanishes")
    root = math.sqrt(prob)
    return StateVector(layout, u / root, total * root), prob


def residual_joint(X, params: ModelParams, *, mask: str = "none",
                   variant: str = "hadamard") -> tuple[StateVector, float]:
    """Residual via an explicit weighted-LCU circuit over all registers.

    The attention branch runs every head's block-encoding circuit controlled
    on Reg(h); the other branch leaves ``|psi_X>`` untouched.  Afterwards the
    LCU ancilla and every block-encoding ancilla are post-selected on ``|0>``.
    Intended for small instances (it simulates the full register set).
    """
    from .encoding import psi_x_circuit
    from .lcu import weighted_lcu
    from .statevector import add_registers, post_select_many

    dims = params.dims
    X = np.asarray(X, dtype=float)
    lam = common_lam_hat(X, params)
    heads = [encode_head(X, params.W_Q[h], params.W_K[h], t=dims.t, b=dims.b, mode="full",
                         mask=mask, variant=variant, lam_hat=lam) for h in range(dims.H)]
    be0 = heads[0].encoding
    ancillas = list(be0.ancillas)
    layout = RegisterLayout(list(head_layout(dims).registers) + ancillas)
    prep = psi_x_circuit(X)
    attn = Circuit()
    if dims.H > 1:
        hq = dims.qubits("H")
        prep.unitary(hadamard_n(hq).real, ["h"], label="H heads")
    for h, head in enumerate(heads):
        body = head.encoding.circuit + Circuit().unitary(
            as_scaled_orthogonal(params.W_V[h])[1].T, ["k"], label="W_V^T")
        attn.extend(body.controlled_on("h", h, 1 << hq) if dims.H > 1 else body)
    attn.unitary(as_scaled_orthogonal(params.W_O)[1].T, _head_registers(dims), label="W_O^T")
    st = prep.apply(zero_state(layout))
    kappa_b = float(np.linalg.norm(X)) * math.sqrt(dims.H)
    c_v = as_scaled_orthogonal(params.W_V[0])[0]
    c_o = as_scaled_orthogonal(params.W_O)[0]
    kappa_a = kappa_b * heads[0].alpha * c_v * c_o
    out, p_lcu = weighted_lcu(st, [(kappa_a, attn), (kappa_b, Circuit())], ancilla="lcu")
    out, p_anc = post_select_many(out, {name: 0 for name, _ in ancillas}, drop=True)
    return out, p_lcu * p_anc


# -- feed-forward ------------------------------------------------------------------

@dataclass
class FFNResult:
    state: StateVector
    prob: float
    words: np.ndarray
    amplitudes: np.ndarray
    gamma: float
    degenerate: bool = False
    diagnostics: dict = field(default_factory=dict)


def clean_loader(z_hat: np.ndarray, gamma: float) -> np.ndarray:
    """Loader on ``(R, flag)``: ``sqrt(gamma)|z>|0> + sqrt(1-gamma)|g>|1>``.

    ``|g>`` is a fixed garbage direction orthogonal to the clean branch by
    the flag qubit.
    """
    D = z_hat.size
    v = np.zeros(2 * D)
    v[0::2] = math.sqrt(gamma) * z_hat
    if gamma < 1:
        v[1] = math.sqrt(1.0 - gamma)
    return householder_loader(v)


def relu_word_table(t: int, b: int, gamma: float, relu: bool = True) -> np.ndarray:
    """ReLU oracle table over amplitude codewords."""
    y = fp.codeword_overlap(np.arange(1 << t), t) / math.sqrt(gamma)
    if relu:
        y = np.maximum(y, 0.0)
    return fp.quantize(y, b)


class FFNBranch:
    """Per-``(i, m)`` circuit on ``(test, amp, relu, rot)``.

    ``test`` is the ancilla, R = Reg(h, k) and the loader flag, packed
    as one register.
    """

    def __init__(self, z_hat, w_hat, t: int, b: int, gamma: float, relu: bool = True):
        D = z_hat.size
        load_a = clean_loader(z_hat, gamma)
        load_b = np.kron(householder_loader(w_hat), np.eye(2))
        self.U = hadamard_test_unitary(load_a, load_b)
        self.t, self.b, self.gamma = t, b, gamma
        qt = int(math.log2(2 * 2 * D))
        self.layout = RegisterLayout([("test", qt), ("amp", t), ("relu", b), ("rot", 1)])
        powers = grover_powers(grover_operator(self.U), 1 << t)
        est = (Circuit().unitary(self.U, ["test"], label="test")
               .unitary(hadamard_n(t).real, ["amp"], label="H amp")
               .multiplexed(powers, ["amp"], ["test"], label="G^c")
               .unitary(qft_matrix(t).conj().T, ["amp"], label="QFT^dagger"))
        self.estimation = est
        self.table = relu_word_table(t, b, gamma, relu)
        self.store = Circuit().xor(self.table, ["amp"], "relu", label="U_O")
        self.o_ffn = est + self.store + est.inverse()
        self.rotation = Circuit().multiplexed(rotation_blocks(b), ["relu"], ["rot"],
                                              label="conditional rotation")

    def good_probability(self) -> float:
        """Probability that the test ancilla reads ``|0>`` (``sin^2 theta``)."""
        return float(np.sum(np.abs(self.U[: self.U.shape[0] // 2, 0]) ** 2))

    def run(self) -> dict:
        st = zero_state(self.layout)
        after_store = self.store.apply(self.estimation.apply(st))
        words = measure_distribution(after_store, "relu")
        codewords = measure_distribution(after_store, "amp")
        st = self.estimation.inverse().apply(after_store)
        st = self.rotation.apply(st)
        st = self.o_ffn.apply(st)
        amp0 = complex(st.tensor()[0, 0, 0, 0])
        # fidelity of the work registers with |0> before the rotation
        clean = float(np.sum(np.abs(self.o_ffn.apply(zero_state(self.layout)).tensor()[0, 0, :, 0]) ** 2))
        return {"amplitude": amp0.real, "word_distribution": words, "dominant_word": int(self.table[int(np.argmax(codewords))]),
                "dominant_codeword": int(np.argmax(codewords)),
                "uncompute_fidelity": clean}


def shortcut_words(y: np.ndarray, t: int, b: int, gamma: float = 1.0,
                   relu: bool = True) -> np.ndarray:
    """Words of the nearest phase-estimation codeword for overlaps ``y``."""
    s = np.clip(math.sqrt(gamma) * np.asarray(y, dtype=float), -1.0, 1.0)
    c = fp.angle_codeword(fp.overlap_angle(s), t)
    v = fp.codeword_overlap(c, t) / math.sqrt(gamma)
    if relu:
        v = np.maximum(v, 0.0)
    return fp.quantize(v, b)


def ffn_oracle_shortcut(Z_prime, W1, t: int, b: int, *, gamma: float = 1.0,
                        relu: bool = True, emulate_estimation: bool = True) -> StateVector:
    """``sum_i sum_m c_i u_m |i>|m>|word(ReLU(z_i . w_m))>`` built as basis data.

    ``c_i`` and ``u_m`` are the normalized column norms of ``Z'`` and ``W1``.
    """
    Z_prime, W1 = np.asarray(Z_prime, dtype=float), np.asarray(W1, dtype=float)
    zn = np.linalg.norm(Z_prime, axis=0)
    wn = np.linalg.norm(W1, axis=0)
    y = (Z_prime / np.where(zn == 0, 1, zn)).T @ (W1 / np.where(wn == 0, 1, wn))
    if emulate_estimation:
        words = shortcut_words(y, t, b, gamma, relu)
    else:
        words = fp.quantize(np.maximum(y, 0) if relu else y, b)
    n, dff = y.shape
    weights = np.outer(zn, wn)
    if not weights.any():
        raise PostSelectionError("Z' or W1 vanishes")
    layout = RegisterLayout([("i", int(math.log2(n))), ("m", int(math.log2(dff))), ("relu", b)])
    amps = np.zeros((n, dff, 1 << b))
    ii, mm = np.meshgrid(np.arange(n), np.arange(dff), indexing="ij")
    amps[ii, mm, words] = weights
    return StateVector.from_vector(layout, amps.reshape(-1))


def ffn_pipeline(z_state: StateVector, params: ModelParams, *, mode: str = "full",
                 gamma: float = 1.0, relu: bool = True, t: int | None = None,
                 b: int | None = None) -> FFNResult:
    """``W2^T ReLU(W1^T z'_i)`` for every column, as a state on ``(i, m)``.

    ``z_state`` is the residual output on ``(i, h, k)``.  The loaders
    ``U_{Z'}`` are read off its amplitudes; ``gamma`` is the clean-branch
    weight of those loaders (1 means a garbage-free loader).
    """
    dims = params.dims
    t = dims.t if t is None else t
    b = dims.b if b is None else b
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    n, rH, dff = dims.n, dims.rH, dims.d_ff
    if dff != rH:
        raise ShapeError("the hidden register must have the width of Reg(h, k) (d_ff == rH)")
    M = z_state.amplitudes.real.reshape(n, rH)
    c = np.linalg.norm(M, axis=1)
    z_hat = M / np.where(c == 0, 1, c)[:, None]
    W1 = params.W1
    wn = np.linalg.norm(W1, axis=0)
    u = wn / np.linalg.norm(wn)
    w_hat = W1 / np.where(wn == 0, 1, wn)
    y = z_hat @ w_hat
    diagnostics: dict = {}
    if mode == "ideal":
        a = np.maximum(y, 0.0) if relu else y
        words = fp.quantize(np.clip(a, -1, 1), b)
    elif mode == "shortcut":
        words = shortcut_words(y, t, b, gamma, relu)
        a = fp.decode(words, b)
    else:
        a = np.zeros((n, dff))
        words = np.zeros((n, dff), dtype=np.int64)
        good = np.zeros((n, dff))
        uncompute = np.zeros((n, dff))
        for i in range(n):
            for m in range(dff):
                if c[i] == 0 or wn[m] == 0:
                    continue
                br = FFNBranch(z_hat[i], w_hat[:, m], t, b, gamma, relu)
                out = br.run()
                a[i, m] = out["amplitude"]
                words[i, m] = out["dominant_word"]
                good[i, m] = br.good_probability()
                uncompute[i, m] = out["uncompute_fidelity"]
        diagnostics = {"good_probability": good, "uncompute_fidelity": uncompute}
    amps = (c[:, None] * u[None, :]) * a
    prob = float(np.sum(amps ** 2))
    kappa = z_state.global_scale * float(np.linalg.norm(W1))
    layout = RegisterLayout([("i", dims.qubits("n")), ("m", dims.qubits("d_ff"))])
    if prob < 1e-14:
        zero = np.zeros(layout.dim)
        zero[0] = 1.0
        return FFNResult(StateVector(layout, zero, 1.0), 0.0, words, a, gamma, True, diagnostics)
    st = StateVector(layout, amps.reshape(-1) / math.sqrt(prob), kappa * math.sqrt(prob))
    st = apply_weight(st, params.W2, ["m"], "W2", transpose=True)
    return FFNResult(st, prob, words, a, gamma, False, diagnostics)


# -- readout --------------------------------------------------------------------------

def tomography_readout(state: StateVector, delta: float = 0.0, *, rows: int | None = None,
                       sampling: bool = False, rng=None, c: float = 36.0,
                       physical: bool = True) -> np.ndarray:
    """Matrix read out of a state over ``(i, rest)``.

    Exact mode (``sampling=False``) returns the amplitudes themselves.
    Sampling mode draws ``ceil(c / delta^2)`` computational-basis shots for
    the magnitudes and as many shots of an interference with the estimated
    magnitudes for the signs.  Columns are indexed by Reg(i); the whole matrix
    is scaled by ``global_scale`` when ``physical``.
    """
    if sampling and not delta > 0:
        raise ValueError("per-entry precision delta must be positive")
    if rows is None:
        rows = state.layout.dim // state.layout.register_dim(state.layout.names[0])
    amps = state.amplitudes.real.copy()
    if sampling:
        rng = np.random.default_rng(rng)
        shots = int(math.ceil(c / delta ** 2))
        probs = np.abs(state.amplitudes) ** 2
        probs = probs / probs.sum()
        counts = rng.multinomial(shots, probs)
        mag = np.sqrt(counts / shots)
        # interference (|0>|psi> + |1>|mag>)/sqrt 2, then H: P(0, k) = (a_k + mag_k)^2 / 4
        p0 = (amps + mag) ** 2 / 4.0
        p1 = (amps - mag) ** 2 / 4.0
        joint = np.concatenate([p0, p1])
        joint = joint / joint.sum()
        sign_counts = rng.multinomial(shots, joint)[: amps.size]
        sign = np.where(sign_counts > 0.4 * mag ** 2 * shots, 1.0, -1.0)
        amps = sign * mag
    out = amps.reshape(-1, rows).T
    return out * state.global_scale if physical else out


# -- whole block ------------------------------------------------------------------------

@dataclass
class BlockResult:
    F: np.ndarray
    records: list[StageRecord]
    degenerate: bool = False
    state: StateVector | None = None
    ffn: FFNResult | None = None

    def record(self, name: str) -> StageRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)


def run_block(X, params: ModelParams, mode: str = "shortcut", *, mask: str = "none",
              relu: bool = True, variant: str = "hadamard", gamma="clean",
              tomography_delta: float = 0.0, tomography_sampling: bool = False,
              rng=None, t: int | None = None, b: int | None = None) -> BlockResult:
    """Attention, residual, FFN and readout of one block.

    ``gamma`` is ``"clean"`` (garbage-free ``U_{Z'}`` loaders), ``"residual"``
    (clean weight taken from the residual post-selection probability) or a
    number in ``(0, 1]``.
    """
    dims = params.dims
    t = dims.t if t is None else t
    b = dims.b if b is None else b
    X = np.asarray(X, dtype=float)
    if X.shape != (dims.d, dims.n):
        raise ShapeError(f"X must be {dims.d}x{dims.n}, got {X.shape}")
    ref = ref_stages(X, params, mask=mask, relu=relu)
    records: list[StageRecord] = []
    if not np.any(X):
        records.append(StageRecord("encode", None, 0.0))
        return BlockResult(np.zeros((dims.rH, dims.n)), records, degenerate=True)

    t0 = time.perf_counter()
    enc = prepare_psi_x(X)
    records.append(StageRecord("encode", state_fidelity(enc.state, X), 1.0,
                               seconds=time.perf_counter() - t0))

    t0 = time.perf_counter()
    attn = multi_head(X, params, mode=mode, mask=mask, variant=variant, t=t, b=b)
    fid = None if attn.vanished else state_fidelity(attn.state, ref["Z_total"])
    records.append(StageRecord("multi_head", fid, attn.prob, seconds=time.perf_counter() - t0))

    t0 = time.perf_counter()
    z_state, p_res = residual(X, attn, dims)
    records.append(StageRecord("residual", state_fidelity(z_state, ref["Z_prime"]), p_res,
                               seconds=time.perf_counter() - t0))

    g = 1.0 if gamma == "clean" else (p_res if gamma == "residual" else float(gamma))
    t0 = time.perf_counter()
    ffn = ffn_pipeline(z_state, params, mode=mode, gamma=g, relu=relu, t=t, b=b)
    seconds = time.perf_counter() - t0
    if ffn.degenerate:
        records.append(StageRecord("ffn", None, 0.0, seconds=seconds))
        return BlockResult(np.zeros((dims.rH, dims.n)), records, True, None, ffn)
    records.append(StageRecord("ffn", state_fidelity(ffn.state, ref["F"]), ffn.prob, seconds=seconds))

    t0 = time.perf_counter()
    F = tomography_readout(ffn.state, tomography_delta, rows=dims.rH,
                           sampling=tomography_sampling, rng=rng)
    err = float(np.abs(F - ref["F"]).max())
    records.append(StageRecord("tomography", None, None, err, seconds=time.perf_counter() - t0))
    return BlockResult(F, records, False, ffn.state, ffn)
