"""Character-level generative pre-training of a single-block model.

Inputs are ``X = E[:, tokens] + P`` with a fixed seeded embedding ``E``
(unit columns) and the sinusoidal position matrix ``P``.  The block uses the
causal attention mask, logits are ``F' = W_E F`` and column ``t`` predicts
token ``t + 1``.  The per-position loss is ``1 - (f'_t[target] / ||f'_t||)^2``.

Training differentiates the loss with respect to the ansatz angles behind
every weight matrix.  The default forward pass evaluates the block with exact
oracles on all windows at once; it agrees with the state-level pipeline in
``ideal`` mode (checked by the test-suite).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import PostSelectionError, ShapeError
from .reference import ModelDims, ModelParams, random_params, ref_positional_matrix
from .statevector import RegisterLayout, StateVector, apply_matrix
from .transformer import run_block

PAD = "\x00"
MASK = "causal"


@dataclass
class Corpus:
    text: str
    vocab: tuple[str, ...]
    token_ids: np.ndarray

    @classmethod
    def from_text(cls, text: str, V: int) -> "Corpus":
        chars = tuple(dict.fromkeys(text))
        if PAD in chars:
            raise ValueError("corpus contains the reserved pad character")
        vocab = (PAD,) + chars
        if len(vocab) > V:
            raise ShapeError(f"{len(chars)} distinct characters need V >= {len(vocab)}, have {V}")
        index = {ch: k for k, ch in enumerate(vocab)}
        return cls(text, vocab, np.array([index[ch] for ch in text], dtype=np.int64))

    def encode(self, text: str) -> np.ndarray:
        index = {ch: k for k, ch in enumerate(self.vocab)}
        try:
            return np.array([index[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unknown character {exc.args[0]!r}") from None

    def decode(self, ids) -> str:
        return "".join(self.vocab[int(i)] for i in ids)


def embedding_matrix(dims: ModelDims, seed) -> np.ndarray:
    """Fixed ``d x V`` embedding with unit columns."""
    rng = np.random.default_rng(seed)
    E = rng.standard_normal((dims.d, dims.V))
    return E / np.linalg.norm(E, axis=0)


def windows(token_ids: np.ndarray, n: int, positions: str = "all"
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sliding windows: inputs ``(B, n)``, targets ``(B, n)`` and a weight mask.

    ``positions="last"`` keeps only the final prediction of each window.
    """
    ids = np.asarray(token_ids, dtype=np.int64)
    count = ids.size - n
    if count < 1:
        raise ValueError(f"need at least {n + 1} tokens, got {ids.size}")
    idx = np.arange(count)[:, None] + np.arange(n)[None, :]
    inputs, targets = ids[idx], ids[idx + 1]
    weight = np.ones(inputs.shape)
    if positions == "last":
        weight[:, :-1] = 0.0
    elif positions != "all":
        raise ValueError("positions must be 'all' or 'last'")
    return inputs, targets, weight


def sequence_inputs(inputs: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``(B, d, n)`` block inputs: embeddings plus positions."""
    d = E.shape[0]
    n = inputs.shape[1]
    return E[:, inputs].transpose(1, 0, 2) + ref_positional_matrix(n, d)[None]


def batched_logits(Xb: np.ndarray, params: ModelParams, mask: str = MASK,
                   relu: bool = True) -> np.ndarray:
    """Block plus vocabulary projection for a ``(B, d, n)`` batch: ``(B, V, n)``."""
    n = Xb.shape[2]
    keep = np.triu(np.ones((n, n))) if mask == "causal" else (
        np.tril(np.ones((n, n))) if mask == "lower" else np.ones((n, n)))
    heads = []
    for h in range(params.dims.H):
        Q = np.einsum("dp,bdn->bpn", params.W_Q[h], Xb)
        K = np.einsum("dp,bdn->bpn", params.W_K[h], Xb)
        A = np.einsum("bpu,bpv->buv", Q, K) * keep
        V = np.einsum("dr,bdn->brn", params.W_V[h], Xb)
        heads.append(np.einsum("brv,bvu->bru", V, A))
    Zt = np.einsum("ij,bin->bjn", params.W_O, np.concatenate(heads, axis=1))
    Zp = Zt + np.tile(Xb, (1, params.dims.H, 1))
    hidden = np.einsum("im,bin->bmn", params.W1, Zp)
    if relu:
        hidden = np.maximum(hidden, 0.0)
    F = np.einsum("mj,bmn->bjn", params.W2, hidden)
    return np.einsum("vj,bjn->bvn", params.W_E, F)


def overlap_losses(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``1 - (f'[target] / ||f'||)^2`` per (window, position); 1 for zero logits."""
    sq = np.sum(logits ** 2, axis=1)
    hit = np.take_along_axis(logits, targets[:, None, :], axis=1)[:, 0, :] ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(sq > 0, hit / sq, 0.0)
    return 1.0 - frac


# -- state-level readout -------------------------------------------------------------

def apply_vocab_projection(state: StateVector, W_E) -> StateVector:
    """``|i>|f_i> -> |i>|W_E f_i>`` on the register after Reg(i).

    ``W_E`` must be a multiple of an isometry (``V >= rH``); extra qubits are
    appended in ``|0>`` when ``V > rH``.
    """
    W_E = np.asarray(W_E, dtype=float)
    V, D = W_E.shape
    names = state.layout.names
    if len(names) != 2:
        raise ShapeError("vocabulary projection expects a state over (i, features)")
    index, feat = names
    if state.layout.register_dim(feat) != D:
        raise ShapeError(f"feature register holds {state.layout.register_dim(feat)}, W_E needs {D}")
    if V < D or V & (V - 1):
        raise ShapeError(f"vocabulary width {V} cannot hold the {D}-dimensional output")
    c = float(np.linalg.norm(W_E) / math.sqrt(D))
    iso = W_E / c
    if not np.allclose(iso.T @ iso, np.eye(D), atol=1e-9):
        raise ShapeError("W_E must be a multiple of an isometry")
    amps = state.tensor().reshape(state.layout.register_dim(index), D)
    padded = np.zeros((amps.shape[0], V), dtype=complex)
    padded[:, :: V // D] = amps  # feature f sits at (f, extra=0)
    U = _complete_isometry(iso, V // D)
    layout = RegisterLayout([(index, state.layout.width(index)), ("v", int(math.log2(V)))])
    lifted = StateVector(layout, padded.reshape(-1), state.global_scale)
    out = apply_matrix(lifted, U.astype(complex), ["v"])
    return StateVector(layout, out, state.global_scale * c)


def _complete_isometry(iso: np.ndarray, stride: int) -> np.ndarray:
    """Orthogonal ``U`` with ``U[:, f * stride] = iso[:, f]``."""
    V, D = iso.shape
    if stride == 1:
        return iso.copy()
    q, _ = np.linalg.qr(np.concatenate([iso, np.eye(V)], axis=1))
    loaded = np.arange(D) * stride
    rest = np.setdiff1d(np.arange(V), loaded)
    U = np.empty((V, V))
    U[:, loaded] = iso
    U[:, rest] = q[:, D:V]
    return U


def overlap_loss(state: StateVector, t_index: int, target_id: int, *, sampling: bool = False,
                 shots: int = 100_000, rng=None) -> float:
    """``1 - |<psi|t, b>|^2 / P(i = t)`` on a state over ``(i, v)``.

    Dividing by the Reg(i) marginal makes the result the normalized overlap
    of column ``t`` with the one-hot target.  Sampling mode estimates both
    quantities from ``shots`` computational-basis measurements (the target is
    a basis state, so this is the swap-test statistic without its ancilla).
    """
    n = state.layout.register_dim(state.layout.names[0])
    if not 0 <= t_index < n:
        raise IndexError(f"position {t_index} outside the {n}-token window")
    joint = (np.abs(state.amplitudes) ** 2).reshape(n, -1)
    if not 0 <= target_id < joint.shape[1]:
        raise IndexError(f"target {target_id} outside the vocabulary")
    if sampling:
        rng = np.random.default_rng(rng)
        counts = rng.multinomial(int(shots), joint.reshape(-1) / joint.sum()).reshape(joint.shape)
        joint = counts.astype(float)
    row = joint[t_index].sum()
    if row == 0:
        raise PostSelectionError(f"position {t_index} has zero weight")
    return float(min(1.0, max(0.0, 1.0 - joint[t_index, target_id] / row)))


# -- training ------------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    iterations: int = 100
    batch_span: int | None = None
    seed: int = 42
    optimizer: str = "finite-diff"
    mode: str = "shortcut"
    fd_step: float = 1e-4
    spsa_step: float = 0.05
    positions: str = "all"
    embedding_seed: int | None = None

    def __post_init__(self):
        if self.optimizer not in ("finite-diff", "spsa"):
            raise ValueError("optimizer must be 'finite-diff' or 'spsa'")
        if self.mode not in ("shortcut", "ideal", "full"):
            raise ValueError("mode must be 'shortcut', 'ideal' or 'full'")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")


class Objective:
    """Cumulative overlap loss of a corpus as a function of ansatz angles."""

    def __init__(self, corpus: Corpus, params: ModelParams, E: np.ndarray, *,
                 positions: str = "all", mode: str = "shortcut"):
        dims = params.dims
        inputs, targets, weight = windows(corpus.token_ids, dims.n, positions)
        self.inputs, self.targets, self.weight = inputs, targets, weight
        self.Xb = sequence_inputs(inputs, E)
        self.mode = mode
        self.keys = sorted(params.ansatz)
        self.sizes = [params.ansatz[k].parameter_count for k in self.keys]

    def __call__(self, params: ModelParams) -> float:
        if self.mode == "full":
            return self._full(params)
        losses = overlap_losses(batched_logits(self.Xb, params), self.targets)
        return float(np.sum(losses * self.weight))

    def _full(self, params: ModelParams) -> float:
        total = 0.0
        for X, tgt, w in zip(self.Xb, self.targets, self.weight):
            res = run_block(X, params, "full", mask=MASK)
            if res.degenerate:
                total += float(np.sum(w))
                continue
            logits = params.W_E @ res.F
            total += float(np.sum(overlap_losses(logits[None], tgt[None])[0] * w))
        return total


def _perturbed(params: ModelParams, key: str, theta: np.ndarray) -> ModelParams:
    """Shallow variant of ``params`` with one ansatz-backed weight rebuilt."""
    from .ansatz import ansatz_weight

    out = ModelParams.__new__(ModelParams)
    out.__dict__.update(params.__dict__)
    spec = params.ansatz[key].with_theta(theta)
    name, _, head = key.partition("/")
    target = getattr(params, name)
    if head:
        stack = target.copy()
        stack[int(head)] = ansatz_weight(spec, *target.shape[1:])
        setattr(out, name, stack)
    else:
        setattr(out, name, ansatz_weight(spec, *target.shape))
    out.ansatz = dict(params.ansatz)
    out.ansatz[key] = spec
    return out


def finite_difference_gradient(objective: Objective, params: ModelParams, h: float = 1e-4
                               ) -> np.ndarray:
    grads = []
    for key in objective.keys:
        theta = params.ansatz[key].theta.ravel()
        g = np.empty(theta.size)
        for j in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            g[j] = (objective(_perturbed(params, key, tp)) -
                    objective(_perturbed(params, key, tm))) / (2 * h)
        grads.append(g)
    return np.concatenate(grads) if grads else np.zeros(0)


def spsa_gradient(objective: Objective, params: ModelParams, rng, c: float = 0.05,
                  samples: int = 1) -> np.ndarray:
    theta = params.theta_vector()
    g = np.zeros_like(theta)
    for _ in range(samples):
        delta = rng.choice([-1.0, 1.0], size=theta.size)
        lp = objective(params.with_theta_vector(theta + c * delta))
        lm = objective(params.with_theta_vector(theta - c * delta))
        g += (lp - lm) / (2 * c) * delta
    return g / samples


@dataclass
class TrainResult:
    params: ModelParams
    loss_trace: list[float]
    corpus: Corpus
    embedding: np.ndarray
    config: TrainConfig


def train(corpus: Corpus | str, config: TrainConfig, params: ModelParams | None = None,
          dims: ModelDims | None = None) -> TrainResult:
    """Gradient descent on ansatz angles; ``loss_trace[k]`` is the cumulative
    loss before update ``k`` (the last entry is after the final update)."""
    dims = dims or (params.dims if params is not None else ModelDims())
    if isinstance(corpus, str):
        corpus = Corpus.from_text(corpus, dims.V)
    span = config.batch_span or dims.n
    if span > dims.n:
        raise ValueError(f"context length {span} exceeds n={dims.n}")
    if corpus.token_ids.size < dims.n + 1:
        raise ValueError(f"corpus needs at least {dims.n + 1} characters")
    if params is None:
        params = random_params(dims, config.seed)
    emb_seed = config.seed if config.embedding_seed is None else config.embedding_seed
    E = embedding_matrix(dims, emb_seed)
    objective = Objective(corpus, params, E, positions=config.positions, mode=config.mode)
    rng = np.random.default_rng(config.seed)
    trace = [objective(params)]
    for _ in range(config.iterations):
        if config.optimizer == "finite-diff":
            g = finite_difference_gradient(objective, params, config.fd_step)
        else:
            g = spsa_gradient(objective, params, rng, config.spsa_step)
        if config.learning_rate != 0.0:
            params = params.with_theta_vector(params.theta_vector() - config.learning_rate * g)
        trace.append(objective(params))
    return TrainResult(params, trace, corpus, E, config)


# -- generation ------------------------------------------------------------------------

def context_window(ids, n: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)[-n:]
    return np.concatenate([np.zeros(n - ids.size, dtype=np.int64), ids])


def next_token_distribution(ids, params: ModelParams, E: np.ndarray, mode: str = "ideal"
                            ) -> np.ndarray:
    """Measured vocabulary distribution at the last position."""
    n = params.dims.n
    window = context_window(ids, n)
    Xb = sequence_inputs(window[None], E)
    if mode == "ideal":
        f = batched_logits(Xb, params)[0, :, -1]
    else:
        res = run_block(Xb[0], params, mode, mask=MASK)
        if res.degenerate:
            return np.full(params.dims.V, 1.0 / params.dims.V)
        f = params.W_E @ res.F[:, -1]
    p = f ** 2
    total = p.sum()
    return p / total if total > 0 else np.full(p.size, 1.0 / p.size)


def generate(prompt: str, steps: int, params: ModelParams, corpus: Corpus, E: np.ndarray,
             mode: str = "ideal") -> str:
    """Greedy decoding over the corpus characters; the pad token and unused
    vocabulary slots are never emitted."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    ids = list(corpus.encode(prompt))
    for _ in range(steps):
        p = next_token_distribution(ids, params, E, mode)[:len(corpus.vocab)]
        p[0] = -1.0
        ids.append(int(np.argmax(p)))
    return corpus.decode(ids)


# -- persistence -------------------------------------------------------------------------

def save_model(path, result: TrainResult) -> None:
    payload = result.params.to_json_dict()
    payload["vocab"] = list(result.corpus.vocab)
    payload["embedding"] = {"shape": list(result.embedding.shape),
                            "data": result.embedding.ravel().tolist()}
    payload["config"] = asdict(result.config)
    payload["loss_trace"] = list(result.loss_trace)
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_model(path) -> tuple[ModelParams, Corpus, np.ndarray]:
    payload = json.loads(Path(path).read_text())
    params = ModelParams.from_json_dict(payload)
    try:
        vocab = tuple(payload["vocab"])
        emb = payload["embedding"]
        E = np.asarray(emb["data"], dtype=float).reshape(emb["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ShapeError(f"model file lacks vocabulary or embedding: {exc}") from exc
    return params, Corpus("", vocab, np.zeros(0, dtype=np.int64)), E


__all__ = [
    "Corpus", "Objective", "TrainConfig", "TrainResult", "apply_vocab_projection",
    "batched_logits", "embedding_matrix", "finite_difference_gradient", "generate",
    "load_model", "next_token_distribution", "overlap_loss", "overlap_losses", "save_model",
    "sequence_inputs", "spsa_gradient", "train", "windows",
]
