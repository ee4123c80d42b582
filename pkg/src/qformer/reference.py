"""Exact classical model used as the oracle for every circuit stage.

Column convention: a sequence is a ``d x n`` matrix whose column ``i`` is
the embedding of token ``i``.  The attention matrix is
``A[u, v] = x_u^T W_Q W_K^T x_v`` and a head outputs ``Z = W_V^T X A``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ansatz import AnsatzSpec, ansatz_weight, qubits_for
from .exceptions import ShapeError

MASK_CONVENTIONS = ("none", "lower", "causal")


def _is_pow2(v: int) -> bool:
    return v >= 1 and (v & (v - 1)) == 0


@dataclass(frozen=True)
class ModelDims:
    n: int = 4
    d: int = 4
    p: int = 4
    r: int = 4
    H: int = 2
    d_ff: int = 8
    V: int = 8
    t: int = 5
    b: int = 6

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ShapeError(f"dimension {f.name} must be >= 1")
        for name in ("n", "d", "H", "d_ff", "V"):
            if not _is_pow2(getattr(self, name)):
                raise ShapeError(f"dimension {name}={getattr(self, name)} must be a power of two")
        if self.b < 2:
            raise ShapeError("value words need at least two bits")

    @property
    def rH(self) -> int:
        return self.r * self.H

    def qubits(self, name: str) -> int:
        return int(math.log2(getattr(self, name)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "ModelDims":
        return replace(self, **changes)

    @classmethod
    def parse(cls, text: str) -> "ModelDims":
        """Profile name (``D0``, ``D0-hi``, ``D1``) optionally followed by
        ``,key=value`` overrides, or overrides alone."""
        parts = [p.strip() for p in str(text).split(",") if p.strip()]
        base = cls()
        if parts and "=" not in parts[0]:
            base = profile(parts.pop(0))
        changes = {}
        for part in parts:
            key, _, value = part.partition("=")
            key = key.strip()
            if key not in {f.name for f in fields(cls)}:
                raise ShapeError(f"unknown dimension {key!r}")
            try:
                changes[key] = int(value)
            except ValueError:
                raise ShapeError(f"dimension {key} needs an integer, got {value!r}") from None
        return replace(base, **changes)


PROFILES = {
    "D0": ModelDims(),
    "D0-hi": ModelDims(t=6, b=8),
    "D1": ModelDims(H=1, d_ff=4),
}


def profile(name: str) -> ModelDims:
    try:
        return PROFILES[name]
    except KeyError:
        raise ShapeError(f"unknown profile {name!r}; known: {sorted(PROFILES)}") from None


WEIGHT_SHAPES = {
    "W_Q": lambda m: (m.H, m.d, m.p),
    "W_K": lambda m: (m.H, m.d, m.p),
    "W_V": lambda m: (m.H, m.d, m.r),
    "W_O": lambda m: (m.rH, m.rH),
    "W1": lambda m: (m.rH, m.d_ff),
    "W2": lambda m: (m.d_ff, m.rH),
    "W_E": lambda m: (m.V, m.rH),
}


@dataclass
class ModelParams:
    """Weight matrices; per-head matrices are stacked along axis 0.

    ``ansatz`` optionally maps a weight key (``"W_Q/0"`` for head 0,
    ``"W_O"`` ...) to the :class:`AnsatzSpec` that realizes it.
    """

    dims: ModelDims
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    W1: np.ndarray
    W2: np.ndarray
    W_E: np.ndarray
    ansatz: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, shape_of in WEIGHT_SHAPES.items():
            value = np.asarray(getattr(self, name), dtype=float)
            expected = shape_of(self.dims)
            if value.shape != expected:
                raise ShapeError(f"{name} has shape {value.shape}, expected {expected}")
            if not np.all(np.isfinite(value)):
                raise ShapeError(f"{name} contains non-finite entries")
            setattr(self, name, value)

    def matrices(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in WEIGHT_SHAPES}

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, **{k: v.copy() for k, v in self.matrices().items()},
                           ansatz={k: s.with_theta(s.theta.copy()) for k, s in self.ansatz.items()})

    def replace(self, **weights) -> "ModelParams":
        out = self.copy()
        for name, value in weights.items():
            if name not in WEIGHT_SHAPES:
                raise ShapeError(f"unknown weight {name!r}")
            setattr(out, name, np.asarray(value, dtype=float))
            out.ansatz = {k: s for k, s in out.ansatz.items() if k.split("/")[0] != name}
        out.__post_init__()
        return out

    def is_orthogonal(self, name: str, atol: float = 1e-9) -> bool:
        w = getattr(self, name)
        mats = w if w.ndim == 3 else w[None]
        return all(m.shape[0] == m.shape[1] and
                   np.allclose(m.T @ m, np.eye(m.shape[1]), atol=atol) for m in mats)

    # -- ansatz backing ------------------------------------------------------

    def theta_vector(self) -> np.ndarray:
        if not self.ansatz:
            return np.zeros(0)
        return np.concatenate([self.ansatz[k].theta.ravel() for k in sorted(self.ansatz)])

    def with_theta_vector(self, theta) -> "ModelParams":
        """New params whose ansatz-backed weights are rebuilt from ``theta``."""
        theta = np.asarray(theta, dtype=float)
        needed = sum(spec.parameter_count for spec in self.ansatz.values())
        if theta.size != needed:
            raise ShapeError(f"theta has {theta.size} entries, ansatz needs {needed}")
        out = self.copy()
        offset = 0
        for key in sorted(self.ansatz):
            spec = self.ansatz[key]
            chunk = theta[offset:offset + spec.parameter_count]
            offset += spec.parameter_count
            if np.array_equal(chunk, spec.theta.ravel()):
                continue
            out.ansatz[key] = spec.with_theta(chunk)
            out._rebuild(key)
        return out

    def _rebuild(self, key: str) -> None:
        name, _, head = key.partition("/")
        target = getattr(self, name)
        if head:
            h = int(head)
            target[h] = ansatz_weight(self.ansatz[key], *target.shape[1:])
        else:
            setattr(self, name, ansatz_weight(self.ansatz[key], *target.shape))

    # -- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        out = {"dims": self.dims.to_dict(), "weights": {}, "ansatz": {}}
        for name, value in self.matrices().items():
            out["weights"][name] = {"shape": list(value.shape), "data": value.ravel().tolist()}
        for key, spec in sorted(self.ansatz.items()):
            out["ansatz"][key] = {"labels": list(spec.labels),
                                  "theta": spec.theta.tolist()}
        return out

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ModelParams":
        from .ansatz import pauli_string

        try:
            dims = ModelDims(**payload["dims"])
            weights = {}
            for name in WEIGHT_SHAPES:
                entry = payload["weights"][name]
                weights[name] = np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ShapeError(f"malformed weight payload: {exc}") from exc
        ansatz = {}
        for key, entry in payload.get("ansatz", {}).items():
            labels = tuple(entry["labels"])
            ansatz[key] = AnsatzSpec([pauli_string(l) for l in labels], entry["theta"], labels)
        return cls(dims, ansatz=ansatz, **weights)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "ModelParams":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def random_params(dims: ModelDims, seed=42, layers: int = 2) -> ModelParams:
    """Seeded parameters where every weight is an orthogonal-ansatz restriction."""
    rng = np.random.default_rng(seed)
    ansatz: dict[str, AnsatzSpec] = {}
    weights: dict[str, np.ndarray] = {}
    for name, shape_of in WEIGHT_SHAPES.items():
        shape = shape_of(dims)
        if len(shape) == 3:
            stack = []
            for h in range(shape[0]):
                spec = AnsatzSpec.real(qubits_for(*shape[1:]), layers, rng=rng)
                ansatz[f"{name}/{h}"] = spec
                stack.append(ansatz_weight(spec, *shape[1:]))
            weights[name] = np.stack(stack)
        else:
            spec = AnsatzSpec.real(qubits_for(*shape), layers, rng=rng)
            ansatz[name] = spec
            weights[name] = ansatz_weight(spec, *shape)
    return ModelParams(dims, ansatz=ansatz, **weights)


def identity_params(dims: ModelDims) -> ModelParams:
    """Identity-like weights (top-left identity blocks)."""
    weights = {}
    for name, shape_of in WEIGHT_SHAPES.items():
        shape = shape_of(dims)
        if len(shape) == 3:
            weights[name] = np.stack([np.eye(*shape[1:]) for _ in range(shape[0])])
        else:
            weights[name] = np.eye(*shape)
    return ModelParams(dims, **weights)


def random_input(dims: ModelDims, seed=None, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((dims.d, dims.n))


# -- reference operations ------------------------------------------------------

def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def ref_attention_matrix(X, W_Q, W_K) -> np.ndarray:
    X, W_Q, W_K = (np.asarray(a, dtype=float) for a in (X, W_Q, W_K))
    _check(X.ndim == 2 and W_Q.shape[0] == X.shape[0] and W_K.shape == W_Q.shape,
           f"attention shapes X{X.shape} W_Q{W_Q.shape} W_K{W_K.shape}")
    return X.T @ W_Q @ W_K.T @ X


def ref_mask(A, convention: str = "lower") -> np.ndarray:
    """Zero masked attention entries.

    ``"lower"`` keeps ``A[i, j]`` for ``j <= i``.  ``"causal"`` keeps
    ``A[v, u]`` for ``v <= u`` so that output column ``u`` mixes only
    positions up to ``u`` in ``Z = W_V^T X A``.  ``"none"`` is a no-op.
    """
    A = np.asarray(A, dtype=float)
    _check(A.ndim == 2 and A.shape[0] == A.shape[1], f"mask needs a square matrix, got {A.shape}")
    if convention == "lower":
        return np.tril(A)
    if convention == "causal":
        return np.triu(A)
    if convention == "none":
        return A.copy()
    raise ValueError(f"unknown mask convention {convention!r}")


def ref_single_head(X, W_Q, W_K, W_V, mask: str = "none") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    W_V = np.asarray(W_V, dtype=float)
    _check(W_V.shape[0] == X.shape[0], f"W_V shape {W_V.shape} vs X {X.shape}")
    A = ref_mask(ref_attention_matrix(X, W_Q, W_K), mask)
    return W_V.T @ X @ A


def ref_multihead(X, params: ModelParams, mask: str = "none") -> np.ndarray:
    heads = [ref_single_head(X, params.W_Q[h], params.W_K[h], params.W_V[h], mask)
             for h in range(params.dims.H)]
    return params.W_O.T @ np.vstack(heads)


def ref_residual(Z_total, X) -> np.ndarray:
    Z_total, X = np.asarray(Z_total, dtype=float), np.asarray(X, dtype=float)
    _check(Z_total.shape[1] == X.shape[1] and Z_total.shape[0] % X.shape[0] == 0,
           f"residual shapes Z{Z_total.shape} X{X.shape}")
    return Z_total + np.tile(X, (Z_total.shape[0] // X.shape[0], 1))


def ref_ffn(Z_prime, W1, W2, relu: bool = True) -> np.ndarray:
    Z_prime, W1, W2 = (np.asarray(a, dtype=float) for a in (Z_prime, W1, W2))
    _check(W1.shape[0] == Z_prime.shape[0] and W2.shape[0] == W1.shape[1],
           f"ffn shapes Z'{Z_prime.shape} W1{W1.shape} W2{W2.shape}")
    hidden = W1.T @ Z_prime
    if relu:
        hidden = np.maximum(hidden, 0.0)
    return W2.T @ hidden


def ref_logits(F, W_E) -> np.ndarray:
    F, W_E = np.asarray(F, dtype=float), np.asarray(W_E, dtype=float)
    _check(W_E.shape[1] == F.shape[0], f"W_E shape {W_E.shape} vs F {F.shape}")
    return W_E @ F


def ref_positional(i: int, d: int) -> np.ndarray:
    """Sinusoidal position vector: entries ``2j, 2j+1`` are
    ``sin, cos`` of ``i / 10000^(2j/d)``."""
    if d % 2:
        raise ShapeError("positional encoding needs an even dimension")
    j = np.arange(d // 2)
    angle = i / np.power(10000.0, 2.0 * j / d)
    out = np.empty(d)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out


def ref_positional_matrix(n: int, d: int) -> np.ndarray:
    return np.stack([ref_positional(i, d) for i in range(n)], axis=1)


def ref_loss(F_prime, column: int, target: int) -> float:
    """``1 - <f_hat, e_target>^2`` for logits column ``column``."""
    F_prime = np.asarray(F_prime, dtype=float)
    if not 0 <= column < F_prime.shape[1]:
        raise IndexError(f"column {column} out of range")
    if not 0 <= target < F_prime.shape[0]:
        raise IndexError(f"target {target} out of range")
    f = F_prime[:, column]
    norm = np.linalg.norm(f)
    if norm == 0:
        raise ZeroDivisionError("logits column has zero norm")
    return float(1.0 - (f[target] / norm) ** 2)


def ref_block(X, params: ModelParams, mask: str = "none", relu: bool = True) -> np.ndarray:
    """Attention, residual and feed-forward of one block: returns ``F``."""
    Zt = ref_multihead(X, params, mask)
    return ref_ffn(ref_residual(Zt, X), params.W1, params.W2, relu)


def ref_stages(X, params: ModelParams, mask: str = "none", relu: bool = True) -> dict:
    heads = [ref_single_head(X, params.W_Q[h], params.W_K[h], params.W_V[h], mask)
             for h in range(params.dims.H)]
    Zt = params.W_O.T @ np.vstack(heads)
    Zp = ref_residual(Zt, X)
    F = ref_ffn(Zp, params.W1, params.W2, relu)
    return {"heads": heads, "Z_total": Zt, "Z_prime": Zp, "F": F,
            "F_prime": ref_logits(F, params.W_E)}
