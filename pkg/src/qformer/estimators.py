"""scikit-learn style wrappers: a transformer block and a tiny character GPT.

Token matrices follow the scikit-learn convention of one row per sample
(token), so ``X`` has shape ``(n_tokens, d)``; the circuits themselves work
on the column layout ``X.T``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ShapeError
from .pretraining import (
    Corpus,
    TrainConfig,
    batched_logits,
    generate,
    next_token_distribution,
    overlap_losses,
    sequence_inputs,
    train,
    windows,
)
from .reference import ModelDims, ModelParams, random_params
from .transformer import run_block


def _dims(value) -> ModelDims:
    if isinstance(value, ModelDims):
        return value
    return ModelDims.parse(value)


class QuantumTransformerBlock(TransformerMixin, BaseEstimator):
    """One simulated transformer block.

    ``fit`` only validates shapes and draws seeded ansatz weights (or adopts
    ``params``); there is nothing to learn from ``X`` here.  ``transform``
    runs the circuits and returns the tomography readout, one row per token.
    """

    def __init__(self, dims="D0", mode="shortcut", mask="none", relu=True,
                 variant="hadamard", gamma="clean", tomography_delta=0.0,
                 random_state=42, params=None):
        self.dims = dims
        self.mode = mode
        self.mask = mask
        self.relu = relu
        self.variant = variant
        self.gamma = gamma
        self.tomography_delta = tomography_delta
        self.random_state = random_state
        self.params = params

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        dims = self.params.dims if self.params is not None else _dims(self.dims)
        if X.shape != (dims.n, dims.d):
            raise ShapeError(f"expected {dims.n} tokens of width {dims.d}, got {X.shape}")
        self.dims_ = dims
        self.params_ = self.params if self.params is not None else random_params(dims, self.random_state)
        self.n_features_in_ = dims.d
        self.records_ = []
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape != (self.dims_.n, self.dims_.d):
            raise ShapeError(f"expected {self.dims_.n} tokens of width {self.dims_.d}, got {X.shape}")
        rng = np.random.default_rng(self.random_state)
        res = run_block(X.T, self.params_, self.mode, mask=self.mask, relu=self.relu,
                        variant=self.variant, gamma=self.gamma,
                        tomography_delta=self.tomography_delta,
                        tomography_sampling=self.tomography_delta > 0, rng=rng)
        self.records_ = res.records
        self.degenerate_ = res.degenerate
        return res.F.T

    def stage_fidelities(self) -> dict:
        check_is_fitted(self, "records_")
        return {r.name: r.fidelity for r in self.records_}


class QuantumGPT(BaseEstimator):
    """Character-level model: one block plus vocabulary projection.

    ``fit`` takes a corpus string; ``predict`` maps contexts to the greedy
    next character and ``score`` returns one minus the mean overlap loss.
    """

    def __init__(self, dims="D0", learning_rate=5e-4, iterations=100,
                 optimizer="finite-diff", mode="shortcut", positions="all",
                 random_state=42):
        self.dims = dims
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.optimizer = optimizer
        self.mode = mode
        self.positions = positions
        self.random_state = random_state

    def _text(self, X) -> str:
        if isinstance(X, str):
            return X
        parts = list(X)
        if not all(isinstance(p, str) for p in parts):
            raise TypeError("QuantumGPT expects a string or a sequence of strings")
        return "".join(parts)

    def fit(self, X, y=None, params: ModelParams | None = None):
        config = TrainConfig(learning_rate=self.learning_rate, iterations=self.iterations,
                             seed=self.random_state, optimizer=self.optimizer,
                             mode=self.mode, positions=self.positions)
        dims = params.dims if params is not None else _dims(self.dims)
        result = train(self._text(X), config, params=params, dims=dims)
        self.params_ = result.params
        self.corpus_ = result.corpus
        self.embedding_ = result.embedding
        self.loss_trace_ = np.asarray(result.loss_trace)
        self.result_ = result
        return self

    def _forward_mode(self) -> str:
        return "ideal" if self.mode in ("ideal", "shortcut") else self.mode

    def predict_proba(self, contexts) -> np.ndarray:
        check_is_fitted(self, "params_")
        if isinstance(contexts, str):
            contexts = [contexts]
        return np.stack([next_token_distribution(self.corpus_.encode(c), self.params_,
                                                 self.embedding_, self._forward_mode())
                         for c in contexts])

    def predict(self, contexts) -> np.ndarray:
        p = self.predict_proba(contexts)[:, :len(self.corpus_.vocab)]
        p[:, 0] = -1.0  # never the pad token
        return np.array([self.corpus_.vocab[i] for i in p.argmax(axis=1)])

    def generate(self, prompt: str, steps: int) -> str:
        check_is_fitted(self, "params_")
        return generate(prompt, steps, self.params_, self.corpus_, self.embedding_,
                        self._forward_mode())

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "params_")
        ids = self.corpus_.encode(self._text(X))
        inputs, targets, weight = windows(ids, self.params_.dims.n, self.positions)
        logits = batched_logits(sequence_inputs(inputs, self.embedding_), self.params_)
        losses = overlap_losses(logits, targets)
        return float(1.0 - np.sum(losses * weight) / np.sum(weight))


__all__ = ["QuantumGPT", "QuantumTransformerBlock"]
