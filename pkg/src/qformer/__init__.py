"""Statevector simulation of a quantum transformer block, checked against
a classical reference of the same (softmax-free) transformer."""

from .attention_oracle import AttentionOracle, masked_score_oracle, phase_estimate
from .block_encoding import BlockEncoding, block_encode_dense, lcu_combine, verify_block_encoding
from .encoding import positional_state, prepare_psi_x, prepare_psi_x_prime
from .estimators import QuantumGPT, QuantumTransformerBlock
from .exceptions import (
    CapacityError,
    LayoutError,
    NonUnitaryError,
    PostSelectionError,
    QformerError,
    ScaleError,
    ShapeError,
)
from .pretraining import Corpus, TrainConfig, generate, train
from .reference import PROFILES, ModelDims, ModelParams, profile, random_params
from .report import RunReport
from .statevector import Circuit, RegisterLayout, StateVector
from .transformer import ffn_pipeline, multi_head, residual, run_block, single_head
from .verification import verify_profile

__version__ = "0.1.0"

__all__ = [
    "AttentionOracle", "BlockEncoding", "CapacityError", "Circuit", "Corpus", "LayoutError",
    "ModelDims", "ModelParams", "NonUnitaryError", "PROFILES", "PostSelectionError",
    "QformerError", "QuantumGPT", "QuantumTransformerBlock", "RegisterLayout", "RunReport",
    "ScaleError", "ShapeError", "StateVector", "TrainConfig", "block_encode_dense",
    "ffn_pipeline", "generate", "lcu_combine", "masked_score_oracle", "multi_head",
    "phase_estimate", "positional_state", "prepare_psi_x", "prepare_psi_x_prime", "profile",
    "random_params", "residual", "run_block", "single_head", "train", "verify_block_encoding",
    "verify_profile",
]
