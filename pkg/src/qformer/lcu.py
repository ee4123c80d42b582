"""Weighted linear combination of state-preparation circuits."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import PostSelectionError
from .statevector import (
    Circuit,
    StateVector,
    add_registers,
    apply_unitary,
    householder_loader,
    post_select,
)


def prepare_weights(weights: Sequence[float]) -> np.ndarray:
    """Real orthogonal ancilla preparation with ``|<k|P|0>|^2 = w_k / sum w``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("need at least one weight")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    width = max(1, int(np.ceil(np.log2(w.size))))
    amp = np.zeros(1 << width)
    amp[: w.size] = np.sqrt(w / w.sum())
    return householder_loader(amp)


def weighted_lcu(state: StateVector, branches: Sequence[tuple[float, Circuit]],
                 ancilla: str = "lcu") -> tuple[StateVector, float]:
    """Prepare, select, unprepare and post-select the ancilla on ``|0>``.

    Branch ``k`` maps ``state`` to a vector ``v_k`` whose physical meaning is
    ``w_k * v_k``; the returned state is ``sum_k w_k v_k`` normalized, with
    ``global_scale`` equal to its norm.  Zero-weight branches are skipped.
    """
    live = [(w, c) for w, c in branches if w > 0]
    if not live:
        raise PostSelectionError("every LCU branch has zero weight")
    weights = [w for w, _ in live]
    prep = prepare_weights(weights)
    width = int(np.log2(prep.shape[0]))
    st = add_registers(state, (ancilla, width))
    st = apply_unitary(st, prep, [ancilla])
    for k, (_, circuit) in enumerate(live):
        st = circuit.controlled_on(ancilla, k, 1 << width).apply(st)
    st = apply_unitary(st, prep.T, [ancilla])
    st = st.with_scale(float(np.sum(weights)))
    return post_select(st, ancilla, 0, drop=True)
