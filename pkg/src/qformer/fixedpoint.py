"""Fixed-point words held in value registers.

Value words are ``b``-bit two's complement fractions: the stored bit
pattern ``w`` decodes to ``k / 2^(b-1)`` with ``k`` the signed reading of
``w``.  The representable range is ``[-1, 1 - 2^(1-b)]``; larger inputs
saturate.  Angle codewords are unsigned ``t``-bit integers standing for the
phase ``2 pi c / 2^t``.
"""

from __future__ import annotations

import numpy as np


def value_step(b: int) -> float:
    return 2.0 ** (1 - b)


def quantize(value, b: int):
    """Nearest ``b``-bit word (as an unsigned bit pattern) for each value."""
    half = 1 << (b - 1)
    k = np.rint(np.asarray(value, dtype=float) * half)
    k = np.clip(k, -half, half - 1).astype(np.int64)
    return np.where(k < 0, k + (1 << b), k)


def decode(word, b: int):
    """Signed fraction encoded by a ``b``-bit pattern."""
    w = np.asarray(word, dtype=np.int64)
    half = 1 << (b - 1)
    k = np.where(w >= half, w - (1 << b), w)
    return k / float(half)


def round_value(value, b: int):
    """Quantize then decode, i.e. the value a word actually represents."""
    return decode(quantize(value, b), b)


def decode_table(b: int) -> np.ndarray:
    """Decoded value of every ``b``-bit pattern, indexed by pattern."""
    return decode(np.arange(1 << b), b)


def angle_codeword(theta, t: int):
    """Nearest ``t``-bit codeword of the phase ``2 theta``."""
    return np.mod(np.rint(np.asarray(theta, dtype=float) * (1 << t) / np.pi), 1 << t).astype(np.int64)


def codeword_phase(c, t: int):
    return 2.0 * np.pi * np.asarray(c, dtype=float) / (1 << t)


def codeword_overlap(c, t: int):
    """Overlap ``-cos(2 theta)`` read from a phase codeword of ``2 theta``.

    Even in the phase, so the two conjugate codewords agree.
    """
    return -np.cos(codeword_phase(c, t))


def overlap_angle(overlap):
    """``theta`` in ``[0, pi/2]`` with ``-cos(2 theta) = overlap``."""
    s = np.clip(np.asarray(overlap, dtype=float), -1.0, 1.0)
    return 0.5 * np.arccos(-s)
