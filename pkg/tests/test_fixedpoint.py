import numpy as np
from hypothesis import given, strategies as st

from qformer import fixedpoint as fp


@given(st.floats(-1.0, 1.0, allow_nan=False), st.integers(2, 12))
def test_roundtrip_within_half_step(value, b):
    got = fp.round_value(value, b)
    top = 1 - fp.value_step(b)
    if value <= top:
        assert abs(got - value) <= fp.value_step(b) / 2 + 1e-15
    else:
        assert got == top


def test_twos_complement_patterns():
    assert fp.quantize(-1.0, 4) == 8
    assert fp.quantize(-0.125, 4) == 15
    assert fp.quantize(0.875, 4) == 7
    assert fp.decode(8, 4) == -1.0
    assert fp.decode(15, 4) == -0.125
    # 1.0 saturates to the largest representable word
    assert fp.decode(fp.quantize(1.0, 6), 6) == 1 - 2 ** -5


def test_decode_table_covers_range():
    table = fp.decode_table(5)
    assert table.size == 32
    assert sorted(table) == list(np.arange(-16, 16) / 16)


@given(st.floats(0.0, np.pi / 2, allow_nan=False), st.integers(3, 9))
def test_codeword_overlap_error_bound(theta, t):
    c = fp.angle_codeword(theta, t)
    err = abs(fp.codeword_overlap(c, t) + np.cos(2 * theta))
    assert err <= np.pi / 2 ** t + 1e-12


def test_codeword_symmetry():
    t = 5
    c = np.arange(32)
    assert np.allclose(fp.codeword_overlap(c, t), fp.codeword_overlap((-c) % 32, t))
    assert np.isclose(fp.overlap_angle(0.0), np.pi / 4)
    assert np.isclose(-np.cos(2 * fp.overlap_angle(0.3)), 0.3)
