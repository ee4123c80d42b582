import numpy as np
import pytest

from qformer.exceptions import PostSelectionError, ShapeError
from qformer.reference import (
    ModelDims,
    identity_params,
    profile,
    random_input,
    random_params,
    ref_ffn,
    ref_multihead,
    ref_residual,
    ref_single_head,
    ref_stages,
)
from qformer.transformer import (
    as_scaled_orthogonal,
    ffn_pipeline,
    multi_head,
    read_matrix,
    residual,
    residual_joint,
    run_block,
    single_head,
    state_fidelity,
    tomography_readout,
)

D0 = profile("D0")
D1 = profile("D1")


def test_scaled_orthogonal_split(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    c, R = as_scaled_orthogonal(3.0 * Q)
    assert np.isclose(c, 3.0) and np.allclose(R, Q)
    with pytest.raises(Exception):
        as_scaled_orthogonal(rng.normal(size=(4, 4)))


def test_single_head_ideal_is_exact():
    X = random_input(D0, 1)
    P = random_params(D0, 1)
    st, p = single_head(X, P.W_Q[0], P.W_K[0], P.W_V[0], mode="ideal")
    assert state_fidelity(st, ref_single_head(X, P.W_Q[0], P.W_K[0], P.W_V[0])) >= 1 - 1e-12
    assert 0 < p <= 1


def test_single_head_joint_equals_projected():
    X = random_input(D0, 2)
    P = random_params(D0, 2)
    a, pa = single_head(X, P.W_Q[0], P.W_K[0], P.W_V[0], joint=True)
    b, pb = single_head(X, P.W_Q[0], P.W_K[0], P.W_V[0])
    assert np.isclose(pa, pb)
    assert abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2 >= 1 - 1e-12


@pytest.mark.parametrize("mode", ["full", "ideal"])
def test_one_head_reduces_to_single_head(mode):
    P = random_params(D1, 5).replace(W_O=np.eye(4))
    X = random_input(D1, 5)
    attn = multi_head(X, P, mode=mode)
    st, _ = single_head(X, P.W_Q[0], P.W_K[0], P.W_V[0], mode=mode)
    assert np.abs(attn.state.amplitudes - st.amplitudes).max() <= 1e-10
    assert np.isclose(attn.state.global_scale, st.global_scale, rtol=1e-10)


def test_multi_head_physical_scale():
    X = random_input(D0, 3)
    P = random_params(D0, 3)
    attn = multi_head(X, P, mode="ideal")
    assert np.allclose(read_matrix(attn.state, D0.rH), ref_multihead(X, P), atol=1e-10)


def test_masked_multi_head():
    X = random_input(D0, 4)
    P = random_params(D0, 4)
    attn = multi_head(X, P, mode="ideal", mask="causal")
    assert np.allclose(read_matrix(attn.state, D0.rH), ref_multihead(X, P, mask="causal"),
                       atol=1e-10)


@pytest.mark.parametrize("dims", [D0, D1])
def test_residual_joint_matches_projection(dims):
    X = random_input(dims, 6)
    P = random_params(dims, 6)
    z, p = residual(X, multi_head(X, P, mode="full"), dims)
    zj, pj = residual_joint(X, P)
    assert abs(np.vdot(z.amplitudes, zj.amplitudes)) ** 2 >= 1 - 1e-10
    assert np.isclose(p, pj)


def test_residual_ideal_physical():
    X = random_input(D0, 7)
    P = random_params(D0, 7)
    z, _ = residual(X, multi_head(X, P, mode="ideal"), D0)
    assert np.allclose(read_matrix(z, D0.rH), ref_residual(ref_multihead(X, P), X), atol=1e-10)


def test_zero_attention_residual_is_stacked_input():
    X = random_input(D0, 8)
    P = random_params(D0, 8).replace(W_V=np.zeros((2, 4, 4)))
    attn = multi_head(X, P)
    assert attn.vanished
    z, _ = residual(X, attn, D0)
    assert np.abs(read_matrix(z, D0.rH) - np.vstack([X, X])).max() <= 1e-10


def test_zero_input_is_degenerate():
    P = random_params(D0, 9)
    out = run_block(np.zeros((4, 4)), P, mode="full")
    assert out.degenerate and not out.F.any()
    with pytest.raises(PostSelectionError):
        single_head(np.zeros((4, 4)), P.W_Q[0], P.W_K[0], P.W_V[0])


def test_linear_regime_is_exact():
    X = random_input(D0, 42)
    P = random_params(D0, 42)
    out = run_block(X, P, "ideal", relu=False)
    ref = ref_stages(X, P, relu=False)["F"]
    assert 1 - out.record("ffn").fidelity <= 1e-6
    assert np.allclose(out.F, ref, atol=1e-8)


def test_ffn_all_negative_preactivation_is_degenerate():
    X = random_input(D0, 10)
    P = identity_params(D0).replace(W1=-np.eye(8))
    X = np.abs(X)
    out = run_block(X, P, "shortcut")
    assert out.degenerate and not out.F.any()


def test_ffn_modes_agree_on_words():
    X = random_input(D0, 42)
    P = random_params(D0, 42)
    z, _ = residual(X, multi_head(X, P, mode="full"), D0)
    full = ffn_pipeline(z, P, mode="full")
    short = ffn_pipeline(z, P, mode="shortcut")
    assert np.mean(full.words == short.words) >= 0.99
    Zp = read_matrix(z, D0.rH)
    assert state_fidelity(full.state, ref_ffn(Zp, P.W1, P.W2)) >= 0.95


def test_ffn_rejects_bad_gamma():
    X = random_input(D0, 0)
    P = random_params(D0, 0)
    z, _ = residual(X, multi_head(X, P, mode="ideal"), D0)
    with pytest.raises(ValueError):
        ffn_pipeline(z, P, gamma=0.0)
    with pytest.raises(ValueError):
        ffn_pipeline(z, P, mode="bogus")


def test_ffn_needs_matching_hidden_width():
    dims = ModelDims(d_ff=16)
    X = random_input(dims, 0)
    P = random_params(dims, 0)
    z, _ = residual(X, multi_head(X, P, mode="ideal"), dims)
    with pytest.raises(ShapeError):
        ffn_pipeline(z, P)


def test_run_block_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        run_block(np.ones((4, 8)), random_params(D0, 0))


def test_tomography_exact_and_sampled():
    X = random_input(D0, 42)
    P = random_params(D0, 42)
    out = run_block(X, P, "shortcut")
    exact = tomography_readout(out.state, rows=D0.rH, physical=False)
    assert np.allclose(exact, read_matrix(out.state, D0.rH, physical=False))
    est = tomography_readout(out.state, 0.02, rows=D0.rH, sampling=True, rng=0, physical=False)
    assert np.abs(est - exact).max() <= 0.02
    with pytest.raises(ValueError):
        tomography_readout(out.state, 0.0, sampling=True)
