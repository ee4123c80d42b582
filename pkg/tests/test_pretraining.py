import numpy as np
import pytest
from hypothesis import given, strategies as st

from qformer.exceptions import ShapeError
from qformer.pretraining import (
    Corpus,
    Objective,
    TrainConfig,
    apply_vocab_projection,
    batched_logits,
    embedding_matrix,
    finite_difference_gradient,
    generate,
    load_model,
    next_token_distribution,
    overlap_loss,
    overlap_losses,
    save_model,
    sequence_inputs,
    spsa_gradient,
    train,
    windows,
)
from qformer.reference import profile, random_params, ref_logits
from qformer.transformer import run_block

D0 = profile("D0")


def test_corpus_vocabulary():
    c = Corpus.from_text("abcab", 8)
    assert c.vocab == ("\x00", "a", "b", "c")
    assert c.token_ids.tolist() == [1, 2, 3, 1, 2]
    assert c.decode(c.encode("cab")) == "cab"
    with pytest.raises(ValueError):
        c.encode("z")
    with pytest.raises(ShapeError):
        Corpus.from_text("abcdefgh", 8)


def test_windows():
    inputs, targets, weight = windows(np.arange(7), 4)
    assert inputs.shape == (3, 4)
    assert np.array_equal(targets, inputs + 1)
    assert weight.sum() == 12
    _, _, last = windows(np.arange(7), 4, "last")
    assert last[:, -1].all() and not last[:, :-1].any()
    with pytest.raises(ValueError):
        windows(np.arange(4), 4)


def batch(seed=0):
    P = random_params(D0, seed)
    E = embedding_matrix(D0, seed)
    c = Corpus.from_text("abcab dab", 8)
    inputs, targets, _ = windows(c.token_ids, 4)
    return P, E, sequence_inputs(inputs, E), targets


def test_batched_logits_match_state_pipeline():
    P, E, Xb, _ = batch()
    logits = batched_logits(Xb, P)
    for X, L in zip(Xb, logits):
        res = run_block(X, P, "ideal", mask="causal")
        assert np.allclose(ref_logits(res.F, P.W_E), L, atol=1e-9)


def test_state_overlap_loss_matches_classical():
    P, E, Xb, targets = batch(1)
    res = run_block(Xb[0], P, "ideal", mask="causal")
    st_v = apply_vocab_projection(res.state, P.W_E)
    exact = overlap_losses(batched_logits(Xb[:1], P), targets[:1])[0]
    for t in range(4):
        assert abs(overlap_loss(st_v, t, targets[0, t]) - exact[t]) <= 1e-9
        sampled = overlap_loss(st_v, t, targets[0, t], sampling=True, shots=100_000, rng=t)
        assert abs(sampled - exact[t]) <= 2e-2
    with pytest.raises(IndexError):
        overlap_loss(st_v, 4, 0)


def test_vocab_projection_needs_isometry():
    P, E, Xb, _ = batch()
    res = run_block(Xb[0], P, "ideal", mask="causal")
    with pytest.raises(ShapeError):
        apply_vocab_projection(res.state, np.ones((8, 8)))


@given(st.integers(0, 2 ** 31))
def test_overlap_losses_bounds(seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(3, 8, 4))
    T = rng.integers(0, 8, size=(3, 4))
    loss = overlap_losses(L, T)
    assert np.all((loss >= 0) & (loss <= 1 + 1e-12))
    assert np.all(overlap_losses(np.zeros((1, 8, 4)), T[:1]) == 1.0)


def test_fd_gradient_matches_spsa_direction():
    P, E, _, _ = batch()
    c = Corpus.from_text("abcab dab", 8)
    obj = Objective(c, P, E)
    g = finite_difference_gradient(obj, P)
    assert g.shape == P.theta_vector().shape
    # directional derivative along a random direction
    rng = np.random.default_rng(3)
    u = rng.normal(size=g.size)
    u /= np.linalg.norm(u)
    h = 1e-5
    theta = P.theta_vector()
    dd = (obj(P.with_theta_vector(theta + h * u)) - obj(P.with_theta_vector(theta - h * u))) / (2 * h)
    assert abs(dd - g @ u) <= 1e-4 * max(1.0, abs(dd))
    est = spsa_gradient(obj, P, np.random.default_rng(0), c=1e-4, samples=1)
    assert est.shape == g.shape


def test_zero_learning_rate_is_flat():
    res = train("abcab dab", TrainConfig(learning_rate=0.0, iterations=2, optimizer="spsa"))
    assert res.loss_trace[0] == res.loss_trace[1] == res.loss_trace[2]


def test_training_is_deterministic():
    cfg = TrainConfig(iterations=2, optimizer="spsa", learning_rate=1e-3)
    a = train("abcab dab", cfg)
    b = train("abcab dab", cfg)
    assert a.loss_trace == b.loss_trace


def test_train_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="adam")
    with pytest.raises(ValueError):
        train("abc", TrainConfig(iterations=0))


def test_generation_and_argmax_invariance():
    P, E, _, _ = batch()
    c = Corpus.from_text("abcab dab", 8)
    assert generate("ab", 0, P, c, E) == "ab"
    out = generate("ab", 3, P, c, E)
    assert out.startswith("ab") and len(out) == 5 and "\x00" not in out
    p = next_token_distribution(c.encode("ab"), P, E)
    scaled = P.replace(W_E=3.7 * P.W_E)
    q = next_token_distribution(c.encode("ab"), scaled, E)
    assert np.argmax(p) == np.argmax(q)
    assert generate("ab", 3, scaled, c, E) == out
    with pytest.raises(ValueError):
        generate("", 1, P, c, E)


def test_shortcut_generation_runs():
    P, E, _, _ = batch()
    c = Corpus.from_text("abcab dab", 8)
    p = next_token_distribution(c.encode("abca"), P, E, mode="shortcut")
    assert np.isclose(p.sum(), 1.0)


def test_model_roundtrip(tmp_path):
    res = train("abcab dab", TrainConfig(iterations=0))
    path = tmp_path / "model.json"
    save_model(path, res)
    params, corpus, E = load_model(path)
    assert corpus.vocab == res.corpus.vocab
    assert np.array_equal(E, res.embedding)
    assert generate("ab", 2, params, corpus, E) == generate("ab", 2, res.params, res.corpus,
                                                             res.embedding)


@pytest.mark.slow
def test_fd_and_spsa_signs_agree():
    P, E, _, _ = batch()
    c = Corpus.from_text("abcab dab", 8)
    obj = Objective(c, P, E)
    fd = finite_difference_gradient(obj, P)
    est = spsa_gradient(obj, P, np.random.default_rng(1), c=1e-3, samples=20000)
    picks = np.random.default_rng(0).choice(fd.size, size=50, replace=False)
    agree = np.mean(np.sign(fd[picks]) == np.sign(est[picks]))
    assert agree >= 0.9
