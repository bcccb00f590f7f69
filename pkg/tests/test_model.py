import math

import numpy as np
import pytest
from scipy import stats

from docmrt import model
from docmrt.mrt import fd_gradient_check
from docmrt.textcore import BOS_ID, EOS_ID, DocumentBatch


def oracle_log_prob(params, src, tgt, max_len):
    """Plain-Python re-implementation of the forward pass (no numpy math)."""
    v, d, h = params.vocab_size, params.emb_dim, params.hidden_dim
    e_src = params.src_emb.tolist()
    e_tgt = params.tgt_emb.tolist()
    w = params.w_hidden.tolist()
    b = params.b_hidden.tolist()
    u = params.w_out.tolist()
    c = params.b_out.tolist()
    if src:
        ctx = [sum(e_src[t][k] for t in src) / len(src) for k in range(d)]
    else:
        ctx = [0.0] * d
    steps = list(tgt) + ([EOS_ID] if len(tgt) < max_len else [])
    prev = BOS_ID
    total = 0.0
    for tok in steps:
        x = ctx + e_tgt[prev]
        act = [sum(x[i] * w[i][j] for i in range(2 * d)) + b[j] for j in range(h)]
        hid = [math.tanh(a) for a in act]
        z = [sum(hid[i] * u[i][j] for i in range(h)) + c[j] for j in range(v)]
        zmax = max(z)
        lse = zmax + math.log(sum(math.exp(val - zmax) for val in z))
        total += z[tok] - lse
        prev = tok
    return total


def test_init_params_deterministic_per_seed():
    a = model.init_params(6, 3, 4, seed=5)
    b = model.init_params(6, 3, 4, seed=5)
    c = model.init_params(6, 3, 4, seed=6)
    assert np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.theta, c.theta)
    assert np.abs(a.theta).max() <= 0.1


def test_init_params_zero_flag_and_layout():
    p = model.init_params(6, 3, 4, seed=0, zero=True)
    assert not p.theta.any()
    assert p.theta.size == model.param_count(6, 3, 4)
    assert p.src_emb.shape == (6, 3)
    assert p.w_hidden.shape == (6, 4)
    assert p.w_out.shape == (4, 6)


def test_init_params_validation():
    with pytest.raises(ValueError):
        model.init_params(4, 3, 3, seed=0)
    with pytest.raises(ValueError):
        model.init_params(5, 0, 3, seed=0)


def test_log_prob_uniform_at_zero_theta():
    p = model.init_params(5, 2, 2, seed=0, zero=True)
    assert math.isclose(model.log_prob(p, (4,), (4, 4), 3), 3 * math.log(1 / 5), abs_tol=1e-12)
    assert math.isclose(model.log_prob(p, (4,), (), 3), math.log(1 / 5), abs_tol=1e-12)


def test_log_prob_forced_eos_at_cap():
    p = model.init_params(5, 2, 2, seed=0, zero=True)
    assert math.isclose(model.log_prob(p, (4,), (4, 4, 4), 3), 3 * math.log(1 / 5), abs_tol=1e-12)


def test_log_prob_matches_independent_forward_pass():
    rng = np.random.default_rng(9)
    for trial in range(10):
        p = model.init_params(5, 2, 2, seed=trial)
        p.theta += rng.normal(0, 0.5, size=p.theta.size)
        src = tuple(int(x) for x in rng.integers(0, 5, size=int(rng.integers(0, 4))))
        tgt = tuple(int(x) for x in rng.choice([0, 1, 3, 4], size=int(rng.integers(0, 4))))
        got = model.log_prob(p, src, tgt, 3)
        want = oracle_log_prob(p, src, tgt, 3)
        assert math.isclose(got, want, rel_tol=1e-9, abs_tol=1e-12)


def test_log_prob_rejects_overlong_target():
    p = model.init_params(5, 2, 2, seed=0)
    with pytest.raises(ValueError, match="max_len"):
        model.log_prob(p, (4,), (4, 4, 4, 4), 3)


def test_log_prob_grad_finite_differences():
    rng = np.random.default_rng(21)
    p = model.init_params(6, 4, 4, seed=2)
    src, tgt = (4, 5, 3), (5, 5, 0)
    grad = model.log_prob_grad(p, src, tgt, 4)
    coords = rng.choice(p.theta.size, size=50, replace=False)
    err = fd_gradient_check(
        lambda th: model.log_prob(p.like(th), src, tgt, 4), grad, p.theta, coords
    )
    assert err < 1e-5


def test_log_prob_grad_output_bias_at_zero_theta():
    p = model.init_params(5, 2, 2, seed=0, zero=True)
    grad = p.like(model.log_prob_grad(p, (4,), (4,), 3))
    expected = np.full(5, -2 / 5)
    expected[4] += 1.0
    expected[EOS_ID] += 1.0
    assert np.allclose(grad.b_out, expected, atol=1e-12)
    # hidden path carries no gradient when U = 0
    assert not grad.w_hidden.any() and not grad.b_hidden.any()


def test_log_prob_grad_untouched_embeddings_are_zero():
    p = model.init_params(6, 3, 3, seed=4)
    grad = p.like(model.log_prob_grad(p, (4,), (5,), 4))
    used_src, used_tgt = {4}, {BOS_ID, 5}
    for tok in range(6):
        if tok not in used_src:
            assert not grad.src_emb[tok].any()
        if tok not in used_tgt:
            assert not grad.tgt_emb[tok].any()


def test_sample_deterministic_per_seed():
    p = model.init_params(6, 3, 3, seed=8)
    a = model.sample(p, (4, 5), 1.0, np.random.default_rng(3), 5)
    b = model.sample(p, (4, 5), 1.0, np.random.default_rng(3), 5)
    assert a == b


def test_sample_greedy_matches_beam_one():
    for seed in range(5):
        p = model.init_params(6, 3, 3, seed=seed)
        greedy = model.sample(p, (4,), 1.0, np.random.default_rng(0), 4, greedy=True)
        assert greedy == model.beam_decode(p, (4,), 1, 4)[0]


def test_sample_rejects_nonpositive_temperature():
    p = model.init_params(5, 2, 2, seed=0)
    with pytest.raises(ValueError):
        model.sample(p, (4,), 0.0, np.random.default_rng(0), 3)


def test_sample_scoring_consistency_exact():
    rng = np.random.default_rng(31)
    p = model.init_params(6, 3, 3, seed=13)
    for _ in range(50):
        hyp = model.sample(p, (4, 5), 0.7, rng, 5)
        assert hyp.log_prob == model.log_prob(p, (4, 5), hyp.sentence, 5)
        assert hyp.log_prob <= 0.0


def test_sample_uniform_token_frequencies_at_zero_theta():
    p = model.init_params(5, 2, 2, seed=0, zero=True)
    decoder = model.Decoder(p, (4,), 3)
    rng = np.random.default_rng(99)
    draws = 100_000
    counts = np.zeros(5)
    for _ in range(draws):
        hyp = decoder.sample(1.0, rng)
        first = hyp.sentence[0] if hyp.sentence else EOS_ID
        counts[first] += 1
    chi2 = ((counts - draws / 5) ** 2 / (draws / 5)).sum()
    assert chi2 < stats.chi2.ppf(0.999, df=4)


def test_sample_frequencies_match_enumeration():
    p = model.init_params(5, 2, 2, seed=7)
    src = (4, 3)
    space = model.enumerate_output_space(p, src, 2)
    decoder = model.Decoder(p, src, 2)
    rng = np.random.default_rng(1234)
    draws = 100_000
    counts = {sent: 0 for sent, _ in space}
    for _ in range(draws):
        counts[decoder.sample(1.0, rng).sentence] += 1
    for sent, prob in space:
        sigma = math.sqrt(prob * (1 - prob) / draws)
        assert abs(counts[sent] / draws - prob) <= 4 * sigma + 1e-12


def test_beam_sorted_unique_and_rescored():
    p = model.init_params(6, 3, 3, seed=3)
    hyps = model.beam_decode(p, (4, 5, 4), 4, 5)
    assert len(hyps) == 4
    sentences = [h.sentence for h in hyps]
    assert len(set(sentences)) == len(sentences)
    logps = [h.log_prob for h in hyps]
    assert logps == sorted(logps, reverse=True)
    for h in hyps:
        assert h.log_prob == model.log_prob(p, (4, 5, 4), h.sentence, 5)


def test_beam_four_finds_enumeration_argmax():
    for seed in range(8):
        p = model.init_params(5, 3, 3, seed=seed)
        src = (4, 0)
        space = model.enumerate_output_space(p, src, 3)
        best_sentence, best_prob = max(space, key=lambda sp: sp[1])
        top = model.beam_decode(p, src, 4, 3)[0]
        assert top.sentence == best_sentence
        assert math.isclose(math.exp(top.log_prob), best_prob, rel_tol=1e-9)


def test_mle_loss_single_pair_reduction():
    p = model.init_params(6, 3, 3, seed=10)
    batch = DocumentBatch([(4, 5)], [(5, 4, 4)], [0])
    loss, _ = model.mle_loss_grad(p, batch, 5)
    assert math.isclose(loss, -model.log_prob(p, (4, 5), (5, 4, 4), 5) / 4, rel_tol=1e-12)


def test_mle_loss_at_zero_theta_is_log_vocab():
    p = model.init_params(5, 2, 2, seed=0, zero=True)
    batch = DocumentBatch([(4,), (4, 4)], [(4, 4), (4,)], [0, 0])
    loss, _ = model.mle_loss_grad(p, batch, 4)
    assert math.isclose(loss, math.log(5), abs_tol=1e-12)


def test_mle_loss_grad_finite_differences():
    rng = np.random.default_rng(77)
    p = model.init_params(6, 4, 4, seed=6)
    batch = DocumentBatch([(4, 5), (3,)], [(5,), (4, 4, 0)], [0, 0])
    _, grad = model.mle_loss_grad(p, batch, 4)
    coords = rng.choice(p.theta.size, size=50, replace=False)
    err = fd_gradient_check(
        lambda th: model.mle_loss_grad(p.like(th), batch, 4)[0], grad, p.theta, coords
    )
    assert err < 1e-5


def test_mle_loss_empty_batch():
    p = model.init_params(5, 2, 2, seed=0)
    with pytest.raises(ValueError):
        model.mle_loss_grad(p, DocumentBatch([], [], []), 3)


def test_enumerate_hand_tree_at_zero_theta():
    p = model.init_params(5, 2, 2, seed=0, zero=True)
    space = dict(model.enumerate_output_space(p, (4,), 2))
    assert math.isclose(space[()], 1 / 5, abs_tol=1e-15)
    for tok in (0, 1, 3, 4):
        assert math.isclose(space[(tok,)], 1 / 25, abs_tol=1e-15)
        for tok2 in (0, 1, 3, 4):
            # forced EOS at the cap: no extra factor for length-2 sentences
            assert math.isclose(space[(tok, tok2)], 1 / 25, abs_tol=1e-15)
    assert len(space) == 21
    assert math.isclose(sum(space.values()), 1.0, abs_tol=1e-12)


def test_enumerate_normalization_random_theta():
    for seed in range(20):
        p = model.init_params(5, 3, 3, seed=seed)
        total = sum(prob for _, prob in model.enumerate_output_space(p, (4, 0), 3))
        assert abs(total - 1.0) <= 1e-10


def test_enumerate_probabilities_match_log_prob():
    p = model.init_params(5, 3, 3, seed=17)
    for sent, prob in model.enumerate_output_space(p, (4,), 2):
        assert math.isclose(prob, math.exp(model.log_prob(p, (4,), sent, 2)), rel_tol=1e-9)


def test_enumerate_argmax_matches_greedy_on_peaked_model():
    # per-step greedy only equals the global argmax when steps are decisive;
    # a model with a strong output bias toward one token chain is.
    p = model.init_params(5, 3, 3, seed=0, zero=True)
    p.b_out[4] = 4.0
    space = model.enumerate_output_space(p, (4, 4), 3)
    best = max(space, key=lambda sp: sp[1])[0]
    greedy = model.sample(p, (4, 4), 1.0, np.random.default_rng(0), 3, greedy=True)
    assert greedy.sentence == best


def test_enumerate_guard():
    p = model.init_params(32, 2, 2, seed=0)
    with pytest.raises(ValueError, match="guard"):
        model.enumerate_output_space(p, (4,), 5)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    p = model.init_params(7, 3, 5, seed=123)
    p.theta *= math.pi  # exercise non-trivial decimals
    path = tmp_path / "model.ckpt"
    model.save_checkpoint(p, path)
    loaded = model.load_checkpoint(path)
    assert (loaded.vocab_size, loaded.emb_dim, loaded.hidden_dim) == (7, 3, 5)
    assert np.array_equal(loaded.theta, p.theta)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "docmrt-ckpt v1 7 3 5"


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "bogus.ckpt"
    path.write_text("not a checkpoint\n", encoding="utf-8")
    with pytest.raises(ValueError):
        model.load_checkpoint(path)
