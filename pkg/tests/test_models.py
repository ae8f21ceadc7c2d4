from __future__ import annotations

import numpy as np
import pytest

from seedes.engine import perturb_in_place
from seedes.models import SphereModel, random_params, sphere_objective
from seedes.params import ParameterSet
from seedes.tinylm import (EOS, VOCAB, TinyLm, VocabError, decode, encode, format_prompt,
                           layer_shapes, log_softmax)

from conftest import make_params


# sphere -------------------------------------------------------------------------

def test_sphere_optimum_and_unit_offset():
    target = random_params(50, 3, seed=4)
    assert sphere_objective(target.copy(), target) == 0.0
    theta = target.copy()
    theta.flat_views()[0][0] += np.float32(1.0)
    assert sphere_objective(theta, target) == pytest.approx(-1.0, abs=1e-6)


def test_sphere_matches_direct_sum_of_squares():
    theta, target = make_params([30, 70], seed=1), make_params([30, 70], seed=2)
    d = theta.to_vector().astype(np.float64) - target.to_vector()
    assert sphere_objective(theta, target) == pytest.approx(-float(np.sum(d * d)), rel=1e-12)


def test_sphere_shape_mismatch():
    with pytest.raises(ValueError):
        sphere_objective(make_params([10, 10]), make_params([20]))


def test_sphere_model_layout():
    m = SphereModel.create(10_001, layers=4)
    assert m.params.size == 10_001 and len(m.params) == 4
    assert m.params.digest() == SphereModel.create(10_001, layers=4).params.digest()
    assert m.clone().params is not m.params


# tiny language model ------------------------------------------------------------

def test_vocabulary():
    assert len(VOCAB) == 99 and VOCAB[EOS] == "<eos>"
    assert decode(encode("Q: 12 × 7 =")) == "Q: 12 × 7 ="
    with pytest.raises(VocabError):
        encode("café")


def test_shipped_model_loads():
    m = TinyLm.load()
    assert m.params.size == 223_587
    assert m.params.size == sum(int(np.prod(s)) for _, s in layer_shapes(99, 128, 128, 2))


def forced_model(vocab=12) -> TinyLm:
    """One-hot GRU whose greedy continuation of token t is t+1, t+2, ... (mod V)."""
    V = vocab
    f = np.float32
    layers = [("embed", np.eye(V, dtype=f))]
    w_ih = np.zeros((3 * V, V), f)
    w_ih[2 * V:] = 10.0 * np.eye(V)                 # candidate = tanh(10 * onehot)
    b_ih = np.zeros(3 * V, f)
    b_ih[V:2 * V] = -50.0                           # update gate shut: h = candidate
    layers += [("block0.w_ih", w_ih), ("block0.w_hh", np.zeros((3 * V, V), f)),
               ("block0.b_ih", b_ih), ("block0.b_hh", np.zeros(3 * V, f))]
    succ = np.zeros((V, V), f)
    for t in range(V):
        succ[(t + 1) % V, t] = 10.0
    layers += [("head.w", succ), ("head.b", np.zeros(V, f))]
    return TinyLm(ParameterSet(layers))


def test_forced_sequence_decoding():
    m = forced_model()
    assert m.greedy_decode([3], 20) == [4, 5, 6, 7, 8, 9, 10, 11, 0]
    assert m.greedy_decode([9, 3], 4) == [4, 5, 6, 7]
    assert m.greedy_decode([3], 0) == []


def test_ties_go_to_the_lowest_index():
    m = forced_model()
    m.params["head.w"][:] = 0.0                     # every logit equal
    assert m.greedy_decode([5], 3) == [0]


def test_linear_model_logits_by_hand():
    rng = np.random.default_rng(3)
    V, E, H = 6, 4, 5
    f = np.float32
    emb = rng.standard_normal((V, E)).astype(f)
    w_ih = np.zeros((3 * H, E), f)
    w_ih[2 * H:] = rng.standard_normal((H, E)) * 0.5
    b_ih = np.zeros(3 * H, f)
    b_ih[H:2 * H] = -100.0
    b_ih[2 * H:] = rng.standard_normal(H) * 0.1
    head_w = rng.standard_normal((V, H)).astype(f)
    head_b = rng.standard_normal(V).astype(f)
    m = TinyLm(ParameterSet([("embed", emb), ("block0.w_ih", w_ih),
                             ("block0.w_hh", np.zeros((3 * H, H), f)), ("block0.b_ih", b_ih),
                             ("block0.b_hh", np.zeros(3 * H, f)), ("head.w", head_w),
                             ("head.b", head_b)]))
    tok = 2
    h = np.tanh(w_ih[2 * H:].astype(np.float64) @ emb[tok] + b_ih[2 * H:])
    logits = head_w.astype(np.float64) @ h + head_b
    expected = logits - np.log(np.sum(np.exp(logits)))
    np.testing.assert_allclose(m.forward_logits([tok])[0], expected, atol=1e-5)


@pytest.fixture(scope="module")
def small_lm():
    return TinyLm.random(seed=5, embed=16, hidden=24)


def test_distribution_is_normalised(small_lm):
    lp = small_lm.forward_logits(encode("Q: What is 2 + 2?\nA: "))
    assert lp.shape == (21, 99)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-5)
    base = TinyLm.load()
    lp = base.forward_logits(encode(format_prompt("Name one primary color:")))
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-5)


def test_log_softmax_is_stable():
    lp = log_softmax(np.array([[1e4, 0.0, -1e4]], dtype=np.float32))
    assert np.isfinite(lp).all() and lp[0, 0] == 0.0


def test_greedy_agrees_with_logits():
    m = TinyLm.load()
    prompt = encode(format_prompt("What is the capital of France?"))
    out = m.greedy_decode(prompt, 24)
    lp = m.forward_logits(prompt + out[:-1])
    for k, tok in enumerate(out):
        assert int(np.argmax(lp[len(prompt) - 1 + k])) == tok
    assert np.allclose(m.score(prompt, out), [lp[len(prompt) - 1 + k, t]
                                              for k, t in enumerate(out)])


def test_greedy_is_deterministic_for_each_model():
    m = TinyLm.load()
    prompts = ["Solve: 3 + 5 =", "How many days are in a week?"]
    first = m.respond(prompts, 32)
    assert first == m.respond(prompts, 32)
    perturbed = m.clone()
    perturb_in_place(perturbed.params, 17, 0.001)
    assert perturbed.respond(prompts, 32) == perturbed.respond(prompts, 32)


def test_batched_decode_matches_single_prompts():
    m = TinyLm.load()
    prompts = ["Solve: 3 + 5 =", "Is the statement \"All cats are mammals\" true or false?",
               "Name one primary color:"]
    assert m.respond(prompts, 32) == [m.respond([p], 32)[0] for p in prompts]


def test_sampling_is_seeded(small_lm):
    prompt = [encode("Q: hi\nA: ")]
    a = small_lm.generate(prompt * 3, 10, temperature=1.0, rng=np.random.default_rng(1))
    b = small_lm.generate(prompt * 3, 10, temperature=1.0, rng=np.random.default_rng(1))
    assert a == b
    with pytest.raises(ValueError):
        small_lm.generate(prompt, 5, temperature=1.0)


def test_input_validation(small_lm):
    with pytest.raises(VocabError):
        small_lm.forward_logits([0, 500])
    with pytest.raises(ValueError):
        small_lm.forward_logits([])
    with pytest.raises(ValueError):
        small_lm.greedy_decode([1] * 250, 10)
    with pytest.raises(ValueError):
        TinyLm(make_params([10, 10]))


def test_matches_torch_gru():
    torch = pytest.importorskip("torch")
    m = TinyLm.random(seed=2, embed=8, hidden=12)
    tokens = encode("Q: 12 × 7 =\nA: 84")
    emb = torch.nn.Embedding(99, 8)
    grus = [torch.nn.GRU(8, 12, batch_first=True), torch.nn.GRU(12, 12, batch_first=True)]
    head = torch.nn.Linear(12, 99)
    with torch.no_grad():
        emb.weight.copy_(torch.from_numpy(m.params["embed"]))
        for i, g in enumerate(grus):
            for part in ("w_ih", "w_hh", "b_ih", "b_hh"):
                getattr(g, f"{'weight' if part[0] == 'w' else 'bias'}_{part[2:]}_l0").copy_(
                    torch.from_numpy(m.params[f"block{i}.{part}"]))
        head.weight.copy_(torch.from_numpy(m.params["head.w"]))
        head.bias.copy_(torch.from_numpy(m.params["head.b"]))
        x = emb(torch.tensor([tokens]))
        for g in grus:
            x, _ = g(x)
        ref = torch.log_softmax(head(x)[0].double(), dim=-1).numpy()
    np.testing.assert_allclose(m.forward_logits(tokens), ref, atol=1e-4)
