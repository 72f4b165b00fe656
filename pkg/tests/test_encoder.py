import math

import numpy as np
import pytest

from copydst import autodiff as ad
from copydst.autodiff import ContractError, DimensionError, Tensor
from copydst.embeddings import PAD
from copydst.encoder import BiLstmEncoder, LstmCell, SystemAct, linearize_turn, lstm_sequence, lstm_step

from conftest import assert_grad_close, numeric_grad


def test_linearize_single_confirm():
    tokens, degenerate = linearize_turn([("confirm", "food", "italian")], ["i", "want", "thai"])
    assert tokens == ["confirm", "food", "italian", "i", "want", "thai"]
    assert not degenerate


def test_linearize_no_actions():
    assert linearize_turn([], ["hello"]) == (["hello"], False)


def test_linearize_multiple_actions_in_order():
    acts = [SystemAct("request", "area"), SystemAct("confirm", "food", "thai")]
    tokens, _ = linearize_turn(acts, ["north"])
    assert tokens == ["request", "area", "confirm", "food", "thai", "north"]


def test_linearize_tokenizes_action_values():
    tokens, _ = linearize_turn([SystemAct("inform", "food", "North American")], [])
    assert tokens == ["inform", "food", "north", "american"]


def test_linearize_empty_turn_is_flagged():
    assert linearize_turn([], []) == ([PAD], True)


def test_system_act_str():
    assert str(SystemAct("confirm", "food", "thai")) == "confirm(food=thai)"
    assert str(SystemAct("request", "area")) == "request(area)"
    assert str(SystemAct("welcomemsg")) == "welcomemsg()"


def _cell(d, h, seed=0):
    return LstmCell(d, h, np.random.default_rng(seed))


def test_cell_shapes_and_forget_bias():
    c = _cell(3, 4)
    assert c.w_ih.shape == (16, 3) and c.w_hh.shape == (16, 4) and c.bias.shape == (16,)
    np.testing.assert_array_equal(c.bias.data, [0] * 4 + [1] * 4 + [0] * 8)
    assert np.all(np.abs(c.w_ih.data) <= 0.5) and np.all(np.abs(c.w_hh.data) <= 0.5)


def test_zero_parameters_give_zero_output():
    c = _cell(3, 2)
    for p in c.parameters():
        p.data[...] = 0.0
    h, cstate = lstm_step(c, Tensor(np.zeros(2)), Tensor(np.zeros(2)), Tensor([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(h.data, [0.0, 0.0])
    np.testing.assert_array_equal(cstate.data, [0.0, 0.0])


def test_scalar_step_matches_hand_computation():
    c = _cell(1, 1)
    # gates i, f, g, o
    c.w_ih.data[:, 0] = [0.5, -0.3, 0.8, 0.2]
    c.w_hh.data[:, 0] = [0.1, 0.4, -0.6, 0.7]
    c.bias.data[:] = [0.05, 1.0, -0.1, 0.3]
    x, hp, cp = 0.9, -0.2, 0.4

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    i = sig(0.5 * x + 0.1 * hp + 0.05)
    f = sig(-0.3 * x + 0.4 * hp + 1.0)
    g = math.tanh(0.8 * x - 0.6 * hp - 0.1)
    o = sig(0.2 * x + 0.7 * hp + 0.3)
    c_new = f * cp + i * g
    h_new = o * math.tanh(c_new)
    h, cs = lstm_step(c, Tensor([hp]), Tensor([cp]), Tensor([x]))
    assert h.item() == pytest.approx(h_new, abs=1e-15)
    assert cs.item() == pytest.approx(c_new, abs=1e-15)


def test_step_shape_mismatch():
    with pytest.raises(DimensionError):
        lstm_step(_cell(3, 2), Tensor(np.zeros(2)), Tensor(np.zeros(2)), Tensor(np.zeros(4)))


def test_step_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    c = _cell(3, 2, seed=4)
    x = ad.parameter(rng.normal(size=3))
    hp = ad.parameter(rng.normal(size=2))
    cp = ad.parameter(rng.normal(size=2))
    w = rng.normal(size=2)

    def f():
        h, cs = lstm_step(c, hp, cp, x)
        return (h * Tensor(w)).sum() + cs.sum()

    f().backward()
    for p in c.parameters() + [x, hp, cp]:
        assert_grad_close(p.grad, numeric_grad(lambda: f().item(), p.data))


@pytest.mark.parametrize("reverse", [False, True])
def test_fused_sequence_equals_chained_steps(reverse):
    rng = np.random.default_rng(5)
    c = _cell(4, 3, seed=6)
    X = rng.normal(size=(5, 4))
    fused = lstm_sequence(c, Tensor(X), reverse=reverse).data
    h, cs = Tensor(np.zeros(3)), Tensor(np.zeros(3))
    rows = [None] * 5
    for t in (range(4, -1, -1) if reverse else range(5)):
        h, cs = lstm_step(c, h, cs, Tensor(X[t]))
        rows[t] = h.data
    np.testing.assert_allclose(fused, np.stack(rows), rtol=0, atol=1e-14)


def test_encoder_gradients_every_parameter():
    rng = np.random.default_rng(7)
    enc = BiLstmEncoder(3, 4, dropout=0.0, rng=rng)
    X = ad.parameter(rng.normal(size=(3, 3)))
    w = rng.normal(size=(3, 8))
    u = rng.normal(size=8)

    def f():
        e = enc.encode(X)
        return (e.token_states * Tensor(w)).sum() + (ad.tanh(e.summary) * Tensor(u)).sum()

    f().backward()
    for p in enc.parameters() + [X]:
        assert_grad_close(p.grad, numeric_grad(lambda: f().item(), p.data))


def test_single_token_summary_equals_state():
    enc = BiLstmEncoder(5, 3, rng=np.random.default_rng(0))
    e = enc.encode(np.random.default_rng(1).normal(size=(1, 5)), ["x"])
    np.testing.assert_array_equal(e.summary.data, e.token_states.data[0])


def test_summary_is_last_forward_and_first_backward():
    enc = BiLstmEncoder(5, 3, rng=np.random.default_rng(0))
    e = enc.encode(np.random.default_rng(1).normal(size=(4, 5)))
    S = e.token_states.data
    np.testing.assert_array_equal(e.summary.data, np.concatenate([S[3, :3], S[0, 3:]]))


def test_palindrome_mirror_symmetry_with_tied_weights():
    enc = BiLstmEncoder(4, 3, rng=np.random.default_rng(2))
    for a, b in zip(enc.forward_cell.parameters(), enc.backward_cell.parameters()):
        b.data[...] = a.data
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=4), rng.normal(size=4)
    S = enc.encode(np.stack([u, v, u])).token_states.data
    for t in range(3):
        np.testing.assert_allclose(S[t, :3], S[2 - t, 3:], rtol=0, atol=1e-15)


def test_directional_locality():
    enc = BiLstmEncoder(4, 3, rng=np.random.default_rng(2))
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 4))
    base = enc.encode(X).token_states.data
    Y = X.copy()
    Y[3] += 1.0
    moved = enc.encode(Y).token_states.data
    np.testing.assert_array_equal(moved[:3, :3], base[:3, :3])
    np.testing.assert_array_equal(moved[4:, 3:], base[4:, 3:])
    assert not np.allclose(moved[3:, :3], base[3:, :3])
    assert not np.allclose(moved[:4, 3:], base[:4, 3:])


def test_default_scale_shapes():
    enc = BiLstmEncoder(400, 200, rng=np.random.default_rng(0))
    e = enc.encode(np.zeros((5, 400)))
    assert e.token_states.shape == (5, 400)
    assert e.summary.shape == (400,)


def test_empty_input_rejected():
    enc = BiLstmEncoder(3, 2)
    with pytest.raises(ContractError):
        enc.encode(np.zeros((0, 3)))


def test_dropout_only_in_training():
    enc = BiLstmEncoder(3, 2, dropout=0.5, rng=np.random.default_rng(0))
    X = np.random.default_rng(1).normal(size=(4, 3))
    a = enc.encode(X).token_states.data
    b = enc.encode(X).token_states.data
    assert np.array_equal(a, b)
    c = enc.encode(X, training=True, rng=np.random.default_rng(2)).token_states.data
    assert not np.array_equal(a, c)
