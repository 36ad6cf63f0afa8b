"""Tracker block: tokenizer, preprocessing, motion-difference weights, and
the gated linear attention, against hand oracles and forced cases."""

import numpy as np
import pytest

from bevsot import tensor as T
from bevsot.blocks import (BlockParams, FramePair, block_forward, focus_attention,
                           imm_weights, preprocess, tokenize)
from bevsot.exceptions import ShapeError
from bevsot.gradcheck import gradcheck_params
from bevsot.tensor import Tensor


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=float), requires_grad=True)


def make_block(H=4, C=4, heads=1, rng=None, imm=True, dwc=True, linear=True,
               unshared=False):
    rng = rng or np.random.default_rng(0)
    N = H * H
    d = C // heads
    u = lambda *s: leaf(rng.uniform(-0.5, 0.5, size=s))
    bp = BlockParams(
        H=H, W=H, C=C, heads=heads,
        cnn_w=u(3, 3, C, C), cnn_b=u(C), pos=u(N, C),
        ln1_g=leaf(np.ones(C)), ln1_b=leaf(np.zeros(C)),
        wq=u(C, C), wk=u(C, C), wv=u(C, C),
        lo_w=u(C, C), lo_b=u(C),
        ln2_g=leaf(np.ones(C)), ln2_b=leaf(np.zeros(C)),
        ffn1_w=u(C, 2 * C), ffn1_b=u(2 * C), ffn2_w=u(2 * C, C), ffn2_b=u(C),
    )
    if dwc:
        bp.dwc_w = u(3, 3, C)
    if linear:
        bp.lin_w, bp.lin_b = u(C, C), u(C)
    if imm:
        bp.alpha = leaf(0.5)
        bp.gate_w, bp.gate_b = u(heads, N, d), u(heads, d)
    if unshared:
        bp.cnn_prev_w, bp.cnn_prev_b = u(3, 3, C, C), u(C)
        if dwc:
            bp.dwc_prev_w = u(3, 3, C)
        if linear:
            bp.lin_prev_w, bp.lin_prev_b = u(C, C), u(C)
    return bp


def grids(rng, H=4, C=4, identical=False):
    prev = Tensor(rng.standard_normal((H, H, C)))
    curr = prev if identical else Tensor(rng.standard_normal((H, H, C)))
    return FramePair(prev, curr)


# ---------------------------------------------------------------------------
# tokenize


def test_tokenize_identical_frames_identical_tokens(rng):
    bp = make_block(rng=rng)
    xp, xc = tokenize(grids(rng, identical=True), bp)
    np.testing.assert_array_equal(xp.data, xc.data)


def test_tokenize_zero_everything_zero_tokens(rng):
    bp = make_block(rng=rng)
    bp.cnn_b = Tensor(np.zeros(4))
    bp.pos = Tensor(np.zeros((16, 4)))
    xp, xc = tokenize(FramePair(Tensor(np.zeros((4, 4, 4))), Tensor(np.zeros((4, 4, 4)))), bp)
    np.testing.assert_array_equal(xp.data, np.zeros((16, 4)))
    np.testing.assert_array_equal(xc.data, np.zeros((16, 4)))


def test_tokenize_matches_conv_flatten_oracle(rng):
    from tests.test_tensor import conv2d_loop
    bp = make_block(rng=rng)
    pair = grids(rng)
    want = (conv2d_loop(pair.curr.data, bp.cnn_w.data, bp.cnn_b.data)
            .reshape(16, 4) + bp.pos.data)
    _, xc = tokenize(pair, bp)
    np.testing.assert_allclose(xc.data, want, atol=1e-12)


def test_tokenize_resolution_mismatch(rng):
    bp = make_block(rng=rng)
    pair = FramePair(Tensor(np.zeros((8, 8, 4))), Tensor(np.zeros((8, 8, 4))))
    with pytest.raises(ShapeError):
        tokenize(pair, bp)


# ---------------------------------------------------------------------------
# preprocess


def test_preprocess_shared_path_equal_outputs(rng):
    bp = make_block(rng=rng)
    x = Tensor(rng.standard_normal((16, 4)))
    a, b = preprocess(x, x, bp)
    np.testing.assert_array_equal(a.data, b.data)


def test_preprocess_constant_channel_forced_by_affine(rng):
    bp = make_block(rng=rng)
    # per-token constant channels normalize to zero, so two different
    # constant inputs give the same downstream output
    x1 = Tensor(np.full((16, 4), 3.0))
    x2 = Tensor(np.full((16, 4), -1.5))
    _, o1 = preprocess(x1, x1, bp)
    _, o2 = preprocess(x2, x2, bp)
    np.testing.assert_allclose(o1.data, o2.data, atol=1e-12)


def test_preprocess_gradcheck(rng):
    bp = make_block(rng=rng)
    x = Tensor(rng.standard_normal((16, 4)))
    probe = Tensor(rng.standard_normal((16, 4)))

    def f():
        _, out = preprocess(x, x, bp)
        return T.sum_all(T.mul(out, probe))

    params = [("ln1_g", bp.ln1_g), ("dwc", bp.dwc_w), ("lin", bp.lin_w)]
    errs = gradcheck_params(f, params, samples_per_param=8, rng=rng)
    assert max(errs.values()) < 1e-4


# ---------------------------------------------------------------------------
# motion-difference weights


def test_imm_identical_frames_alpha_one_is_exactly_zero(rng):
    bp = make_block(rng=rng)
    bp.alpha = leaf(1.0)
    x = Tensor(rng.standard_normal((16, 4)))
    wm = imm_weights(x, x, bp)
    assert np.all(wm.data == 0.0)


def test_imm_alpha_zero_ignores_previous_frame(rng):
    bp = make_block(rng=rng)
    bp.alpha = leaf(0.0)
    xc = Tensor(rng.standard_normal((16, 4)))
    base = imm_weights(Tensor(rng.standard_normal((16, 4))), xc, bp)
    perturbed = imm_weights(Tensor(rng.standard_normal((16, 4)) * 100.0), xc, bp)
    np.testing.assert_array_equal(base.data, perturbed.data)


def test_imm_small_case_matches_matrix_oracle(rng):
    bp = make_block(H=2, C=2, rng=rng)  # N = 4, d = 2
    xp = rng.standard_normal((4, 2))
    xc = rng.standard_normal((4, 2))
    got = imm_weights(Tensor(xp), Tensor(xc), bp).data[0]
    qc, kc = xc @ bp.wq.data, xc @ bp.wk.data
    qp, kp = xp @ bp.wq.data, xp @ bp.wk.data
    pre = (qc @ kc.T) / np.sqrt(2) - 0.5 * (qp @ kp.T) / np.sqrt(2)
    want = pre / (1.0 + np.exp(-pre))
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_imm_swap_negates_pre_silu_difference(rng):
    bp = make_block(rng=rng)
    bp.alpha = leaf(1.0)
    xa = Tensor(rng.standard_normal((16, 4)))
    xb = Tensor(rng.standard_normal((16, 4)))

    def pre_silu(prev, curr):
        q = lambda x: x.data @ bp.wq.data
        k = lambda x: x.data @ bp.wk.data
        inv = 1.0 / np.sqrt(bp.d)
        return (q(curr) @ k(curr).T) * inv - (q(prev) @ k(prev).T) * inv

    np.testing.assert_array_equal(pre_silu(xa, xb), -pre_silu(xb, xa))


def test_imm_multi_head_shape(rng):
    bp = make_block(H=4, C=4, heads=2, rng=rng)
    wm = imm_weights(Tensor(rng.standard_normal((16, 4))),
                     Tensor(rng.standard_normal((16, 4))), bp)
    assert wm.shape == (2, 16, 16)


def test_imm_disabled_raises(rng):
    bp = make_block(rng=rng, imm=False)
    x = Tensor(rng.standard_normal((16, 4)))
    with pytest.raises(ShapeError):
        imm_weights(x, x, bp)


# ---------------------------------------------------------------------------
# gated linear attention


def test_attention_zero_values_gives_output_bias(rng):
    bp = make_block(rng=rng)
    bp.wv = Tensor(np.zeros((4, 4)))
    x = Tensor(rng.standard_normal((16, 4)))
    wm = imm_weights(x, T.scale(x, 0.5), bp)
    out = focus_attention(x, wm, bp)
    np.testing.assert_allclose(out.data, np.broadcast_to(bp.lo_b.data, (16, 4)),
                               atol=1e-15)


def test_attention_linear_order_matches_quadratic(rng):
    from bevsot.bench import linear_attention_quadratic
    bp = make_block(H=8, C=8, rng=np.random.default_rng(2))  # N=64, d=8
    x = rng.standard_normal((64, 8))
    q, k, v = x @ bp.wq.data, x @ bp.wk.data, x @ bp.wv.data
    silu = lambda z: z / (1.0 + np.exp(-z))
    linear_order = silu(q) @ (silu(k).T @ v)
    quad_order = linear_attention_quadratic(q, k, v)
    assert np.max(np.abs(linear_order - quad_order)) < 1e-9


def test_attention_gate_saturation_matches_ungated(rng):
    bp = make_block(rng=rng)
    x = Tensor(rng.standard_normal((16, 4)))
    xp = Tensor(rng.standard_normal((16, 4)))
    wm = imm_weights(xp, x, bp)
    bp.gate_w = Tensor(np.zeros((1, 16, 4)))
    bp.gate_b = Tensor(np.full((1, 4), 60.0))  # sigmoid(60) ~ 1
    gated = focus_attention(x, wm, bp)
    ungated = focus_attention(x, None, bp)
    np.testing.assert_allclose(gated.data, ungated.data, atol=1e-6)


def test_attention_gate_strictly_inside_unit_interval(rng):
    bp = make_block(rng=rng)
    x = Tensor(rng.standard_normal((16, 4)))
    wm = imm_weights(Tensor(rng.standard_normal((16, 4))), x, bp)
    gate = T.sigmoid(T.add(T.matmul(T.take(wm, 0), T.take(bp.gate_w, 0)),
                           T.take(bp.gate_b, 0)))
    assert np.all(gate.data > 0.0) and np.all(gate.data < 1.0)


def test_attention_multi_head_concat(rng):
    bp = make_block(H=4, C=4, heads=2, rng=rng)
    x = Tensor(rng.standard_normal((16, 4)))
    out = focus_attention(x, None, bp)
    assert out.shape == (16, 4)


# ---------------------------------------------------------------------------
# whole block


def test_block_residual_identity_when_branches_zeroed(rng):
    bp = make_block(rng=rng)
    bp.lo_w = Tensor(np.zeros((4, 4)))
    bp.lo_b = Tensor(np.zeros(4))
    bp.ffn2_w = Tensor(np.zeros((8, 4)))
    bp.ffn2_b = Tensor(np.zeros(4))
    pair = grids(rng)
    out = block_forward(pair, bp)
    _, x_curr = tokenize(pair, bp)
    np.testing.assert_array_equal(out.data, x_curr.data)


def test_block_no_imm_matches_ungated_bit_for_bit(rng):
    seed_rng = np.random.default_rng(5)
    gated = make_block(rng=seed_rng, imm=True)
    pair = grids(rng)
    # same weights, motion module absent
    ungated = BlockParams(**{
        f: getattr(gated, f) for f in (
            "H", "W", "C", "heads", "cnn_w", "cnn_b", "pos", "ln1_g", "ln1_b",
            "wq", "wk", "wv", "lo_w", "lo_b", "ln2_g", "ln2_b",
            "ffn1_w", "ffn1_b", "ffn2_w", "ffn2_b", "dwc_w", "lin_w", "lin_b")})
    out_off = block_forward(pair, ungated)
    # reference: attention with gate forced to exactly 1 via direct compute
    x_curr = tokenize(pair, gated)[1]
    xb_curr = preprocess(x_curr, x_curr, gated)[1]
    ref = T.add(focus_attention(xb_curr, None, gated), x_curr)
    ref = T.add(T.linear(T.silu(T.linear(T.layernorm(ref, gated.ln2_g, gated.ln2_b),
                                         gated.ffn1_w, gated.ffn1_b)),
                         gated.ffn2_w, gated.ffn2_b), ref)
    np.testing.assert_array_equal(out_off.data, ref.data)


def test_block_no_imm_independent_of_prev_frame(rng):
    bp = make_block(rng=rng, imm=False)
    curr = Tensor(rng.standard_normal((4, 4, 4)))
    out1 = block_forward(FramePair(Tensor(rng.standard_normal((4, 4, 4))), curr), bp)
    out2 = block_forward(FramePair(Tensor(np.zeros((4, 4, 4))), curr), bp)
    np.testing.assert_array_equal(out1.data, out2.data)


@pytest.mark.parametrize("kwargs", [dict(), dict(dwc=False), dict(linear=False),
                                    dict(dwc=False, linear=False, imm=False),
                                    dict(unshared=True), dict(heads=2)])
def test_block_gradcheck_all_params(rng, kwargs):
    bp = make_block(rng=np.random.default_rng(9), **kwargs)
    pair = grids(rng)
    probe = Tensor(rng.standard_normal((16, 4)))

    def f():
        return T.sum_all(T.mul(block_forward(pair, bp), probe))

    params = [(name, t) for name, t in vars(bp).items()
              if isinstance(t, Tensor) and t.requires_grad]
    errs = gradcheck_params(f, params, samples_per_param=4,
                            rng=np.random.default_rng(1))
    assert max(errs.values()) < 1e-4, errs


def test_block_unshared_uses_prev_copies(rng):
    bp = make_block(rng=np.random.default_rng(9), unshared=True)
    pair = grids(rng, identical=True)
    xp, xc = tokenize(pair, bp)
    # identical inputs now tokenize differently because weights differ
    assert np.any(xp.data != xc.data)
