import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import softmax as scipy_softmax

import canvaseg.autodiff as ad
from canvaseg.autodiff import Tensor

from oracles import conv2d_oracle, crop_oracle, paste_oracle


def rng_for(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel_passes_input_through():
    x = Tensor(rng_for(0).standard_normal((3, 3, 2)).astype(np.float32))
    kern = np.zeros((1, 1, 2, 2), dtype=np.float32)
    kern[0, 0, 0, 0] = 1.0
    kern[0, 0, 1, 1] = 1.0
    y = ad.conv2d(x, Tensor(kern), stride=1, padding="same")
    np.testing.assert_array_equal(y.data, x.data)


def test_conv_zero_input_gives_zero_output():
    x = Tensor(np.zeros((5, 4, 3), dtype=np.float32))
    kern = Tensor(rng_for(1).standard_normal((3, 3, 3, 2)).astype(np.float32))
    y = ad.conv2d(x, kern, stride=1, padding="same")
    assert not y.data.any()


def test_conv_4x4_same_padding_matches_nested_loop_oracle():
    rng = rng_for(2)
    x = rng.standard_normal((4, 4, 3))
    kern = rng.standard_normal((3, 3, 3, 2))
    y = ad.conv2d(Tensor(x), Tensor(kern), stride=1, padding="same")
    np.testing.assert_allclose(y.data, conv2d_oracle(x, kern), atol=1e-6)


@settings(max_examples=40)
@given(
    seed=st.integers(0, 2**32 - 1),
    h=st.integers(3, 8), w=st.integers(3, 8),
    cin=st.integers(1, 4), cout=st.integers(1, 4),
    k=st.sampled_from([1, 3]),
    stride=st.sampled_from([1, 2]),
    padding=st.sampled_from(["same", "valid"]),
)
def test_conv_matches_oracle_on_random_inputs(seed, h, w, cin, cout, k, stride, padding):
    rng = rng_for(seed)
    x = rng.standard_normal((h, w, cin))
    kern = rng.standard_normal((k, k, cin, cout))
    y = ad.conv2d(Tensor(x), Tensor(kern), stride=stride, padding=padding)
    np.testing.assert_allclose(y.data, conv2d_oracle(x, kern, stride, padding), atol=1e-6)


def test_conv_rejects_channel_mismatch():
    x = Tensor(np.zeros((4, 4, 3), dtype=np.float32))
    kern = Tensor(np.zeros((3, 3, 2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        ad.conv2d(x, kern)


def test_conv_rejects_even_kernel_and_bad_stride():
    x = Tensor(np.zeros((4, 4, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        ad.conv2d(x, Tensor(np.zeros((2, 2, 1, 1), dtype=np.float32)))
    with pytest.raises(ValueError):
        ad.conv2d(x, Tensor(np.zeros((3, 3, 1, 1), dtype=np.float32)), stride=0)


def test_conv_preserves_float64():
    x = Tensor(rng_for(3).standard_normal((4, 4, 2)))
    kern = Tensor(rng_for(4).standard_normal((3, 3, 2, 2)))
    assert ad.conv2d(x, kern).dtype == np.float64


# ---------------------------------------------------------- bilinear_crop

def test_crop_full_box_at_native_size_is_identity():
    src = rng_for(5).standard_normal((6, 7, 3)).astype(np.float32)
    y = ad.bilinear_crop(Tensor(src), (0.0, 0.0, 7.0, 6.0), 6, 7)
    np.testing.assert_array_equal(y.data, src)


@given(
    value=st.floats(-5, 5),
    x0=st.floats(-3, 5), y0=st.floats(-3, 5),
    dw=st.floats(0.5, 8), dh=st.floats(0.5, 8),
    oh=st.integers(1, 6), ow=st.integers(1, 6),
)
def test_crop_of_constant_source_is_constant(value, x0, y0, dw, dh, oh, ow):
    src = np.full((5, 6, 2), value, dtype=np.float32)
    y = ad.bilinear_crop(Tensor(src), (x0, y0, x0 + dw, y0 + dh), oh, ow)
    np.testing.assert_allclose(y.data, value, atol=1e-6)


def test_crop_ramp_hand_evaluated():
    # src[r,c] = 4r + c; box [0.5,0.5,2.5,2.5] sampled 2x2 puts the cell
    # centers at (1.0, 2.0) in each axis, i.e. quarter-way between pixel
    # centers, so every sample is the mean of a 2x2 pixel block.
    src = np.arange(16, dtype=np.float32).reshape(4, 4, 1)
    y = ad.bilinear_crop(Tensor(src), (0.5, 0.5, 2.5, 2.5), 2, 2)
    np.testing.assert_allclose(y.data[:, :, 0], [[2.5, 3.5], [6.5, 7.5]], atol=1e-6)


@settings(max_examples=40)
@given(
    seed=st.integers(0, 2**32 - 1),
    oh=st.integers(1, 7), ow=st.integers(1, 7),
)
def test_crop_matches_scipy_oracle(seed, oh, ow):
    rng = rng_for(seed)
    h, w, c = rng.integers(2, 9, 3)
    src = rng.standard_normal((h, w, c))
    x0 = rng.uniform(0, w - 0.6)
    y0 = rng.uniform(0, h - 0.6)
    box = (x0, y0, rng.uniform(x0 + 0.5, w), rng.uniform(y0 + 0.5, h))
    y = ad.bilinear_crop(Tensor(src), box, oh, ow)
    np.testing.assert_allclose(y.data, crop_oracle(src, box, oh, ow), atol=1e-9)


def test_crop_rejects_degenerate_box():
    src = Tensor(np.zeros((4, 4, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        ad.bilinear_crop(src, (1.0, 1.0, 1.0, 3.0), 2, 2)
    with pytest.raises(ValueError):
        ad.bilinear_crop(src, (1.0, 3.0, 2.0, 3.0), 2, 2)


# --------------------------------------------------------- bilinear_paste

def test_paste_full_canvas_is_identity_without_fill():
    patch = rng_for(6).standard_normal((5, 8)).astype(np.float32)
    y = ad.bilinear_paste(Tensor(patch), (0.0, 0.0, 8.0, 5.0), 5, 8, fill=-10000.0)
    np.testing.assert_array_equal(y.data, patch)


def test_paste_single_pixel_patch_fills_box_with_value():
    patch = Tensor(np.full((1, 1), 3.25, dtype=np.float32))
    y = ad.bilinear_paste(patch, (2.2, 1.4, 5.9, 4.1), 6, 8, fill=-1.0)
    covered = np.zeros((6, 8), dtype=bool)
    covered[1:5, 2:6] = True  # floor of each box edge, inclusive
    assert (y.data[covered] == 3.25).all()
    assert (y.data[~covered] == -1.0).all()


def test_paste_then_crop_on_aligned_grid_recovers_patch():
    rng = rng_for(7)
    for _ in range(10):
        ph, pw = rng.integers(2, 7, 2)
        ch = int(rng.integers(ph + 2, 16))
        cw = int(rng.integers(pw + 2, 16))
        r0 = int(rng.integers(0, ch - ph))
        c0 = int(rng.integers(0, cw - pw))
        box = (float(c0), float(r0), float(c0 + pw), float(r0 + ph))
        patch = rng.standard_normal((ph, pw)).astype(np.float32)
        canvas = ad.bilinear_paste(Tensor(patch), box, ch, cw, fill=-10000.0)
        back = ad.bilinear_crop(
            Tensor(canvas.data[:, :, None]), box, ph, pw)
        np.testing.assert_allclose(back.data[:, :, 0], patch, atol=1e-4)


@settings(max_examples=40)
@given(seed=st.integers(0, 2**32 - 1))
def test_paste_matches_per_pixel_oracle(seed):
    rng = rng_for(seed)
    ph, pw = rng.integers(1, 7, 2)
    ch, cw = rng.integers(3, 14, 2)
    patch = rng.standard_normal((ph, pw))
    x0 = rng.uniform(0, cw - 0.6)
    y0 = rng.uniform(0, ch - 0.6)
    box = (x0, y0, rng.uniform(x0 + 0.5, cw), rng.uniform(y0 + 0.5, ch))
    y = ad.bilinear_paste(Tensor(patch), box, ch, cw, fill=-10000.0)
    np.testing.assert_allclose(y.data, paste_oracle(patch, box, ch, cw, -10000.0), atol=1e-9)


def test_paste_rejects_degenerate_box():
    patch = Tensor(np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        ad.bilinear_paste(patch, (3.0, 1.0, 3.0, 4.0), 6, 6, fill=0.0)


# -------------------------------------------------------- channel_softmax

def test_softmax_single_channel_is_one():
    x = Tensor(rng_for(8).standard_normal((4, 5, 1)).astype(np.float32))
    y = ad.channel_softmax(x)
    np.testing.assert_array_equal(y.data, np.ones((4, 5, 1), dtype=np.float32))


def test_softmax_equal_pair_splits_evenly():
    x = Tensor(np.zeros((1, 1, 2), dtype=np.float32))
    np.testing.assert_allclose(ad.channel_softmax(x).data, 0.5)


def test_softmax_large_logits_match_high_precision_oracle():
    x = np.array([[[1000.0, 1000.0, 999.0]]], dtype=np.float32)
    y = ad.channel_softmax(Tensor(x))
    expected = scipy_softmax(x.astype(np.float64), axis=-1)
    assert np.isfinite(y.data).all()
    np.testing.assert_allclose(y.data, expected, atol=1e-6)


@given(
    seed=st.integers(0, 2**32 - 1),
    magnitude=st.sampled_from([1.0, 10.0, 1000.0, 1e6]),
    n=st.integers(1, 8),
)
def test_softmax_sums_to_one_per_pixel(seed, magnitude, n):
    rng = rng_for(seed)
    x = (rng.standard_normal((5, 4, n)) * magnitude).astype(np.float32)
    y = ad.channel_softmax(Tensor(x))
    np.testing.assert_allclose(y.data.sum(axis=2), 1.0, atol=1e-6)


# ------------------------------------------------- elementwise and shape ops

def test_gather_channels_picks_per_pixel_channel():
    rng = rng_for(9)
    x = rng.standard_normal((3, 4, 5)).astype(np.float32)
    idx = rng.integers(0, 5, (3, 4))
    y = ad.gather_channels(Tensor(x), idx)
    for r in range(3):
        for c in range(4):
            assert y.data[r, c] == x[r, c, idx[r, c]]


def test_gather_channels_rejects_out_of_range_index():
    x = Tensor(np.zeros((2, 2, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        ad.gather_channels(x, np.array([[0, 1], [2, 3]]))


def test_clamped_log_floors_small_values_and_zeroes_their_grads():
    x = Tensor(np.array([1e-20, 0.5, 2.0]), requires_grad=True)
    y = ad.clamped_log(x, floor=1e-12)
    assert y.data[0] == np.log(1e-12)
    ad.sum_all(y).backward()
    np.testing.assert_allclose(x.grad, [0.0, 2.0, 0.5])


def test_bce_matches_direct_formula_and_survives_huge_logits():
    rng = rng_for(10)
    z = rng.standard_normal((4, 4)) * 3
    t = rng.integers(0, 2, (4, 4)).astype(np.float64)
    y = ad.sigmoid_bce_with_logits(Tensor(z), t)
    direct = -(t * np.log(1 / (1 + np.exp(-z))) + (1 - t) * np.log(1 - 1 / (1 + np.exp(-z))))
    np.testing.assert_allclose(y.data, direct, atol=1e-9)
    big = ad.sigmoid_bce_with_logits(
        Tensor(np.array([[1000.0, -1000.0]])), np.array([[1.0, 0.0]]))
    np.testing.assert_allclose(big.data, 0.0, atol=1e-12)


def test_add_bias_broadcast_backward_sums_over_pixels():
    x = Tensor(rng_for(11).standard_normal((3, 4, 2)), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    ad.sum_all(ad.add(x, b)).backward()
    np.testing.assert_allclose(b.grad, [12.0, 12.0])
    np.testing.assert_allclose(x.grad, 1.0)


def test_concat_and_stack_roundtrip_gradients():
    a = Tensor(rng_for(12).standard_normal((2, 3, 2)), requires_grad=True)
    b = Tensor(rng_for(13).standard_normal((2, 3, 1)), requires_grad=True)
    y = ad.concat_channels([a, b])
    assert y.shape == (2, 3, 3)
    ad.sum_all(y).backward()
    np.testing.assert_allclose(a.grad, 1.0)
    np.testing.assert_allclose(b.grad, 1.0)

    p = Tensor(rng_for(14).standard_normal((4, 5)), requires_grad=True)
    q = Tensor(rng_for(15).standard_normal((4, 5)), requires_grad=True)
    s = ad.stack_channels([p, q])
    assert s.shape == (4, 5, 2)
    ad.sum_all(ad.mul(s, Tensor(np.ones((4, 5, 2))))).backward()
    np.testing.assert_allclose(p.grad, 1.0)


def test_mixed_dtypes_rejected():
    with pytest.raises(TypeError):
        ad.add(Tensor(np.zeros(3, dtype=np.float32)), Tensor(np.zeros(3)))


def test_reused_tensor_accumulates_gradient():
    x = Tensor(np.array([2.0]), requires_grad=True)
    ad.sum_all(ad.add(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0])


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.relu(x)
    assert y._backward_fn is None and y._parents == ()


def test_finite_check_catches_nonfinite_op_output():
    x = Tensor(np.ones((2, 2)))
    with pytest.raises(FloatingPointError):
        ad.scale(x, float("inf"))


# ------------------------------------------------------------ gradients

def test_gradient_check_sum_of_params_is_exact():
    params = [Tensor(rng_for(16).standard_normal((3, 3)), requires_grad=True)]

    def loss(ps):
        return ad.sum_all(ps[0])

    # linear loss: central differences carry no truncation error, so a
    # roomy epsilon keeps float64 round-off far below the 1e-10 bar
    assert ad.gradient_check(loss, params, epsilon=1e-3) < 1e-10
    assert params[0].grad is not None
    np.testing.assert_allclose(params[0].grad, 1.0)


def test_gradient_of_half_squared_norm_equals_params():
    p = Tensor(rng_for(17).standard_normal((4, 2)), requires_grad=True)

    def loss(ps):
        return ad.scale(ad.sum_all(ad.mul(ps[0], ps[0])), 0.5)

    err = ad.gradient_check(loss, [p], epsilon=1e-3)
    assert err < 1e-8
    np.testing.assert_allclose(p.grad, p.data, atol=1e-12)


def test_gradient_check_rejects_nonfinite_loss():
    p = Tensor(np.ones(2), requires_grad=True)

    def loss(ps):
        with ad.no_grad():
            bad = Tensor(np.array(np.inf))
        bad.requires_grad = True
        return bad

    with pytest.raises(FloatingPointError):
        ad.gradient_check(loss, [p], epsilon=1e-6)


def _probe(rng, t):
    w = rng.standard_normal(t.shape)
    return ad.sum_all(ad.mul(t, Tensor(np.asarray(w, t.dtype))))


def _case_conv_same(rng, ps):
    return _probe(rng, ad.conv2d(ps[0], ps[1], stride=1, padding="same"))


def _case_conv_valid_stride2(rng, ps):
    return _probe(rng, ad.conv2d(ps[0], ps[1], stride=2, padding="valid"))


def _case_crop(rng, ps):
    return _probe(rng, ad.bilinear_crop(ps[0], (0.7, 1.2, 4.3, 5.1), 3, 4))


def _case_paste(rng, ps):
    return _probe(rng, ad.bilinear_paste(ps[0], (1.3, 0.6, 6.2, 4.9), 6, 7, fill=-10000.0))


def _case_softmax(rng, ps):
    return _probe(rng, ad.channel_softmax(ps[0]))


def _case_relu(rng, ps):
    return _probe(rng, ad.relu(ps[0]))


def _case_bias(rng, ps):
    return _probe(rng, ad.add(ps[0], ps[1]))


def _case_gather(rng, ps):
    idx = np.random.default_rng(99).integers(0, ps[0].shape[2], ps[0].shape[:2])
    return _probe(rng, ad.gather_channels(ps[0], idx))


def _case_log(rng, ps):
    return _probe(rng, ad.clamped_log(ps[0]))


def _case_bce(rng, ps):
    t = np.random.default_rng(98).integers(0, 2, ps[0].shape).astype(np.float64)
    return ad.sum_all(ad.sigmoid_bce_with_logits(ps[0], t))


def _case_mean(rng, ps):
    return ad.mean_all(ps[0])


def _case_scale_add_n(rng, ps):
    return ad.scale(ad.sum_all(ad.add_n(list(ps))), 0.25)


GRADIENT_CASES = {
    "conv_same": (_case_conv_same, [((5, 4, 2), None), ((3, 3, 2, 3), None)]),
    "conv_valid_stride2": (_case_conv_valid_stride2, [((7, 6, 2), None), ((3, 3, 2, 2), None)]),
    "crop": (_case_crop, [((6, 5, 2), None)]),
    "paste": (_case_paste, [((3, 4), None)]),
    "softmax": (_case_softmax, [((4, 3, 5), None)]),
    "relu": (_case_relu, [((4, 4, 2), "offset")]),
    "bias": (_case_bias, [((3, 4, 5), None), ((5,), None)]),
    "gather": (_case_gather, [((4, 4, 3), None)]),
    "clamped_log": (_case_log, [((4, 3), "positive")]),
    "bce": (_case_bce, [((4, 3), None)]),
    "mean": (_case_mean, [((5, 5), None)]),
    "scale_add_n": (_case_scale_add_n, [((2, 3), None), ((2, 3), None), ((2, 3), None)]),
}


@pytest.mark.parametrize("name", sorted(GRADIENT_CASES))
def test_op_gradients_match_finite_differences(name):
    build, specs = GRADIENT_CASES[name]
    rng = rng_for(hash(name) % 2**31)
    params = []
    for shape, kind in specs:
        data = rng.standard_normal(shape)
        if kind == "offset":  # keep relu inputs away from the kink
            data = data + np.sign(data) * 0.1 + (data == 0) * 0.1
        elif kind == "positive":
            data = rng.uniform(0.2, 2.0, shape)
        params.append(Tensor(data, requires_grad=True))
    # fresh rng per call keeps loss_fn deterministic across re-evaluations
    err = ad.gradient_check(
        lambda ps: build(np.random.default_rng(1234), ps), params, epsilon=1e-5)
    assert err < 1e-5, f"{name}: max rel grad error {err}"


def test_full_pipeline_gradient_matches_finite_differences():
    rng = rng_for(20)
    image = Tensor(rng.standard_normal((8, 8, 2)))
    kern = Tensor(rng.standard_normal((3, 3, 2, 4)) * 0.5, requires_grad=True)
    bias = Tensor(np.zeros(4), requires_grad=True)
    boxes = [(0.8, 1.1, 6.9, 7.3), (2.0, 0.5, 7.5, 5.0)]
    labels = rng.integers(0, 2, (8, 8))
    weights = Tensor(rng.uniform(0.5, 2.0, (8, 8)))

    def loss(ps):
        feats = ad.relu(ad.add(ad.conv2d(image, ps[0], 1, "same"), ps[1]))
        planes = []
        for box in boxes:
            roi = ad.bilinear_crop(feats, box, 5, 5)
            flat = ad.gather_channels(roi, np.zeros((5, 5), dtype=int))
            planes.append(ad.bilinear_paste(flat, box, 8, 8, fill=-10000.0))
        probs = ad.channel_softmax(ad.stack_channels(planes))
        picked = ad.gather_channels(probs, labels)
        nll = ad.scale(ad.mul(weights, ad.clamped_log(picked)), -1.0)
        return ad.mean_all(nll)

    err = ad.gradient_check(loss, [kern, bias], epsilon=1e-5)
    assert err < 1e-5
