import numpy as np
import pytest

from stpen.errors import BoxError, InvalidArgument, ShapeError
from stpen.ops import conv2d
from stpen.perception import (BranchConfig, crop_actor_features, fl_sam,
                              fuse_branches, kmfem, residual_block,
                              run_high_branch, run_low_branch)
from stpen.pipeline import SampleActor
from stpen.model import Model, ModelConfig
from stpen.tensor import Tensor

import oracles


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def gate_params(channels, kernel=3, weight=None, bias=0.0):
    w = np.zeros((1, channels, kernel, kernel)) if weight is None else weight
    return {"att.w": T(w), "att.b": T(np.full(1, float(bias)))}


def motion_params(channels, kernel=3, identity=False):
    w = np.zeros((channels, channels, kernel, kernel))
    if identity:
        for c in range(channels):
            w[c, c, kernel // 2, kernel // 2] = 1.0
    return {"motion.w": T(w), "motion.b": T(np.zeros(channels))}


# -- fl_sam -------------------------------------------------------------------


def test_fl_sam_zero_parameters_halves_input():
    rng = np.random.default_rng(0)
    r = rng.normal(size=(2, 3, 4, 4))
    out = fl_sam(T(r), gate_params(3))
    assert np.array_equal(out.data, 0.5 * r)


def test_fl_sam_saturated_bias_passes_input():
    rng = np.random.default_rng(1)
    r = rng.normal(size=(2, 3, 4, 4))
    out = fl_sam(T(r), gate_params(3, bias=100.0))
    assert np.abs(out.data - r).max() < 1e-12


def test_fl_sam_scalar_hand_case():
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0  # only the center tap sees the 1x1 input under pad 1
    out = fl_sam(T(np.full((1, 1, 1, 1), 2.0)), {"att.w": T(w), "att.b": T([0.0])})
    gate = 1.0 / (1.0 + np.exp(-2.0))
    assert abs(gate - 0.880797) < 1e-6
    assert abs(out.data.item() - 2.0 * gate) < 1e-12
    assert abs(out.data.item() - 1.761594) < 1e-6


def test_fl_sam_output_bounded_by_input():
    rng = np.random.default_rng(2)
    r = rng.normal(size=(3, 2, 5, 5))
    params = {"att.w": T(rng.normal(size=(1, 2, 3, 3))), "att.b": T(rng.normal(size=1))}
    out = fl_sam(T(r), params)
    assert np.all(np.abs(out.data) <= np.abs(r) + 1e-15)


def test_fl_sam_exports_gate_map():
    taps = {}
    r = np.ones((2, 3, 4, 4))
    fl_sam(T(r), gate_params(3), taps=taps, tap_key="probe")
    assert taps["probe"].shape == (2, 1, 4, 4)
    assert np.all(taps["probe"] == 0.5)


# -- kmfem ---------------------------------------------------------------------


def test_kmfem_constant_input_reduces_to_gating():
    const = np.tile(np.arange(12.0).reshape(1, 3, 2, 2), (5, 1, 1, 1))
    rng = np.random.default_rng(3)
    params = {**gate_params(3), **motion_params(3)}
    params["motion.w"] = T(rng.normal(size=(3, 3, 3, 3)))  # motion conv irrelevant
    out = kmfem(T(const), params)
    gated = fl_sam(T(const), gate_params(3))
    assert np.array_equal(out.data, gated.data)


def test_kmfem_all_zero_parameters():
    rng = np.random.default_rng(4)
    f = rng.normal(size=(4, 2, 3, 3))
    out = kmfem(T(f), {**gate_params(2), **motion_params(2)})
    assert np.array_equal(out.data, 0.5 * f)


def test_kmfem_two_frame_hand_case():
    f = np.array([1.0, 3.0]).reshape(2, 1, 1, 1)
    params = {**gate_params(1), **motion_params(1, identity=True)}
    out = kmfem(T(f), params)
    assert out.data[0].item() == pytest.approx(0.5)
    assert out.data[1].item() == pytest.approx(2.5)  # 1.5 gated + 1.0 motion


def test_kmfem_needs_two_frames():
    with pytest.raises(InvalidArgument):
        kmfem(T(np.zeros((1, 2, 3, 3))), {**gate_params(2), **motion_params(2)})


# -- residual block ---------------------------------------------------------------


def zero_block(c_in, c_out, stride):
    params = {
        "c1.w": T(np.zeros((c_out, c_in, 3, 3))), "c1.b": T(np.zeros(c_out)),
        "c2.w": T(np.zeros((c_out, c_out, 3, 3))), "c2.b": T(np.zeros(c_out)),
    }
    if c_in != c_out or stride != 1:
        params["proj.w"] = T(np.zeros((c_out, c_in, 1, 1)))
        params["proj.b"] = T(np.zeros(c_out))
    return params


def test_residual_block_zero_convs_is_relu():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 4, 4))
    out = residual_block(T(x), zero_block(3, 3, 1), stride=1)
    assert np.array_equal(out.data, np.maximum(x, 0.0))


def test_residual_block_zero_input():
    out = residual_block(T(np.zeros((1, 2, 4, 4))), zero_block(2, 4, 2), stride=2)
    assert np.all(out.data == 0.0)


def test_residual_block_matches_composed_conv_oracle():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 2, 4, 4))
    params = {
        "c1.w": T(rng.normal(size=(3, 2, 3, 3))), "c1.b": T(rng.normal(size=3)),
        "c2.w": T(rng.normal(size=(3, 3, 3, 3))), "c2.b": T(rng.normal(size=3)),
        "proj.w": T(rng.normal(size=(3, 2, 1, 1))), "proj.b": T(rng.normal(size=3)),
    }
    out = residual_block(T(x), params, stride=2)
    y = oracles.conv2d_loop(x, params["c1.w"].data, params["c1.b"].data, 2, 1)
    y = np.maximum(y, 0.0)
    y = oracles.conv2d_loop(y, params["c2.w"].data, params["c2.b"].data, 1, 1)
    shortcut = oracles.conv2d_loop(x, params["proj.w"].data, params["proj.b"].data, 2, 0)
    ref = np.maximum(y + shortcut, 0.0)
    assert np.abs(out.data - ref).max() < 1e-12


# -- branch runners ------------------------------------------------------------------


def small_config():
    return ModelConfig(image_size=16, stem_channels=4, channels=(4, 4, 8, 8, 8),
                       strides=(1, 2, 1, 2, 1), roi_size=2, lstm_hidden=4)


def test_branch_output_shapes():
    cfg = small_config()
    model = Model(cfg, seed=0)
    rng = np.random.default_rng(7)
    low = T(rng.uniform(size=(8, 3, 16, 16)))
    high = T(rng.uniform(size=(16, 3, 16, 16)))
    out_low = run_low_branch(low, model.params.subset("low"), cfg.branch())
    out_high = run_high_branch(high, model.params.subset("high"), cfg.branch())
    assert out_low.shape == (8, 8, 2, 2)   # stem /2, block2 /2, block4 /2
    assert out_high.shape == (16, 8, 2, 2)


def test_ablated_branch_equals_plain_stack_bitwise():
    cfg = small_config()
    model = Model(cfg, seed=1)
    rng = np.random.default_rng(8)
    clip = T(rng.uniform(size=(8, 3, 16, 16)))
    params = model.params.subset("low")
    ablated = run_low_branch(clip, params, cfg.branch(), ablate_fl_sam=True)

    x = conv2d(clip, params["stem.w"], params["stem.b"], stride=2, pad=1)
    for i in range(1, 6):
        block = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith(f"b{i}.")}
        x = residual_block(x, block, cfg.branch().strides[i - 1])
    assert np.array_equal(ablated.data, x.data)


def test_zero_gates_scale_linear_stack_by_sixteenth():
    # With relu disabled, zero biases and zero attention convs, the four
    # 0.5 gates compose to a 1/16 scale of the ablated stack.
    cfg = small_config()
    model = Model(cfg, seed=2)
    for path, t in model.params.items():
        if path.startswith("low.sam") or path.endswith(".b"):
            t.data[:] = 0.0
    rng = np.random.default_rng(9)
    clip = T(rng.normal(size=(8, 3, 16, 16)))
    params = model.params.subset("low")
    full = run_low_branch(clip, params, cfg.branch(), relu=False)
    plain = run_low_branch(clip, params, cfg.branch(), ablate_fl_sam=True, relu=False)
    assert np.abs(full.data - plain.data / 16.0).max() < 1e-12


def test_high_branch_constant_clip_time_invariant():
    cfg = small_config()
    model = Model(cfg, seed=3)
    for path, t in model.params.items():
        if path.startswith("high.km"):
            t.data[:] = 0.0
    clip = T(np.tile(np.linspace(0, 1, 3 * 16 * 16).reshape(1, 3, 16, 16), (16, 1, 1, 1)))
    out = run_high_branch(clip, model.params.subset("high"), cfg.branch())
    for t in range(1, 16):
        assert np.array_equal(out.data[t], out.data[0])


def test_high_branch_motion_response_is_causal_and_localized():
    cfg = small_config()
    model = Model(cfg, seed=4)
    rng = np.random.default_rng(10)
    # One jump between frames 7 and 8: identical before, shifted after.
    frame_a = rng.uniform(size=(3, 16, 16))
    frame_b = np.roll(frame_a, 3, axis=2)
    clip = np.stack([frame_a] * 8 + [frame_b] * 8)
    params = model.params.subset("high")
    full = run_high_branch(T(clip), params, cfg.branch())
    plain = run_high_branch(T(clip), params, cfg.branch(), ablate_kmfem=True)
    diff = np.linalg.norm((full.data - plain.data).reshape(16, -1), axis=1)
    # Motion enters at t=8 (the zero frame shifts differences right by one).
    # Up to the jump the gated features match a static clip, so the offset is
    # constant; compare against the t=0 level.
    assert np.abs(diff[1:8] - diff[0]).max() < 1e-12
    assert diff[8] > diff[0] + 1e-6


# -- fusion and cropping ----------------------------------------------------------------


def test_fuse_branches_identities():
    rng = np.random.default_rng(11)
    low = rng.normal(size=(8, 4, 2, 2))
    high = rng.normal(size=(16, 4, 2, 2))
    assert np.array_equal(fuse_branches(T(low), T(np.zeros((16, 4, 2, 2)))).data, low)
    sub = fuse_branches(T(np.zeros((8, 4, 2, 2))), T(high)).data
    assert np.array_equal(sub, high[::2])
    fused = fuse_branches(T(low), T(high)).data
    for t in range(8):
        assert np.array_equal(fused[t], low[t] + high[2 * t])


def test_fuse_branches_shape_errors():
    with pytest.raises(ShapeError):
        fuse_branches(T(np.zeros((8, 4, 2, 2))), T(np.zeros((12, 4, 2, 2))))
    with pytest.raises(ShapeError):
        fuse_branches(T(np.zeros((8, 4, 2, 2))), T(np.zeros((16, 5, 2, 2))))


def actors(*boxes, hidden=()):
    out = []
    for i, box in enumerate(boxes):
        out.append(SampleActor(i, box, np.zeros(13), hidden=i in hidden))
    return out


def test_crop_full_image_box_is_identity():
    rng = np.random.default_rng(12)
    low = rng.normal(size=(8, 4, 3, 3))
    high = rng.normal(size=(16, 4, 3, 3))
    feats = crop_actor_features(T(low), T(high), actors((0.0, 0.0, 1.0, 1.0)), 3)
    assert len(feats) == 1
    assert np.array_equal(feats[0].roi_low.data, low)
    assert np.array_equal(feats[0].roi_high.data, high)


def test_crop_preserves_actor_order_and_skips_hidden():
    rng = np.random.default_rng(13)
    low = T(rng.normal(size=(8, 2, 4, 4)))
    high = T(rng.normal(size=(16, 2, 4, 4)))
    feats = crop_actor_features(low, high, actors((0.0, 0.0, 0.5, 0.5),
                                                  (0.2, 0.2, 0.9, 0.9),
                                                  (0.1, 0.1, 0.7, 0.7),
                                                  hidden=(1,)), 2)
    assert [f.actor_id for f in feats] == [0, 2]


def test_crop_constant_map_any_box():
    low = T(np.full((8, 2, 4, 4), 1.5))
    high = T(np.full((16, 2, 4, 4), -0.5))
    feats = crop_actor_features(low, high, actors((0.3, 0.1, 0.8, 0.6)), 4)
    assert np.allclose(feats[0].roi_low.data, 1.5, atol=1e-15)
    assert np.allclose(feats[0].roi_high.data, -0.5, atol=1e-15)


def test_crop_invalid_box_collected_others_processed():
    rng = np.random.default_rng(14)
    low = T(rng.normal(size=(8, 2, 4, 4)))
    high = T(rng.normal(size=(16, 2, 4, 4)))
    bad = actors((0.0, 0.0, 0.5, 0.5), (0.9, 0.2, 0.3, 0.8), (0.1, 0.1, 0.7, 0.7))
    errors = []
    feats = crop_actor_features(low, high, bad, 2, errors=errors)
    assert [f.actor_id for f in feats] == [0, 2]
    assert len(errors) == 1 and errors[0][0] == 1
    with pytest.raises(BoxError):
        crop_actor_features(low, high, bad, 2)
