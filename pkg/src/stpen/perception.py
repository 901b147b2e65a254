"""Dual-rate perception network.

Both branches are five-block residual stacks over (T, C, H, W) frame
batches.  The low-rate branch (T=8) interleaves a frame-level spatial
attention gate after blocks 1-4; the high-rate branch (T=16) interleaves
a key-motion extractor at the same four points.  The branches fuse by
addition at the low rate and per-actor crops are taken from the fused
map and the high-rate map.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoxError, ShapeError
from .ops import broadcast_mul, conv2d, roi_align, temporal_difference, zero_prepend
from .tensor import Tensor

NUM_BLOCKS = 5
NUM_ATTENTION_SITES = 4  # after blocks 1-4


@dataclass
class BranchConfig:
    in_channels: int = 3
    stem_channels: int = 8
    stem_stride: int = 2
    channels: tuple = (8, 16, 16, 32, 32)
    strides: tuple = (1, 2, 1, 2, 1)
    roi_size: int = 4
    kernel: int = 3

    def __post_init__(self):
        if len(self.channels) != NUM_BLOCKS or len(self.strides) != NUM_BLOCKS:
            raise ShapeError(f"branch needs exactly {NUM_BLOCKS} residual blocks, got "
                             f"{len(self.channels)} channels / {len(self.strides)} strides")

    @property
    def out_channels(self):
        return self.channels[-1]


@dataclass
class ActorFeatures:
    actor_id: int
    roi_low: Tensor    # (8, C, P, P) from the fused low-rate map
    roi_high: Tensor   # (16, C, P, P) from the high-rate map


def _act(x, relu):
    return x.relu() if relu else x


def fl_sam(r, params, taps=None, tap_key=None):
    """Frame-level spatial attention: gate all channels of each frame by a
    sigmoid of a one-channel summary convolution."""
    cf = conv2d(r, params["att.w"], params["att.b"], stride=1, pad=1)
    gate = cf.sigmoid()
    if taps is not None:
        taps[tap_key] = gate.data.copy()
    return broadcast_mul(r, gate)


def kmfem(f, params, taps=None, tap_key=None):
    """Key-motion extraction: attention-gate the frames, difference the
    gated sequence, refine the motion with a convolution, and add it back
    (one zero frame restores the temporal length)."""
    feature = fl_sam(f, params, taps=taps, tap_key=tap_key)
    motion = temporal_difference(feature)
    refined = conv2d(motion, params["motion.w"], params["motion.b"], stride=1, pad=1)
    return feature + zero_prepend(refined)


def residual_block(x, params, stride, relu=True):
    """relu(conv2(relu(conv1(x))) + shortcut(x)); the shortcut is a 1x1
    projection when the channel count or stride changes."""
    y = conv2d(x, params["c1.w"], params["c1.b"], stride=stride, pad=1)
    y = _act(y, relu)
    y = conv2d(y, params["c2.w"], params["c2.b"], stride=1, pad=1)
    if "proj.w" in params:
        shortcut = conv2d(x, params["proj.w"], params["proj.b"], stride=stride, pad=0)
    else:
        shortcut = x
    return _act(y + shortcut, relu)


def _run_branch(clip, params, cfg, site, ablate, relu, taps, tap_prefix):
    x = conv2d(clip, params["stem.w"], params["stem.b"], stride=cfg.stem_stride, pad=1)
    for i in range(1, NUM_BLOCKS + 1):
        block = {k.split(".", 1)[1]: v for k, v in params.items()
                 if k.startswith(f"b{i}.")}
        x = residual_block(x, block, cfg.strides[i - 1], relu=relu)
        if i <= NUM_ATTENTION_SITES and not ablate:
            gate_params = {k.split(".", 1)[1]: v for k, v in params.items()
                           if k.startswith(f"{site}{i}.")}
            fn = fl_sam if site == "sam" else kmfem
            x = fn(x, gate_params, taps=taps, tap_key=f"{tap_prefix}{i}")
    return x


def run_low_branch(clip, params, cfg, ablate_fl_sam=False, relu=True, taps=None):
    """(8, 3, S, S) -> (8, C5, h, w); with the ablation flag the four
    attention gates are skipped entirely."""
    return _run_branch(clip, params, cfg, "sam", ablate_fl_sam, relu, taps, "low.sam")


def run_high_branch(clip, params, cfg, ablate_kmfem=False, relu=True, taps=None):
    """(16, 3, S, S) -> (16, C5, h, w); mirrors the low branch with the
    key-motion extractor at the four insertion points."""
    return _run_branch(clip, params, cfg, "km", ablate_kmfem, relu, taps, "high.km")


def fuse_branches(low, high):
    """fused[t] = low[t] + high[2t]; requires matching channels/space and
    a high branch exactly twice as long."""
    if low.ndim != 4 or high.ndim != 4:
        raise ShapeError(f"fuse_branches expects 4-d maps, got {low.shape}, {high.shape}")
    if high.shape[0] != 2 * low.shape[0]:
        raise ShapeError(f"high branch must be 2x the low frame count: {low.shape[0]} "
                         f"vs {high.shape[0]}")
    if low.shape[1:] != high.shape[1:]:
        raise ShapeError(f"fusion shape mismatch: low {low.shape} vs high {high.shape}")
    return low + high[::2]


def crop_actor_features(fused_low, high, actors, roi_size, errors=None):
    """ROI-crop both maps for every visible actor.

    Hidden actors are skipped.  An invalid box skips that actor and
    appends (actor_id, message) to `errors` if given; the remaining
    actors are still processed.
    """
    features = []
    for actor in actors:
        if actor.hidden:
            continue
        try:
            features.append(ActorFeatures(
                actor_id=actor.actor_id,
                roi_low=roi_align(fused_low, actor.box, roi_size),
                roi_high=roi_align(high, actor.box, roi_size),
            ))
        except BoxError as exc:
            if errors is None:
                raise
            errors.append((actor.actor_id, str(exc)))
    return features
