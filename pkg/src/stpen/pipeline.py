"""Frame stores and dual-rate clip sampling.

A clip window of 64 raw frames centered on the keyframe feeds both
branches: the high-rate branch takes every 4th frame (16 frames), the
low-rate branch every 8th (8 frames), so each low frame is also a high
frame.  Frames are resized to S x S with bilinear interpolation and kept
as float64 arrays in [0, 1].
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import InvalidArgument, ParseError, WindowError

WINDOW = 64
LOW_FRAMES = 8
HIGH_FRAMES = 16


class FrameStore:
    """Sequence of RGB frames, either in memory or as a PNG directory."""

    def __init__(self, video_id, fps, count, width, height, frames=None, directory=None):
        self.video_id = video_id
        self.fps = fps
        self.count = count
        self.width = width
        self.height = height
        self._frames = frames
        self._directory = directory

    @classmethod
    def from_array(cls, video_id, frames, fps=30):
        frames = np.asarray(frames, dtype=np.float64)
        count, channels, height, width = frames.shape
        if channels != 3:
            raise InvalidArgument(f"frames must be (N, 3, H, W), got {frames.shape}")
        return cls(video_id, fps, count, width, height, frames=frames)

    @classmethod
    def open(cls, directory):
        manifest_path = os.path.join(directory, "manifest.json")
        try:
            with open(manifest_path, encoding="utf-8") as fh:
                meta = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ParseError(f"cannot read frame store manifest {manifest_path}: {exc}") from None
        for key in ("video_id", "fps", "count", "width", "height"):
            if key not in meta:
                raise ParseError(f"{manifest_path}: missing {key!r}")
        return cls(meta["video_id"], meta["fps"], meta["count"],
                   meta["width"], meta["height"], directory=directory)

    def frame(self, index):
        """RGB frame as (3, H, W) float64 in [0, 1]."""
        if not 0 <= index < self.count:
            raise InvalidArgument(f"frame index {index} outside [0, {self.count})")
        if self._frames is not None:
            return self._frames[index]
        path = os.path.join(self._directory, f"frame_{index:05d}.png")
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
        return arr.transpose(2, 0, 1)

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        for i in range(self.count):
            arr = np.clip(self.frame(i), 0.0, 1.0)
            img = Image.fromarray((arr * 255.0).round().astype(np.uint8).transpose(1, 2, 0))
            img.save(os.path.join(directory, f"frame_{i:05d}.png"))
        meta = {"video_id": self.video_id, "fps": self.fps, "count": self.count,
                "width": self.width, "height": self.height}
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)

    def keyframe_index(self, timestamp_s):
        return int(round(timestamp_s * self.fps))


@dataclass
class SampleActor:
    actor_id: int
    box: tuple
    target: np.ndarray | None  # 13-dim multi-hot; None for Hidden actors
    hidden: bool = False


@dataclass
class DualRateSample:
    low: np.ndarray            # (8, 3, S, S)
    high: np.ndarray           # (16, 3, S, S)
    actors: list = field(default_factory=list)
    video_id: str = ""
    timestamp_s: int = 0


def resize_bilinear(image, size):
    """Resize (3, H, W) to (3, size, size) on the normalized grid.

    Sample positions include the corners, so size == H == W is exact
    identity and outputs never leave the source value range.
    """
    channels, height, width = image.shape
    if height < 2 or width < 2:
        raise InvalidArgument(f"resize_bilinear needs H, W >= 2, got {image.shape}")
    if size == height and size == width:
        return image.copy()

    def axis(extent):
        if size == 1:
            pos = np.array([(extent - 1) / 2.0])
        else:
            pos = np.arange(size) * (extent - 1) / (size - 1)
        base = np.clip(np.floor(pos).astype(np.intp), 0, extent - 2)
        return base, pos - base

    v0, dv = axis(height)
    u0, du = axis(width)
    dv = dv[:, None]
    du = du[None, :]
    m = image
    out = ((1 - dv) * (1 - du) * m[:, v0[:, None], u0[None, :]]
           + (1 - dv) * du * m[:, v0[:, None], u0[None, :] + 1]
           + dv * (1 - du) * m[:, v0[:, None] + 1, u0[None, :]]
           + dv * du * m[:, v0[:, None] + 1, u0[None, :] + 1])
    return out


def dual_rate_indices(store_count, keyframe_index, window=WINDOW,
                      low_frames=LOW_FRAMES, high_frames=HIGH_FRAMES):
    """Raw frame indices for both branches, shifted to fit the store."""
    if store_count < window:
        raise WindowError(f"store has {store_count} frames, window needs {window}")
    if window % high_frames or window % low_frames:
        raise InvalidArgument(f"window {window} not divisible by branch lengths")
    start = min(max(keyframe_index - window // 2, 0), store_count - window)
    high_stride = window // high_frames
    low_stride = window // low_frames
    high = [start + i * high_stride for i in range(high_frames)]
    low = [start + i * low_stride for i in range(low_frames)]
    return low, high


def sample_dual_rate(store, keyframe_index, actors=(), window=WINDOW,
                     low_frames=LOW_FRAMES, high_frames=HIGH_FRAMES, size=224,
                     video_id=None, timestamp_s=0):
    """Build a DualRateSample around one keyframe."""
    low_idx, high_idx = dual_rate_indices(store.count, keyframe_index,
                                          window, low_frames, high_frames)
    resized = {}
    for i in sorted(set(low_idx + high_idx)):
        resized[i] = resize_bilinear(store.frame(i), size)
    return DualRateSample(
        low=np.stack([resized[i] for i in low_idx]),
        high=np.stack([resized[i] for i in high_idx]),
        actors=list(actors),
        video_id=store.video_id if video_id is None else video_id,
        timestamp_s=timestamp_s,
    )


def build_sample(store, clip, vocab, size=224, window=WINDOW):
    """Turn one ClipAnnotation plus its frame store into a sample."""
    actors = []
    for actor in clip.actors:
        hidden = actor.hidden
        actors.append(SampleActor(
            actor_id=actor.actor_id,
            box=actor.box,
            target=None if hidden else vocab.encode(actor.behaviors),
            hidden=hidden,
        ))
    return sample_dual_rate(
        store, store.keyframe_index(clip.timestamp_s), actors,
        window=window, size=size, timestamp_s=clip.timestamp_s,
    )
