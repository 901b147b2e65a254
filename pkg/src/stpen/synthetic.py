"""Seeded synthetic micro-videos for desk-scale verification.

Each clip is a static noise background plus one or more textured
rectangles following a scripted behavior.  Actors are filled with a
fixed random texture whose contrast tracks the rectangle size, so a
growing and a shrinking actor traverse the same set of frames in
opposite order: nothing but temporal order separates them, which is
what the motion-enhancement ablation is meant to detect.  Appearing and
vanishing texture pixels change sign randomly, so frame differences
carry no class-specific polarity either.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import ActorAnnotation, ClipAnnotation
from .errors import InvalidArgument, SpecError
from .pipeline import FrameStore, build_sample

SYNTH_BEHAVIORS = ("stationary", "move_right", "move_left", "grow", "shrink", "blink")

# Vocabulary class each scripted behavior is annotated as.  grow/shrink
# stand in for the posture transitions whose recognition depends on
# temporal order.
SYNTH_CLASS = {
    "stationary": "lying",
    "move_right": "move",
    "move_left": "walk",
    "grow": "stand_up",
    "shrink": "lie_down",
    "blink": "playwithtoy",
}

BLINK_PERIOD = 4   # frames on, then frames off
GROW_STEPS = 8     # grow/shrink hold each size for frames/GROW_STEPS frames


@dataclass
class ActorSpec:
    behavior: str
    speed: float = 1.0
    size: int | None = None          # base square side, default canvas // 4
    start: tuple | None = None       # top-left (x, y); grow/shrink: center


@dataclass
class SyntheticSpec:
    side: int
    actors: list
    seed: int = 0
    frames: int = 64
    fps: int = 16
    video_id: str = ""
    base_contrast: float = 0.45
    grow_contrast: tuple = (0.20, 0.45)
    noise: float = 0.02           # background amplitude around mid-gray
    texture_cell: int = 4         # texture block size in canvas pixels
    texture_seed: int | None = None  # share one texture field across clips

    def __post_init__(self):
        if not self.video_id:
            self.video_id = f"synth{self.seed:06d}"
        if self.frames % 2 or (self.frames // 2) % self.fps:
            raise InvalidArgument(
                f"frames={self.frames} fps={self.fps} leave no integer-second keyframe")

    @property
    def keyframe(self):
        return self.frames // 2

    @property
    def timestamp_s(self):
        return self.keyframe // self.fps


def _grow_sizes(base, frames):
    # A staircase rather than a per-frame ramp: within each step both
    # dual-rate branches then sample identical frame multisets for the
    # forward and the reversed clip, so only temporal order (not any
    # frame statistic) separates growing from shrinking.
    if frames % GROW_STEPS:
        raise InvalidArgument(f"grow/shrink need frames divisible by {GROW_STEPS}")
    lo, hi = 0.5 * base, 1.6 * base
    levels = lo + (hi - lo) * np.arange(GROW_STEPS) / (GROW_STEPS - 1)
    return np.repeat(levels, frames // GROW_STEPS)


def _place(spec, actor, rng):
    """Pick a start position; the same draws happen for every behavior so
    equal seeds give equal placements regardless of the script."""
    u, v = rng.random(2)
    side = spec.side
    size = actor.size if actor.size is not None else side // 4
    margin = 2
    travel = actor.speed * (spec.frames - 1)
    if actor.behavior in ("grow", "shrink"):
        half = _grow_sizes(size, spec.frames).max() / 2.0
        lo, hi = margin + half, side - margin - half
        if actor.start is not None:
            cx, cy = actor.start
        else:
            cx, cy = lo + u * (hi - lo), lo + v * (hi - lo)
        if not (lo <= cx <= hi and lo <= cy <= hi):
            raise SpecError(f"{actor.behavior} actor at {(cx, cy)} cannot fit canvas {side}")
        return (cx, cy), size
    x_lo, x_hi = margin, side - margin - size
    if actor.behavior == "move_right":
        x_hi -= travel
    elif actor.behavior == "move_left":
        x_lo += travel
    y_lo, y_hi = margin, side - margin - size
    if actor.start is not None:
        x0, y0 = actor.start
    else:
        x0, y0 = x_lo + u * (x_hi - x_lo), y_lo + v * (y_hi - y_lo)
    if not (x_lo <= x0 <= x_hi and y_lo <= y0 <= y_hi):
        raise SpecError(f"{actor.behavior} actor at {(x0, y0)} cannot fit canvas {side} "
                        f"(valid x [{x_lo}, {x_hi}], y [{y_lo}, {y_hi}])")
    return (x0, y0), size


def _trajectory(spec, actor, origin, size):
    """Per-frame (rect, contrast, visible); rect is float (x1, y1, x2, y2)."""
    frames = spec.frames
    c0, c1 = spec.grow_contrast
    out = []
    if actor.behavior in ("grow", "shrink"):
        sizes = _grow_sizes(size, frames)
        if actor.behavior == "shrink":
            sizes = sizes[::-1]
        cx, cy = origin
        for t in range(frames):
            s = sizes[t]
            contrast = c0 + (c1 - c0) * (s - sizes.min()) / (sizes.max() - sizes.min())
            out.append(((cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2), contrast, True))
        return out
    x0, y0 = origin
    for t in range(frames):
        if actor.behavior == "move_right":
            x = x0 + actor.speed * t
        elif actor.behavior == "move_left":
            x = x0 - actor.speed * t
        else:
            x = x0
        visible = actor.behavior != "blink" or (t // BLINK_PERIOD) % 2 == 0
        out.append(((x, y0, x + size, y0 + size), spec.base_contrast, visible))
    return out


def _pixel_rect(rect, side):
    x1, y1, x2, y2 = rect
    ix1 = max(0, int(round(x1)))
    iy1 = max(0, int(round(y1)))
    ix2 = min(side, int(round(x2)))
    iy2 = min(side, int(round(y2)))
    return ix1, iy1, ix2, iy2


def _background_and_texture(spec, rng):
    side = spec.side
    background = 0.5 + spec.noise * (2.0 * rng.random((3, side, side)) - 1.0)
    cells = max(1, side // spec.texture_cell)
    texture_rng = rng if spec.texture_seed is None else np.random.default_rng(spec.texture_seed)
    coarse = texture_rng.random((3, cells, cells))
    texture = np.repeat(np.repeat(coarse, spec.texture_cell, axis=1),
                        spec.texture_cell, axis=2)[:, :side, :side]
    return background, texture


def actor_tracks(spec):
    """Per-actor, per-frame normalized boxes (for occlusion checks)."""
    rng = np.random.default_rng(spec.seed)
    _background_and_texture(spec, rng)  # keep placement draws aligned
    tracks = []
    for actor in spec.actors:
        if actor.behavior not in SYNTH_BEHAVIORS:
            raise SpecError(f"unknown synthetic behavior {actor.behavior!r}")
        origin, size = _place(spec, actor, rng)
        track = []
        for rect, _, _ in _trajectory(spec, actor, origin, size):
            ix1, iy1, ix2, iy2 = _pixel_rect(rect, spec.side)
            track.append((ix1 / spec.side, iy1 / spec.side, ix2 / spec.side, iy2 / spec.side))
        tracks.append(track)
    return tracks


def generate_synthetic_clip(spec):
    """Render the clip; returns (FrameStore, [ClipAnnotation])."""
    side = spec.side
    rng = np.random.default_rng(spec.seed)
    background, texture = _background_and_texture(spec, rng)

    scripts = []
    for actor in spec.actors:
        if actor.behavior not in SYNTH_BEHAVIORS:
            raise SpecError(f"unknown synthetic behavior {actor.behavior!r}")
        origin, size = _place(spec, actor, rng)
        scripts.append(_trajectory(spec, actor, origin, size))

    frames = np.empty((spec.frames, 3, side, side))
    for t in range(spec.frames):
        frame = background.copy()
        for script in scripts:
            rect, contrast, visible = script[t]
            if not visible:
                continue
            ix1, iy1, ix2, iy2 = _pixel_rect(rect, side)
            if ix1 >= ix2 or iy1 >= iy2:
                continue
            patch = texture[:, iy1:iy2, ix1:ix2]
            frame[:, iy1:iy2, ix1:ix2] = 0.5 + (patch - 0.5) * (2.0 * contrast)
        frames[t] = frame

    store = FrameStore.from_array(spec.video_id, frames, fps=spec.fps)
    actors = []
    for actor_id, (actor, script) in enumerate(zip(spec.actors, scripts)):
        rect, _, _ = script[spec.keyframe]
        ix1, iy1, ix2, iy2 = _pixel_rect(rect, side)
        actors.append(ActorAnnotation(
            actor_id=actor_id,
            box=(ix1 / side, iy1 / side, ix2 / side, iy2 / side),
            behaviors={SYNTH_CLASS[actor.behavior]},
        ))
    annotation = ClipAnnotation(spec.video_id, spec.timestamp_s, actors)
    annotation.validate()
    return store, [annotation]


# -- built-in suites ----------------------------------------------------

SUITES = {
    # name: (canvas side, clips per partition)
    "smoke": (32, {"train": 8, "val": 2, "test": 2}),
    "benchmark": (64, {"train": 200, "val": 24, "test": 50}),
}


def suite_specs(name, seed=0):
    """Clip specs for a built-in suite: list of (SyntheticSpec, partition)."""
    if name not in SUITES:
        raise InvalidArgument(f"unknown synthetic suite {name!r}; have {sorted(SUITES)}")
    side, partitions = SUITES[name]
    # walk ("move widely") is a larger, faster sweep than move, so the two
    # horizontal directions also separate by size and speed; the grow and
    # shrink pair stays distinguishable only by temporal order.
    scale = side / 64.0
    shapes = {
        "move_right": dict(speed=0.45 * scale, size=round(14 * scale)),
        "move_left": dict(speed=0.5 * scale, size=round(24 * scale)),
    }
    specs = []
    index = 0
    for partition in ("train", "val", "test"):
        for _ in range(partitions[partition]):
            behavior = SYNTH_BEHAVIORS[index % len(SYNTH_BEHAVIORS)]
            spec = SyntheticSpec(
                side=side,
                actors=[ActorSpec(behavior=behavior, **shapes.get(behavior, {}))],
                seed=index + 1000003 * seed,
                video_id=f"{name}{index:04d}",
                texture_seed=seed,
            )
            specs.append((spec, partition))
            index += 1
    return specs


def build_suite(name, seed, vocab, image_size):
    """In-memory DualRateSamples for a suite, keyed by partition."""
    samples = {"train": [], "val": [], "test": []}
    for spec, partition in suite_specs(name, seed):
        store, clips = generate_synthetic_clip(spec)
        for clip in clips:
            samples[partition].append(build_sample(store, clip, vocab, size=image_size))
    return samples
