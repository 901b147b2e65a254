"""Annotation parsing, the occlusion rule, and deterministic splits.

Two annotation formats are supported:

* AVA-style CSV, one behavior per row:
  ``video_id,timestamp,x1,y1,x2,y2,behavior_id,actor_id`` with
  coordinates as fractions of the frame.  Behavior ids 0..12 follow
  :data:`BEHAVIOR_NAMES`; id 13 is the reserved ``Hidden`` label.
* VIA rectangle exports (JSON), with per-region attributes carrying the
  actor id ("Category") and behavior name(s) ("behavior").  Pixel
  rectangles are normalized by the declared frame size.
"""

import csv
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (BoxError, InvalidArgument, ParseError, SplitSizeError,
                     UnsupportedShapeError, ValidationError, VocabError)

BEHAVIOR_NAMES = (
    "drink", "eat", "lying", "sitting", "stand", "move", "walk",
    "investigating", "playwithtoy", "fight", "nose-touch-pig",
    "stand_up", "lie_down",
)
HIDDEN = "Hidden"
HIDDEN_ID = len(BEHAVIOR_NAMES)  # 13
DEFAULT_FRAME_SIZE = (1280, 720)


class BehaviorVocab:
    """The 13 scoreable behavior classes plus the reserved Hidden label."""

    def __init__(self, names=BEHAVIOR_NAMES):
        self.names = tuple(names)
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def index(self, name):
        if name == HIDDEN:
            return HIDDEN_ID
        if name not in self._index:
            raise VocabError(f"unknown behavior name {name!r}")
        return self._index[name]

    def name(self, behavior_id):
        if behavior_id == HIDDEN_ID:
            return HIDDEN
        if not 0 <= behavior_id < len(self.names):
            raise VocabError(f"unknown behavior id {behavior_id}")
        return self.names[behavior_id]

    def encode(self, behaviors):
        """Multi-hot vector over the 13 classes; Hidden yields all zeros."""
        vec = np.zeros(len(self.names))
        for name in behaviors:
            if name != HIDDEN:
                vec[self.index(name)] = 1.0
        return vec


VOCAB = BehaviorVocab()


def validate_box(box):
    x1, y1, x2, y2 = box
    if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
        raise BoxError(f"invalid normalized box {box}")


@dataclass
class ActorAnnotation:
    actor_id: int
    box: tuple
    behaviors: set = field(default_factory=set)

    def validate(self):
        validate_box(self.box)
        if not self.behaviors:
            raise ValidationError(f"actor {self.actor_id} carries no behaviors")
        if HIDDEN in self.behaviors and len(self.behaviors) > 1:
            raise ValidationError(
                f"actor {self.actor_id} is Hidden but carries {self.behaviors}")

    @property
    def hidden(self):
        return HIDDEN in self.behaviors


@dataclass
class ClipAnnotation:
    video_id: str
    timestamp_s: int
    actors: list = field(default_factory=list)

    def validate(self):
        ids = [a.actor_id for a in self.actors]
        if len(ids) != len(set(ids)):
            raise ValidationError(
                f"duplicate actor id at {self.video_id}@{self.timestamp_s}")
        for actor in self.actors:
            actor.validate()

    @property
    def key(self):
        return (self.video_id, self.timestamp_s)


def _finish(grouped):
    clips = []
    for (video_id, ts), actors in grouped.items():
        clip = ClipAnnotation(video_id, ts, list(actors.values()))
        clip.validate()
        clips.append(clip)
    clips.sort(key=lambda clip: clip.key)
    return clips


def parse_ava_csv(path, vocab=VOCAB):
    """Read AVA-style rows into one ClipAnnotation per (video, timestamp)."""
    grouped = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 8:
                raise ParseError(f"{path} line {lineno}: expected 8 columns, got {len(row)}")
            try:
                video_id = row[0]
                ts = int(row[1])
                coords = tuple(float(v) for v in row[2:6])
                behavior_id = int(row[6])
                actor_id = int(row[7])
            except ValueError as exc:
                raise ParseError(f"{path} line {lineno}: {exc}") from None
            if not all(0.0 <= v <= 1.0 for v in coords):
                raise ValidationError(
                    f"{path} line {lineno}: coordinate outside [0, 1]: {coords}")
            if not (0 <= behavior_id <= HIDDEN_ID):
                raise VocabError(f"{path} line {lineno}: unknown behavior id {behavior_id}")
            actors = grouped.setdefault((video_id, ts), {})
            actor = actors.setdefault(actor_id, ActorAnnotation(actor_id, coords))
            if actor.box != coords:
                raise ValidationError(
                    f"{path} line {lineno}: actor {actor_id} has conflicting boxes")
            actor.behaviors.add(vocab.name(behavior_id))
    return _finish(grouped)


def write_ava_csv(clips, path, vocab=VOCAB):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for clip in sorted(clips, key=lambda c: c.key):
            for actor in sorted(clip.actors, key=lambda a: a.actor_id):
                for name in sorted(actor.behaviors, key=vocab.index):
                    writer.writerow([
                        clip.video_id, clip.timestamp_s,
                        *(f"{v:.6f}" for v in actor.box),
                        vocab.index(name), actor.actor_id,
                    ])


_FRAME_STEM = re.compile(r"^(?P<video>.+?)_(?P<ts>\d+)\.\w+$")


def _region_behaviors(attrs):
    value = attrs["behavior"]
    if isinstance(value, dict):
        # checkbox-style attribute: {"eat": true, "stand": true}
        return {k for k, v in value.items() if v}
    return {str(value)}


def parse_via_export(path, frame_size=DEFAULT_FRAME_SIZE, vocab=VOCAB):
    """Read a VIA rectangle export; one image entry per 1 Hz keyframe.

    Image filenames must look like ``<video>_<seconds>.<ext>``.  Pixel
    rectangles are normalized by `frame_size` (width, height).
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "_via_img_metadata" in doc:
        doc = doc["_via_img_metadata"]
    width, height = frame_size
    grouped = {}
    for entry_key, entry in doc.items():
        filename = entry.get("filename", entry_key)
        match = _FRAME_STEM.match(filename)
        if not match:
            raise ParseError(f"{path}: cannot derive video/timestamp from {filename!r}")
        video_id = match.group("video")
        ts = int(match.group("ts"))
        regions = entry.get("regions", [])
        if isinstance(regions, dict):
            regions = [regions[k] for k in sorted(regions)]
        actors = grouped.setdefault((video_id, ts), {})
        for region in regions:
            if "region_attributes" not in region:
                raise ParseError(f"{path}: region in {filename!r} lacks region_attributes")
            shape = region.get("shape_attributes", {})
            if shape.get("name") != "rect":
                raise UnsupportedShapeError(
                    f"{path}: region in {filename!r} has shape {shape.get('name')!r}")
            attrs = region["region_attributes"]
            if "behavior" not in attrs or "Category" not in attrs:
                raise ParseError(f"{path}: region in {filename!r} lacks Category/behavior")
            actor_id = int(attrs["Category"])
            box = (shape["x"] / width, shape["y"] / height,
                   (shape["x"] + shape["width"]) / width,
                   (shape["y"] + shape["height"]) / height)
            actor = actors.setdefault(actor_id, ActorAnnotation(actor_id, box))
            if actor.box != box:
                raise ValidationError(
                    f"{path}: actor {actor_id} in {filename!r} has conflicting boxes")
            for name in _region_behaviors(attrs):
                vocab.index(name)  # reject unknown names
                actor.behaviors.add(name)
    return _finish(grouped)


def write_via_export(clips, path, frame_size=DEFAULT_FRAME_SIZE):
    width, height = frame_size
    doc = {}
    for clip in sorted(clips, key=lambda c: c.key):
        filename = f"{clip.video_id}_{clip.timestamp_s:06d}.png"
        regions = []
        for actor in sorted(clip.actors, key=lambda a: a.actor_id):
            x1, y1, x2, y2 = actor.box
            regions.append({
                "shape_attributes": {
                    "name": "rect",
                    "x": x1 * width, "y": y1 * height,
                    "width": (x2 - x1) * width, "height": (y2 - y1) * height,
                },
                "region_attributes": {
                    "Category": str(actor.actor_id),
                    "behavior": (sorted(actor.behaviors)[0] if len(actor.behaviors) == 1
                                 else {name: True for name in sorted(actor.behaviors)}),
                },
            })
        doc[filename] = {"filename": filename, "regions": regions}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


# -- occlusion ---------------------------------------------------------


def _covered_fraction(target, others):
    """Fraction of `target`'s area covered by the union of `others`."""
    tx1, ty1, tx2, ty2 = target
    area = (tx2 - tx1) * (ty2 - ty1)
    clipped = []
    for (x1, y1, x2, y2) in others:
        cx1, cy1 = max(x1, tx1), max(y1, ty1)
        cx2, cy2 = min(x2, tx2), min(y2, ty2)
        if cx1 < cx2 and cy1 < cy2:
            clipped.append((cx1, cy1, cx2, cy2))
    if not clipped:
        return 0.0
    xs = sorted({v for b in clipped for v in (b[0], b[2])})
    ys = sorted({v for b in clipped for v in (b[1], b[3])})
    covered = 0.0
    for i in range(len(xs) - 1):
        for j in range(len(ys) - 1):
            # Cell corners come from box edges, so covering the cell
            # center means covering the whole cell.
            cx = (xs[i] + xs[i + 1]) / 2.0
            cy = (ys[j] + ys[j + 1]) / 2.0
            if any(b[0] <= cx <= b[2] and b[1] <= cy <= b[3] for b in clipped):
                covered += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
    return covered / area


def apply_hidden_rule(behaviors, target_track, other_tracks, keyframe_index,
                      spatial_thresh=2.0 / 3.0, temporal_thresh=2.0 / 3.0):
    """Replace `behaviors` with {Hidden} when the actor is occluded.

    A frame counts as occluded when the union of the other actors' boxes
    covers more than `spatial_thresh` of the target box.  The actor
    becomes Hidden if the keyframe itself is occluded, or if more than
    `temporal_thresh` of the window's frames are.
    """
    frames = len(target_track)
    if frames == 0:
        raise InvalidArgument("apply_hidden_rule: empty clip window")
    if not 0 <= keyframe_index < frames:
        raise InvalidArgument(f"keyframe index {keyframe_index} outside window of {frames}")
    occluded = []
    for f in range(frames):
        others = [track[f] for track in other_tracks]
        occluded.append(_covered_fraction(target_track[f], others) > spatial_thresh)
    if occluded[keyframe_index] or sum(occluded) / frames > temporal_thresh:
        return {HIDDEN}
    return set(behaviors)


# -- splits ------------------------------------------------------------


@dataclass
class SplitManifest:
    seed: int
    ratios: tuple = (7, 2, 1)
    assignment: dict = field(default_factory=dict)  # (video_id, ts) -> partition

    def keys_for(self, partition):
        return sorted(k for k, p in self.assignment.items() if p == partition)

    def sizes(self):
        counts = {"train": 0, "val": 0, "test": 0}
        for partition in self.assignment.values():
            counts[partition] += 1
        return counts

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for (video_id, ts), partition in sorted(self.assignment.items()):
                fh.write(f"{partition}\t{video_id}\t{ts}\n")

    @classmethod
    def load(cls, path, seed=0):
        manifest = cls(seed=seed)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or parts[0] not in ("train", "val", "test"):
                    raise ParseError(f"{path} line {lineno}: bad manifest row {line!r}")
                manifest.assignment[(parts[1], int(parts[2]))] = parts[0]
        return manifest


def split_dataset(clips, seed, by_video=False):
    """Shuffle keyframes with a seeded permutation and cut 70/20/10.

    Floors go to val and test, remainders to train, so 10 keyframes give
    (7, 2, 1).  `by_video` splits whole videos instead of keyframes.
    """
    if by_video:
        units = sorted({clip.video_id for clip in clips})
    else:
        units = sorted({clip.key for clip in clips})
    n = len(units)
    if n < 10:
        raise SplitSizeError(f"need at least 10 {'videos' if by_video else 'keyframes'}, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(n * 0.2)
    n_test = int(n * 0.1)
    n_train = n - n_val - n_test
    unit_part = {}
    for rank, unit_index in enumerate(order):
        if rank < n_train:
            partition = "train"
        elif rank < n_train + n_val:
            partition = "val"
        else:
            partition = "test"
        unit_part[units[unit_index]] = partition
    manifest = SplitManifest(seed=seed)
    for clip in clips:
        unit = clip.video_id if by_video else clip.key
        manifest.assignment[clip.key] = unit_part[unit]
    return manifest


def dataset_stats(clips):
    """Count (actor, keyframe) pairs per behavior; Hidden counted apart."""
    counts = {name: 0 for name in BEHAVIOR_NAMES}
    counts[HIDDEN] = 0
    for clip in clips:
        for actor in clip.actors:
            for name in actor.behaviors:
                counts[name] += 1
    return counts
