"""Full network: configuration, parameter construction, forward pass."""

from dataclasses import asdict, dataclass, replace

import numpy as np

from .dataset import BEHAVIOR_NAMES
from .enhancement import PredictionRecord, cl_sam, classify, mfem
from .errors import EngineError, ShapeError
from .ops import LSTM_GATES
from .perception import (BranchConfig, NUM_ATTENTION_SITES, NUM_BLOCKS,
                         crop_actor_features, fuse_branches, run_high_branch,
                         run_low_branch)
from .pipeline import HIGH_FRAMES, LOW_FRAMES
from .tensor import ParamSet, Tensor


@dataclass
class ModelConfig:
    image_size: int = 16
    in_channels: int = 3
    stem_channels: int = 8
    stem_stride: int = 2
    channels: tuple = (8, 16, 16, 32, 32)
    strides: tuple = (1, 2, 1, 2, 1)
    roi_size: int = 4
    lstm_hidden: int | None = None   # defaults to the final channel width
    classes: int = len(BEHAVIOR_NAMES)
    use_fl_sam: bool = True
    use_kmfem: bool = True
    use_cl_sam: bool = True
    use_mfem: bool = True

    @classmethod
    def desk(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides):
        base = dict(image_size=224, stem_channels=64, stem_stride=2,
                    channels=(64, 128, 256, 512, 512), strides=(1, 2, 2, 2, 2),
                    roi_size=7)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def preset(cls, name, **overrides):
        if name == "desk":
            return cls.desk(**overrides)
        if name == "paper":
            return cls.paper(**overrides)
        raise EngineError(f"unknown preset {name!r}")

    def branch(self):
        return BranchConfig(in_channels=self.in_channels,
                            stem_channels=self.stem_channels,
                            stem_stride=self.stem_stride,
                            channels=tuple(self.channels),
                            strides=tuple(self.strides),
                            roi_size=self.roi_size)

    @property
    def hidden(self):
        return self.lstm_hidden if self.lstm_hidden is not None else self.channels[-1]

    @property
    def toggles(self):
        return (self.use_fl_sam, self.use_kmfem, self.use_cl_sam, self.use_mfem)

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["strides"] = tuple(d["strides"])
        return cls(**d)

    def with_toggles(self, fl_sam, kmfem_on, cl_sam_on, mfem_on):
        return replace(self, use_fl_sam=fl_sam, use_kmfem=kmfem_on,
                       use_cl_sam=cl_sam_on, use_mfem=mfem_on)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except EngineError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


class Model:
    """Parameter set plus forward pass for one toggle configuration."""

    def __init__(self, config, seed=0):
        self.config = config
        self.params = ParamSet()
        self._build(np.random.default_rng(seed))

    # -- construction ---------------------------------------------------

    # Weights are He-style uniform (gain sqrt(6/fan_in), zero biases):
    # the network has no normalization layers, so a smaller init lets the
    # signal decay through the eleven-conv stacks and the sigmoid gates
    # until the head only ever learns class priors.
    def _uniform(self, rng, shape, fan_in):
        bound = np.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, shape))

    def _zeros(self, shape):
        return Tensor(np.zeros(shape))

    def _conv(self, rng, path, c_out, c_in, k):
        fan_in = c_in * k * k
        self.params.add(f"{path}.w", self._uniform(rng, (c_out, c_in, k, k), fan_in))
        self.params.add(f"{path}.b", self._zeros((c_out,)))

    def _branch(self, rng, name, cfg, attention):
        self._conv(rng, f"{name}.stem", cfg.stem_channels, cfg.in_channels, cfg.kernel)
        c_in = cfg.stem_channels
        for i in range(1, NUM_BLOCKS + 1):
            c_out = cfg.channels[i - 1]
            stride = cfg.strides[i - 1]
            self._conv(rng, f"{name}.b{i}.c1", c_out, c_in, cfg.kernel)
            self._conv(rng, f"{name}.b{i}.c2", c_out, c_out, cfg.kernel)
            if c_in != c_out or stride != 1:
                self._conv(rng, f"{name}.b{i}.proj", c_out, c_in, 1)
            c_in = c_out
        if attention is None:
            return
        for i in range(1, NUM_ATTENTION_SITES + 1):
            c = cfg.channels[i - 1]
            self._conv(rng, f"{name}.{attention}{i}.att", 1, c, cfg.kernel)
            if attention == "km":
                self._conv(rng, f"{name}.km{i}.motion", c, c, cfg.kernel)

    def _build(self, rng):
        cfg = self.config
        branch = cfg.branch()
        self._branch(rng, "low", branch, "sam" if cfg.use_fl_sam else None)
        self._branch(rng, "high", branch, "km" if cfg.use_kmfem else None)
        c = branch.out_channels
        hidden = cfg.hidden
        if cfg.use_mfem:
            fan_in = c + hidden
            for gate in LSTM_GATES:
                self.params.add(f"mfem.lstm.{gate}.wx", self._uniform(rng, (hidden, c), fan_in))
                self.params.add(f"mfem.lstm.{gate}.wh", self._uniform(rng, (hidden, hidden), fan_in))
                self.params.add(f"mfem.lstm.{gate}.b", self._zeros((hidden,)))
        else:
            self.params.add("mfem.proj.w", self._uniform(rng, (hidden, c), c))
            self.params.add("mfem.proj.b", self._zeros((hidden,)))
        head_in = c + hidden
        self.params.add("head.fc.w", self._uniform(rng, (cfg.classes, head_in), head_in))
        self.params.add("head.fc.b", self._zeros((cfg.classes,)))

    # -- forward ---------------------------------------------------------

    def _check_clip(self, name, tensor, frames):
        s = self.config.image_size
        expected = (frames, self.config.in_channels, s, s)
        if tensor.shape != expected:
            raise ShapeError(f"{name} clip shape {tensor.shape} != expected {expected}")

    def forward_tensors(self, low, high, actors, taps=None, relu=True, box_errors=None):
        """Forward from clip Tensors; returns [(SampleActor, score Tensor)]."""
        cfg = self.config
        branch = cfg.branch()
        self._check_clip("low", low, LOW_FRAMES)
        self._check_clip("high", high, HIGH_FRAMES)
        feat_low = _stage("low branch", run_low_branch, low, self.params.subset("low"),
                          branch, ablate_fl_sam=not cfg.use_fl_sam, relu=relu, taps=taps)
        feat_high = _stage("high branch", run_high_branch, high, self.params.subset("high"),
                           branch, ablate_kmfem=not cfg.use_kmfem, relu=relu, taps=taps)
        fused = _stage("fusion", fuse_branches, feat_low, feat_high)
        features = _stage("roi crop", crop_actor_features, fused, feat_high, actors,
                          cfg.roi_size, box_errors)
        by_id = {a.actor_id: a for a in actors}
        mfem_params = (self.params.subset("mfem.lstm") if cfg.use_mfem
                       else self.params.subset("mfem"))
        head_params = self.params.subset("head")
        out = []
        for af in features:
            gated = cl_sam(af.roi_low) if cfg.use_cl_sam else af.roi_low
            temporal = _stage("temporal embedding", mfem, af.roi_high, mfem_params,
                              ablate=not cfg.use_mfem)
            scores = _stage("head", classify, gated, temporal, head_params)
            out.append((by_id[af.actor_id], scores))
        return out

    def forward_sample(self, sample, taps=None):
        try:
            return self.forward_tensors(Tensor(sample.low), Tensor(sample.high),
                                        sample.actors, taps=taps)
        except EngineError as exc:
            raise type(exc)(f"sample {sample.video_id}@{sample.timestamp_s}: {exc}") from exc

    def predict(self, sample, taps=None):
        """PredictionRecords for every visible actor of one sample."""
        records = []
        for actor, scores in self.forward_sample(sample, taps=taps):
            # A confident model saturates the float64 sigmoid to exactly
            # 0 or 1; clamp with the same bound the loss uses so scores
            # stay strictly inside (0, 1).
            values = np.clip(scores.data, 1e-7, 1.0 - 1e-7)
            rec = PredictionRecord(sample.video_id, sample.timestamp_s, actor.actor_id,
                                   values, actor.target)
            rec.validate()
            records.append(rec)
        return records
