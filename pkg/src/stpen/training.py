"""Multi-label training loop with restart-cosine learning rate and
bit-exact checkpointing.

Determinism contract: two runs with identical seeds, data and config
produce byte-identical checkpoints, and resuming from any epoch
checkpoint reproduces the uninterrupted run exactly.  Checkpoints store
parameters, momentum buffers and the loader's generator state behind a
SHA-256 digest.
"""

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import BEHAVIOR_NAMES
from .errors import (CheckpointDigestError, CheckpointError,
                     CheckpointTruncatedError, CheckpointVersionError,
                     ConsistencyError, InvalidArgument, NonFiniteError)
from .model import Model, ModelConfig
from .ops import bce_multilabel_loss

CHECKPOINT_MAGIC = b"STPEN"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 0.001
    weight_decay: float = 0.02
    momentum: float = 0.9
    period: int = 60          # cosine annealing restarts every `period` epochs
    min_lr: float = 0.0
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.base_lr <= 0 or self.period < 1:
            raise InvalidArgument(f"invalid train config {self}")
        if self.min_lr < 0 or self.weight_decay < 0 or self.momentum < 0:
            raise InvalidArgument(f"invalid train config {self}")


def cosine_lr(epoch, cfg):
    """Cosine decay from base_lr to min_lr, restarting every period."""
    e = math.fmod(epoch, cfg.period)
    return cfg.min_lr + (cfg.base_lr - cfg.min_lr) * (1.0 + math.cos(math.pi * e / cfg.period)) / 2.0


def sgd_step(params, grads, lr, cfg, velocity):
    """Momentum SGD with decoupled weight decay, applied in path order."""
    for path, tensor in params.items():
        if path not in grads or grads[path] is None:
            raise ConsistencyError(f"missing gradient for parameter {path!r}")
        if cfg.weight_decay:
            tensor.data *= 1.0 - lr * cfg.weight_decay
        v = velocity.get(path)
        if v is None:
            v = np.zeros_like(tensor.data)
            velocity[path] = v
        v *= cfg.momentum
        v += grads[path]
        tensor.data -= lr * v


class SampleLoader:
    """Seeded, checkpointable shuffle order over a fixed sample list."""

    def __init__(self, samples, batch_size, seed):
        self.samples = list(samples)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def epoch_batches(self):
        order = self.rng.permutation(len(self.samples))
        batches = []
        for start in range(0, len(order), self.batch_size):
            batches.append([self.samples[i] for i in order[start:start + self.batch_size]])
        return batches

    @property
    def state(self):
        return self.rng.bit_generator.state

    @state.setter
    def state(self, value):
        self.rng.bit_generator.state = value


def batch_loss(model, batch):
    """Mean BCE over every visible actor in the batch, or None if empty."""
    losses = []
    for sample in batch:
        for actor, scores in model.forward_sample(sample):
            if actor.target is not None:
                losses.append(bce_multilabel_loss(scores, actor.target))
    if not losses:
        return None, 0
    total = losses[0]
    for term in losses[1:]:
        total = total + term
    return total * (1.0 / len(losses)), len(losses)


def train_epoch(model, loader, cfg, epoch, velocity):
    """One pass over the loader; returns the epoch stats row."""
    batches = loader.epoch_batches()
    loss_sum = 0.0
    record_count = 0
    sample_count = 0
    for b, batch in enumerate(batches):
        model.params.zero_grad()
        loss, n = batch_loss(model, batch)
        if loss is None:
            continue
        if not np.isfinite(loss.data):
            raise NonFiniteError(f"non-finite loss in epoch {epoch} batch {b}")
        loss.backward()
        grads = {path: t.grad for path, t in model.params.items()}
        lr = cosine_lr(epoch + b / len(batches), cfg)
        sgd_step(model.params, grads, lr, cfg, velocity)
        loss_sum += loss.item() * n
        record_count += n
        sample_count += len(batch)
    mean_loss = loss_sum / record_count if record_count else float("nan")
    return {"epoch": epoch, "mean_loss": mean_loss, "lr": cosine_lr(epoch, cfg),
            "samples": sample_count, "records": record_count}


# -- checkpointing -------------------------------------------------------


@dataclass
class Checkpoint:
    train_config: TrainConfig
    model_config: ModelConfig
    epoch: int                       # completed epochs
    params: dict
    velocity: dict
    rng_state: dict
    vocab: tuple = tuple(BEHAVIOR_NAMES)
    history: list = field(default_factory=list)
    version: int = CHECKPOINT_VERSION


def _state_to_json(state):
    # PCG64 state holds ints wider than 64 bits; JSON keeps them exact.
    return state


def save_checkpoint(path, ckpt):
    entries = []
    payload = bytearray()
    for kind, table in (("param", ckpt.params), ("velocity", ckpt.velocity)):
        for name in sorted(table):
            arr = np.asarray(table[name], dtype="<f8")
            entries.append({"kind": kind, "path": name, "shape": list(arr.shape)})
            payload += arr.tobytes()
    header = {
        "meta": {
            "train_config": asdict(ckpt.train_config),
            "model_config": ckpt.model_config.to_dict(),
            "epoch": ckpt.epoch,
            "rng_state": _state_to_json(ckpt.rng_state),
            "vocab": list(ckpt.vocab),
            "history": ckpt.history,
        },
        "entries": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (CHECKPOINT_MAGIC + struct.pack("<H", ckpt.version)
            + struct.pack("<Q", len(header_bytes)) + header_bytes + bytes(payload))
    with open(path, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    prefix = len(CHECKPOINT_MAGIC) + 2 + 8
    if len(blob) < prefix + 32:
        raise CheckpointTruncatedError(f"{path}: file too short ({len(blob)} bytes)")
    if blob[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:len(CHECKPOINT_MAGIC)]!r}")
    version = struct.unpack_from("<H", blob, len(CHECKPOINT_MAGIC))[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {version}, "
                                     f"expected {CHECKPOINT_VERSION}")
    header_len = struct.unpack_from("<Q", blob, len(CHECKPOINT_MAGIC) + 2)[0]
    if len(blob) < prefix + header_len + 32:
        raise CheckpointTruncatedError(f"{path}: header truncated")
    try:
        header = json.loads(blob[prefix:prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    payload_len = sum(8 * int(np.prod(e["shape"], dtype=np.int64)) if e["shape"] else 8
                      for e in header["entries"])
    expected = prefix + header_len + payload_len + 32
    if len(blob) < expected:
        raise CheckpointTruncatedError(f"{path}: {len(blob)} bytes, expected {expected}")
    if len(blob) != expected:
        raise CheckpointError(f"{path}: {len(blob) - expected} trailing bytes")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointDigestError(f"{path}: payload digest mismatch")

    meta = header["meta"]
    tables = {"param": {}, "velocity": {}}
    offset = prefix + header_len
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        tables[entry["kind"]][entry["path"]] = arr.reshape(shape).astype(np.float64)
    return Checkpoint(
        train_config=TrainConfig(**meta["train_config"]),
        model_config=ModelConfig.from_dict(meta["model_config"]),
        epoch=meta["epoch"],
        params=tables["param"],
        velocity=tables["velocity"],
        rng_state=meta["rng_state"],
        vocab=tuple(meta["vocab"]),
        history=meta["history"],
        version=version,
    )


def model_from_checkpoint(ckpt):
    model = Model(ckpt.model_config, seed=0)
    load_params(model, ckpt.params)
    return model


def load_params(model, table):
    expected = set(model.params.paths())
    got = set(table)
    if expected != got:
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        raise ConsistencyError(f"parameter paths differ: missing {missing}, extra {extra}")
    for path, tensor in model.params.items():
        arr = np.asarray(table[path], dtype=np.float64)
        if arr.shape != tensor.data.shape:
            raise ConsistencyError(f"parameter {path!r} shape {arr.shape} != "
                                   f"{tensor.data.shape}")
        tensor.data = arr.copy()


def export_params(model):
    return {path: tensor.data.copy() for path, tensor in model.params.items()}


def make_checkpoint(model, cfg, epoch, velocity, loader, history):
    return Checkpoint(
        train_config=cfg,
        model_config=model.config,
        epoch=epoch,
        params=export_params(model),
        velocity={p: v.copy() for p, v in velocity.items()},
        rng_state=loader.state,
        history=list(history),
    )


def fit(model, samples, cfg, out_dir=None, resume=None, log=None):
    """Train for cfg.epochs, optionally resuming and checkpointing.

    `resume` is a Checkpoint whose params/velocity/rng state replace the
    fresh ones, continuing after its completed epochs.  With `out_dir`,
    one checkpoint per epoch plus a CSV loss log are written there.
    Returns the full history of epoch stats.
    """
    loader = SampleLoader(samples, cfg.batch_size, cfg.seed)
    velocity = {}
    history = []
    start = 0
    if resume is not None:
        load_params(model, resume.params)
        velocity = {p: v.copy() for p, v in resume.velocity.items()}
        loader.state = resume.rng_state
        history = list(resume.history)
        start = resume.epoch
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for epoch in range(start, cfg.epochs):
        stats = train_epoch(model, loader, cfg, epoch, velocity)
        history.append(stats)
        if log is not None:
            log(stats)
        if out_dir is not None:
            ckpt = make_checkpoint(model, cfg, epoch + 1, velocity, loader, history)
            save_checkpoint(os.path.join(out_dir, f"epoch_{epoch + 1:03d}.ckpt"), ckpt)
            with open(os.path.join(out_dir, "train_log.csv"), "a", encoding="utf-8") as fh:
                if epoch == start:
                    fh.write("epoch,mean_loss,lr,samples,records\n")
                fh.write(f"{stats['epoch']},{stats['mean_loss']:.8f},{stats['lr']:.8f},"
                         f"{stats['samples']},{stats['records']}\n")
    return history
