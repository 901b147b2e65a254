"""Command-line entry points.

Modes: train, eval, infer, synth, validate, ablate.  Usage problems exit
with status 2, runtime failures with 1; diagnostics go to stderr and
results to files under --out (plus a short line on stdout).
"""

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .dataset import BEHAVIOR_NAMES, VOCAB, SplitManifest, parse_ava_csv, write_ava_csv
from .errors import EngineError, UsageError
from .evaluation import ablation_report, mean_ap
from .enhancement import write_prediction_csv
from .model import Model, ModelConfig
from .pipeline import FrameStore, build_sample
from .synthetic import build_suite, generate_synthetic_clip, suite_specs
from .training import (TrainConfig, fit, load_checkpoint, make_checkpoint,
                       model_from_checkpoint)

PARTITIONS = ("train", "val", "test")


@dataclass
class RunConfig:
    mode: str
    data: str | None = None
    synth: str | None = None
    checkpoint: str | None = None
    out: str = "stpen_out"
    split: str = "test"
    preset: str = "desk"
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    suite: str = "smoke"
    resume: str | None = None
    dump_attention: bool = False
    allow_undefined: bool = False
    interpolated: bool = False
    trials: int = 20

    def model_config(self):
        overrides = dict(self.model)
        unknown = set(overrides) - {f.name for f in fields(ModelConfig)}
        if unknown:
            raise UsageError(f"unknown model config keys {sorted(unknown)}")
        if "channels" in overrides:
            overrides["channels"] = tuple(overrides["channels"])
        if "strides" in overrides:
            overrides["strides"] = tuple(overrides["strides"])
        return ModelConfig.preset(self.preset, **overrides)

    def train_config(self):
        overrides = dict(self.train)
        unknown = set(overrides) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise UsageError(f"unknown train config keys {sorted(unknown)}")
        overrides.setdefault("seed", self.seed)
        return TrainConfig(**overrides)


_CONFIG_KEYS = {"mode", "data", "synth", "checkpoint", "out", "split", "preset",
                "seed", "model", "train", "suite"}


def _load_config_file(path, mode):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {sorted(unknown)}")
    if "mode" in doc and doc["mode"] != mode:
        raise UsageError(f"config {path} is for mode {doc['mode']!r}, not {mode!r}")
    doc.pop("mode", None)
    return doc


def build_run_config(args):
    base = {"mode": args.mode}
    if args.config:
        base.update(_load_config_file(args.config, args.mode))
    for key in ("data", "synth", "checkpoint", "out", "split", "preset", "seed",
                "suite", "resume", "dump_attention", "allow_undefined",
                "interpolated", "trials"):
        value = getattr(args, key, None)
        if value is not None:
            base[key] = value
    train = dict(base.get("train", {}))
    for key in ("epochs", "batch_size", "base_lr", "weight_decay", "momentum",
                "period", "min_lr"):
        value = getattr(args, key, None)
        if value is not None:
            train[key] = value
    base["train"] = train
    model = dict(base.get("model", {}))
    for flag, key in (("no_fl_sam", "use_fl_sam"), ("no_kmfem", "use_kmfem"),
                      ("no_cl_sam", "use_cl_sam"), ("no_mfem", "use_mfem")):
        if getattr(args, flag, False):
            model[key] = False
    base["model"] = model
    cfg = RunConfig(**base)
    if cfg.split not in PARTITIONS:
        raise UsageError(f"--split must be one of {PARTITIONS}, got {cfg.split!r}")
    return cfg


# -- data loading --------------------------------------------------------


def load_disk_samples(data_dir, partition, image_size):
    annotations = os.path.join(data_dir, "annotations.csv")
    split_path = os.path.join(data_dir, "split.tsv")
    for path in (annotations, split_path):
        if not os.path.exists(path):
            raise UsageError(f"data directory {data_dir} lacks {os.path.basename(path)}")
    clips = parse_ava_csv(annotations)
    manifest = SplitManifest.load(split_path)
    stores = {}
    samples = []
    for clip in clips:
        if manifest.assignment.get(clip.key) != partition:
            continue
        if clip.video_id not in stores:
            stores[clip.video_id] = FrameStore.open(
                os.path.join(data_dir, "frames", clip.video_id))
        samples.append(build_sample(stores[clip.video_id], clip, VOCAB, size=image_size))
    return samples


def load_samples(cfg, partition, image_size):
    if cfg.synth is not None:
        return build_suite(cfg.synth, cfg.seed, VOCAB, image_size)[partition]
    if cfg.data is not None:
        return load_disk_samples(cfg.data, partition, image_size)
    raise UsageError(f"mode {cfg.mode!r} needs --data or --synth")


# -- commands ------------------------------------------------------------


def cmd_train(cfg):
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    samples = load_samples(cfg, "train", model_cfg.image_size)
    resume = None
    model = Model(model_cfg, seed=cfg.seed)
    if cfg.resume:
        resume = load_checkpoint(cfg.resume)
        model = model_from_checkpoint(resume)
    history = fit(model, samples, train_cfg, out_dir=cfg.out, resume=resume)
    print(f"final_loss={history[-1]['mean_loss']:.6f}")
    return 0


def _predict_split(cfg, model, samples):
    records = []
    tap_index = {}
    for i, sample in enumerate(samples):
        taps = {} if cfg.dump_attention else None
        records.extend(model.predict(sample, taps=taps))
        if taps:
            att_dir = os.path.join(cfg.out, "attention")
            os.makedirs(att_dir, exist_ok=True)
            for key, grid in taps.items():
                name = f"{sample.video_id}_{sample.timestamp_s}_{key}.bin"
                grid.astype("<f8").tofile(os.path.join(att_dir, name))
                tap_index[name] = list(grid.shape)
    if tap_index:
        with open(os.path.join(cfg.out, "attention", "index.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(tap_index, fh, indent=1, sort_keys=True)
    return records


def _load_eval_model(cfg):
    if not cfg.checkpoint:
        raise UsageError(f"mode {cfg.mode!r} needs --checkpoint")
    ckpt = load_checkpoint(cfg.checkpoint)
    if ckpt.vocab != tuple(BEHAVIOR_NAMES):
        raise EngineError(f"checkpoint vocabulary {ckpt.vocab} does not match "
                          f"the dataset vocabulary")
    return model_from_checkpoint(ckpt)


def cmd_eval(cfg):
    model = _load_eval_model(cfg)
    samples = load_samples(cfg, cfg.split, model.config.image_size)
    os.makedirs(cfg.out, exist_ok=True)
    records = _predict_split(cfg, model, samples)
    write_prediction_csv(records, os.path.join(cfg.out, "predictions.csv"))
    report = mean_ap(records, interpolated=cfg.interpolated)
    report.to_csv(os.path.join(cfg.out, "eval_report.csv"))
    with open(os.path.join(cfg.out, "eval_report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text() + "\n")
    print(f"mAP={report.mean_ap:.6f}")
    if report.undefined and not cfg.allow_undefined:
        print(f"classes without positives: {', '.join(report.undefined)} "
              f"(pass --allow-undefined to accept)", file=sys.stderr)
        return 1
    return 0


def cmd_infer(cfg):
    model = _load_eval_model(cfg)
    samples = load_samples(cfg, cfg.split, model.config.image_size)
    for sample in samples:          # inference drops the targets
        for actor in sample.actors:
            actor.target = None
    os.makedirs(cfg.out, exist_ok=True)
    records = _predict_split(cfg, model, samples)
    write_prediction_csv(records, os.path.join(cfg.out, "predictions.csv"))
    print(f"records={len(records)}")
    return 0


def cmd_synth(cfg):
    os.makedirs(cfg.out, exist_ok=True)
    clips = []
    manifest = SplitManifest(seed=cfg.seed)
    for spec, partition in suite_specs(cfg.suite, cfg.seed):
        store, annotations = generate_synthetic_clip(spec)
        store.save(os.path.join(cfg.out, "frames", store.video_id))
        for clip in annotations:
            clips.append(clip)
            manifest.assignment[clip.key] = partition
    write_ava_csv(clips, os.path.join(cfg.out, "annotations.csv"))
    manifest.save(os.path.join(cfg.out, "split.tsv"))
    print(f"clips={len(clips)}")
    return 0


def cmd_ablate(cfg):
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    train_samples = load_samples(cfg, "train", model_cfg.image_size)
    test_samples = load_samples(cfg, "test", model_cfg.image_size)
    # full model, the four single-module-off variants, and the six
    # pairwise-on combinations.
    toggle_sets = [(True, True, True, True)]
    for i in range(4):
        toggles = [True] * 4
        toggles[i] = False
        toggle_sets.append(tuple(toggles))
    for i in range(4):
        for j in range(i + 1, 4):
            toggles = [False] * 4
            toggles[i] = toggles[j] = True
            toggle_sets.append(tuple(toggles))
    runs = []
    for toggles in toggle_sets:
        variant = model_cfg.with_toggles(*toggles)
        model = Model(variant, seed=cfg.seed)
        fit(model, train_samples, train_cfg)
        records = []
        for sample in test_samples:
            records.extend(model.predict(sample))
        runs.append((toggles, mean_ap(records)))
    table = ablation_report(runs)
    os.makedirs(cfg.out, exist_ok=True)
    table.to_csv(os.path.join(cfg.out, "ablation.csv"))
    with open(os.path.join(cfg.out, "ablation.txt"), "w", encoding="utf-8") as fh:
        fh.write(table.to_text() + "\n")
    print(table.to_text())
    return 0


def cmd_validate(cfg):
    from .validate import run_validation
    return run_validation(trials=cfg.trials)


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "synth": cmd_synth,
    "validate": cmd_validate,
    "ablate": cmd_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stpen", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--preset", choices=("desk", "paper"))
        p.add_argument("--out", help="output directory")

    def data_source(p):
        p.add_argument("--data", help="dataset directory (frames/, annotations.csv, split.tsv)")
        p.add_argument("--synth", help="built-in synthetic suite (smoke, benchmark)")

    def toggles(p):
        p.add_argument("--no-fl-sam", action="store_true", dest="no_fl_sam")
        p.add_argument("--no-kmfem", action="store_true", dest="no_kmfem")
        p.add_argument("--no-cl-sam", action="store_true", dest="no_cl_sam")
        p.add_argument("--no-mfem", action="store_true", dest="no_mfem")

    def train_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--lr", type=float, dest="base_lr")
        p.add_argument("--weight-decay", type=float, dest="weight_decay")
        p.add_argument("--momentum", type=float)
        p.add_argument("--period", type=int)

    p = sub.add_parser("train", help="train a model")
    common(p); data_source(p); toggles(p); train_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    for name in ("eval", "infer"):
        p = sub.add_parser(name, help=f"{name} a checkpoint on a split")
        common(p); data_source(p)
        p.add_argument("--checkpoint", required=False)
        p.add_argument("--split", choices=PARTITIONS)
        p.add_argument("--dump-attention", action="store_true", dest="dump_attention")
        p.add_argument("--allow-undefined", action="store_true", dest="allow_undefined")
        p.add_argument("--interpolated", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic dataset to disk")
    common(p)
    p.add_argument("--suite", choices=("smoke", "benchmark"))

    p = sub.add_parser("validate", help="run gradient and oracle self-checks")
    common(p)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("ablate", help="train/evaluate the module on/off grid")
    common(p); data_source(p); train_flags(p)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_run_config(args)
        return COMMANDS[cfg.mode](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
