"""Per-class average precision, mAP reports, and ablation tables.

AP follows the rank-sum definition: records are sorted by the class
score descending (ties broken by record identity so permuting the input
never changes the result), and AP = sum over ranks j of
(R(j) - R(j-1)) * P(j) with R(0) = 0.  An interpolated variant
(precision replaced by the running maximum over the tail) is available
behind a flag.  Classes without ground-truth positives are undefined;
they are excluded from the mAP mean and listed in the report.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import BEHAVIOR_NAMES
from .errors import DuplicateConfigError, EmptyEvalError, UndefinedClassError, ValidationError


def _require_targets(records):
    for rec in records:
        if rec.targets is None:
            raise ValidationError(f"record {rec.video_id}@{rec.timestamp_s} actor "
                                  f"{rec.actor_id} has no targets")


def _ranked(records, class_index):
    return sorted(records, key=lambda r: (-r.scores[class_index], r.video_id,
                                          r.timestamp_s, r.actor_id))


def pr_points(records, class_index):
    """(precision, recall) after each rank, treating the top-j as positive."""
    if not records:
        raise UndefinedClassError(f"class {class_index}: no records")
    _require_targets(records)
    ranked = _ranked(records, class_index)
    labels = np.array([r.targets[class_index] for r in ranked])
    positives = labels.sum()
    if positives == 0:
        raise UndefinedClassError(f"class {class_index}: no ground-truth positives")
    tp = np.cumsum(labels)
    ranks = np.arange(1, len(ranked) + 1)
    precision = tp / ranks
    recall = tp / positives
    return list(zip(precision.tolist(), recall.tolist()))


def average_precision(records, class_index, interpolated=False):
    points = pr_points(records, class_index)
    precision = np.array([p for p, _ in points])
    recall = np.array([r for _, r in points])
    if interpolated:
        precision = np.maximum.accumulate(precision[::-1])[::-1]
    previous = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - previous) * precision))


@dataclass
class EvalReport:
    per_class_ap: dict                 # name -> AP, or None when undefined
    mean_ap: float
    positives: dict                    # name -> ground-truth positive count
    record_count: int
    undefined: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class", "ap", "positives"])
            for name, ap in self.per_class_ap.items():
                writer.writerow([name, "" if ap is None else f"{ap:.6f}",
                                 self.positives[name]])
            writer.writerow(["mAP", f"{self.mean_ap:.6f}", self.record_count])

    def to_text(self):
        width = max(len(n) for n in self.per_class_ap)
        lines = []
        for name, ap in self.per_class_ap.items():
            value = "undefined" if ap is None else f"{ap:8.4f}"
            lines.append(f"{name:<{width}}  {value}  ({self.positives[name]} positives)")
        lines.append(f"{'mAP':<{width}}  {self.mean_ap:8.4f}  "
                     f"({self.record_count} records)")
        if self.undefined:
            lines.append(f"undefined classes excluded from mAP: "
                         f"{', '.join(self.undefined)}")
        return "\n".join(lines)


def mean_ap(records, vocab_names=BEHAVIOR_NAMES, interpolated=False):
    """Evaluate all classes into an EvalReport."""
    if not records:
        raise EmptyEvalError("no prediction records to evaluate")
    _require_targets(records)
    per_class = {}
    positives = {}
    undefined = []
    for k, name in enumerate(vocab_names):
        positives[name] = int(sum(r.targets[k] for r in records))
        if positives[name] == 0:
            per_class[name] = None
            undefined.append(name)
        else:
            per_class[name] = average_precision(records, k, interpolated=interpolated)
    defined = [v for v in per_class.values() if v is not None]
    if not defined:
        raise EmptyEvalError("every class is undefined (no positives at all)")
    return EvalReport(
        per_class_ap=per_class,
        mean_ap=float(np.mean(defined)),
        positives=positives,
        record_count=len(records),
        undefined=undefined,
    )


TOGGLE_NAMES = ("fl_sam", "kmfem", "cl_sam", "mfem")


def config_label(toggles):
    if all(toggles):
        return "full"
    on = [n for n, t in zip(TOGGLE_NAMES, toggles) if t]
    off = [n for n, t in zip(TOGGLE_NAMES, toggles) if not t]
    if len(off) == 1:
        return f"no_{off[0]}"
    return "+".join(on) if on else "none"


@dataclass
class AblationTable:
    columns: list      # (label, toggles, EvalReport), full model first if present
    vocab_names: tuple = BEHAVIOR_NAMES

    def _full_report(self):
        for label, toggles, report in self.columns:
            if all(toggles):
                return report
        return None

    def rows(self):
        """(row name, [cell values]) with None for undefined classes."""
        out = []
        for name in self.vocab_names:
            out.append((name, [rep.per_class_ap.get(name) for _, _, rep in self.columns]))
        out.append(("mAP", [rep.mean_ap for _, _, rep in self.columns]))
        return out

    def to_csv(self, path):
        full = self._full_report()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["behavior"] + [label for label, _, _ in self.columns])
            for name, values in self.rows():
                writer.writerow([name] + ["" if v is None else f"{v:.6f}" for v in values])
            if full is not None:
                deltas = [rep.mean_ap - full.mean_ap for _, _, rep in self.columns]
                writer.writerow(["mAP_delta_vs_full"] + [f"{d:+.6f}" for d in deltas])

    def to_text(self):
        full = self._full_report()
        labels = [label for label, _, _ in self.columns]
        col_width = max(16, max(len(l) for l in labels) + 2)
        name_width = max(len(n) for n, _ in self.rows())
        lines = [" " * name_width + "".join(f"{l:>{col_width}}" for l in labels)]
        for name, values in self.rows():
            cells = []
            for i, v in enumerate(values):
                if v is None:
                    cells.append(f"{'--':>{col_width}}")
                    continue
                text = f"{v:.4f}"
                if full is not None and not all(self.columns[i][1]):
                    ref = full.mean_ap if name == "mAP" else full.per_class_ap.get(name)
                    if ref is not None:
                        text += f"({v - ref:+.3f})"
                cells.append(f"{text:>{col_width}}")
            lines.append(f"{name:<{name_width}}" + "".join(cells))
        return "\n".join(lines)


def ablation_report(runs):
    """Assemble a comparison table from (toggles, EvalReport) runs."""
    seen = set()
    columns = []
    for toggles, report in runs:
        toggles = tuple(bool(t) for t in toggles)
        if toggles in seen:
            raise DuplicateConfigError(f"duplicate toggle vector {toggles}")
        seen.add(toggles)
        columns.append((config_label(toggles), toggles, report))
    columns.sort(key=lambda col: (not all(col[1]), col[0]))
    return AblationTable(columns=columns)
