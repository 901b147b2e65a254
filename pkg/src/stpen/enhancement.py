"""Per-actor feature enhancement and the multi-label head.

After ROI cropping, the low-rate features pass through a self-gating
channel attention, the high-rate features are max-pooled per frame and
run through an LSTM to capture temporal order, and the two embeddings
are concatenated into a 13-way sigmoid classifier.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, ParseError, ShapeError
from .ops import linear, lstm_step, spatial_max_pool
from .tensor import Tensor


@dataclass
class PredictionRecord:
    video_id: str
    timestamp_s: int
    actor_id: int
    scores: np.ndarray             # 13 values in (0, 1)
    targets: np.ndarray | None = None

    def validate(self):
        if not np.isfinite(self.scores).all():
            raise NonFiniteError(f"non-finite scores for actor {self.actor_id}")
        if np.any(self.scores <= 0.0) or np.any(self.scores >= 1.0):
            raise ShapeError(f"scores must lie strictly in (0, 1): {self.scores}")


def cl_sam(roi_low):
    """Channel-level self-gating: x * sigmoid(x) elementwise."""
    return roi_low * roi_low.sigmoid()


def mfem(roi_high, params, ablate=False):
    """Temporal embedding of a (16, C, P, P) ROI sequence.

    Max-pool each frame to a C-vector, then unroll an LSTM from zero
    state and return the final hidden state.  The ablated variant
    replaces the LSTM with the temporal mean projected to the same
    width, removing order sensitivity while keeping dimensions.
    """
    seq = spatial_max_pool(roi_high)  # (T, C)
    if ablate:
        return linear(seq.mean(axis=0), params["proj.w"], params["proj.b"])
    hidden = params["i.b"].shape[0]
    h = Tensor(np.zeros(hidden))
    c = Tensor(np.zeros(hidden))
    for t in range(seq.shape[0]):
        h, c = lstm_step(seq[t], h, c, params)
    return h


def classify(gated_low, temporal_vec, params):
    """Pool the gated low-rate ROI per channel, concatenate the temporal
    embedding, and apply the affine head with a sigmoid."""
    pooled = gated_low.mean(axis=(0, 2, 3))  # (C,)
    features = Tensor.concat([pooled, temporal_vec], axis=0)
    return linear(features, params["fc.w"], params["fc.b"]).sigmoid()


# -- record serialization ------------------------------------------------


def write_prediction_csv(records, path):
    """CSV rows video_id,timestamp,actor_id,s0..s12[,t0..t12]."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for rec in records:
            row = [rec.video_id, rec.timestamp_s, rec.actor_id]
            row += [f"{v:.6f}" for v in rec.scores]
            if rec.targets is not None:
                row += [str(int(v)) for v in rec.targets]
            writer.writerow(row)


def read_prediction_csv(path, classes=13):
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) not in (3 + classes, 3 + 2 * classes):
                raise ParseError(f"{path} line {lineno}: expected {3 + classes} or "
                                 f"{3 + 2 * classes} columns, got {len(row)}")
            try:
                scores = np.array([float(v) for v in row[3:3 + classes]])
                targets = None
                if len(row) == 3 + 2 * classes:
                    targets = np.array([float(v) for v in row[3 + classes:]])
                rec = PredictionRecord(row[0], int(row[1]), int(row[2]), scores, targets)
            except ValueError as exc:
                raise ParseError(f"{path} line {lineno}: {exc}") from None
            rec.validate()
            records.append(rec)
    return records
