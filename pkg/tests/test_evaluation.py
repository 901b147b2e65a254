import numpy as np
import pytest

from stpen.dataset import BEHAVIOR_NAMES
from stpen.enhancement import PredictionRecord
from stpen.errors import (DuplicateConfigError, EmptyEvalError,
                          UndefinedClassError)
from stpen.evaluation import (AblationTable, EvalReport, ablation_report,
                              average_precision, config_label, mean_ap,
                              pr_points)

import oracles


def record(i, score, label, k=0, video="v", ts=0):
    scores = np.full(13, 0.5)
    scores[k] = score
    targets = np.zeros(13)
    targets[k] = label
    return PredictionRecord(video, ts, i, scores, targets)


def random_records(rng, n, ensure_positive=True):
    records = []
    for i in range(n):
        scores = rng.uniform(0.01, 0.99, size=13)
        targets = (rng.random(13) < 0.4).astype(float)
        records.append(PredictionRecord("v", int(rng.integers(10)), i, scores, targets))
    if ensure_positive and not any(r.targets[0] for r in records):
        records[0].targets[0] = 1.0
    return records


# -- pr_points -----------------------------------------------------------------


def test_pr_points_all_positive():
    records = [record(i, 0.9 - 0.1 * i, 1) for i in range(4)]
    points = pr_points(records, 0)
    assert [p for p, _ in points] == [1.0] * 4
    assert [r for _, r in points] == [0.25, 0.5, 0.75, 1.0]


def test_pr_points_single_positive_first():
    points = pr_points([record(0, 0.9, 1), record(1, 0.2, 0)], 0)
    assert points == [(1.0, 1.0), (0.5, 1.0)]


def test_pr_points_matches_brute_counting():
    rng = np.random.default_rng(0)
    records = random_records(rng, 6)
    points = pr_points(records, 0)
    ranked = sorted(records, key=lambda r: (-r.scores[0], r.video_id,
                                            r.timestamp_s, r.actor_id))
    labels = [int(r.targets[0]) for r in ranked]
    total = sum(labels)
    for j, (precision, recall) in enumerate(points, start=1):
        tp = sum(labels[:j])
        assert precision == pytest.approx(tp / j)
        assert recall == pytest.approx(tp / total)


def test_pr_points_undefined_class():
    records = [record(0, 0.9, 0), record(1, 0.5, 0)]
    with pytest.raises(UndefinedClassError):
        pr_points(records, 0)


# -- average precision -------------------------------------------------------------


def test_ap_perfect_ranking():
    records = [record(0, 0.9, 1), record(1, 0.8, 1), record(2, 0.3, 0)]
    assert average_precision(records, 0) == pytest.approx(1.0)


def test_ap_hand_case_plus_minus_plus():
    records = [record(0, 0.9, 1), record(1, 0.8, 0), record(2, 0.7, 1)]
    assert average_precision(records, 0) == pytest.approx(5.0 / 6.0)


def test_ap_single_positive_last():
    records = [record(i, 0.9 - 0.1 * i, 0) for i in range(3)]
    records.append(record(3, 0.1, 1))
    assert average_precision(records, 0) == pytest.approx(0.25)


def test_ap_equals_brute_force_on_random_sets():
    rng = np.random.default_rng(1)
    for _ in range(120):
        records = random_records(rng, int(rng.integers(2, 13)))
        assert average_precision(records, 0) == pytest.approx(
            oracles.average_precision_brute(records, 0), abs=1e-12)


def test_ap_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    records = random_records(rng, 10)
    base = average_precision(records, 0)
    for rec in records:
        rec.scores = 1.0 / (1.0 + np.exp(-(5.0 * rec.scores - 2.0)))
    assert average_precision(records, 0) == pytest.approx(base, abs=1e-12)


def test_ap_invariant_under_record_permutation():
    rng = np.random.default_rng(3)
    records = random_records(rng, 9)
    base = average_precision(records, 0)
    for _ in range(5):
        rng.shuffle(records)
        assert average_precision(records, 0) == pytest.approx(base, abs=1e-15)


def test_ap_interpolated_at_least_rank_sum():
    rng = np.random.default_rng(4)
    for _ in range(30):
        records = random_records(rng, 8)
        raw = average_precision(records, 0)
        interp = average_precision(records, 0, interpolated=True)
        assert interp >= raw - 1e-12


# -- mean_ap ------------------------------------------------------------------------


def test_mean_ap_identical_classes():
    records = []
    for i in range(4):
        scores = np.full(13, 0.1)
        targets = np.zeros(13)
        if i < 2:
            scores[:2] = 0.9
            targets[:2] = 1.0
        records.append(PredictionRecord("v", 0, i, scores, targets))
    report = mean_ap(records)
    assert report.per_class_ap["drink"] == pytest.approx(1.0)
    assert report.per_class_ap["eat"] == pytest.approx(1.0)
    assert report.mean_ap == pytest.approx(1.0)
    assert report.per_class_ap["walk"] is None
    assert "walk" in report.undefined
    assert report.record_count == 4


def test_mean_ap_simple_average():
    # drink ranked perfectly, eat ranked worst: AP 1.0 and 0.5
    r1 = PredictionRecord("v", 0, 0, np.array([0.9, 0.1] + [0.5] * 11),
                          np.array([1, 0] + [0] * 11, dtype=float))
    r2 = PredictionRecord("v", 0, 1, np.array([0.2, 0.3] + [0.5] * 11),
                          np.array([0, 1] + [0] * 11, dtype=float))
    r3 = PredictionRecord("v", 0, 2, np.array([0.1, 0.8] + [0.5] * 11),
                          np.array([0, 0] + [0] * 11, dtype=float))
    report = mean_ap([r1, r2, r3])
    assert report.per_class_ap["drink"] == pytest.approx(1.0)
    assert report.per_class_ap["eat"] == pytest.approx(0.5)
    assert report.mean_ap == pytest.approx(0.75)


def test_mean_ap_requires_records_and_positives():
    with pytest.raises(EmptyEvalError):
        mean_ap([])
    empty = [PredictionRecord("v", 0, 0, np.full(13, 0.5), np.zeros(13))]
    with pytest.raises(EmptyEvalError):
        mean_ap(empty)


def test_reported_per_class_values_average_to_reported_map():
    ours = [81.63, 95.75, 96.67, 94.23, 92.29, 82.77, 90.13, 72.48, 85.33,
            60.75, 40.0, 52.37, 41.98]
    assert abs(np.mean(ours) - 75.92) <= 0.05


def test_eval_report_render(tmp_path):
    records = random_records(np.random.default_rng(5), 12)
    for rec in records:
        rec.targets[:] = 0
        rec.targets[0] = 1
    report = mean_ap(records)
    text = report.to_text()
    assert "undefined" in text and "mAP" in text
    report.to_csv(tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "class,ap,positives"
    assert len(lines) == 15  # 13 classes + header + mAP row


# -- ablation table -----------------------------------------------------------------


def fake_report(values):
    per_class = {}
    for i, name in enumerate(BEHAVIOR_NAMES):
        per_class[name] = values.get(name)
    defined = [v for v in per_class.values() if v is not None]
    return EvalReport(per_class_ap=per_class, mean_ap=float(np.mean(defined)),
                      positives={n: int(per_class[n] is not None) for n in BEHAVIOR_NAMES},
                      record_count=10,
                      undefined=[n for n, v in per_class.items() if v is None])


def test_config_labels():
    assert config_label((True, True, True, True)) == "full"
    assert config_label((True, False, True, True)) == "no_kmfem"
    assert config_label((True, True, False, False)) == "fl_sam+kmfem"


def test_ablation_single_run_zero_delta(tmp_path):
    table = ablation_report([((True,) * 4, fake_report({"drink": 0.75, "eat": 0.5}))])
    table.to_csv(tmp_path / "t.csv")
    last = (tmp_path / "t.csv").read_text().splitlines()[-1]
    assert last.startswith("mAP_delta_vs_full")
    assert "+0.000000" in last


def test_ablation_two_run_delta():
    runs = [((True,) * 4, fake_report({"drink": 0.75})),
            ((True, True, True, False), fake_report({"drink": 0.72}))]
    table = ablation_report(runs)
    rows = dict(table.rows())
    assert rows["mAP"][0] == pytest.approx(0.75)
    assert rows["mAP"][1] == pytest.approx(0.72)
    text = table.to_text()
    assert "no_mfem" in text and "(-0.030)" in text


def test_ablation_five_run_fixture(tmp_path):
    # full plus the four single-off columns, hand-built values
    values = {"full": 0.7592, "no_fl_sam": 0.7336, "no_kmfem": 0.7281,
              "no_cl_sam": 0.7238, "no_mfem": 0.7202}
    runs = [((True,) * 4, fake_report({"drink": values["full"]}))]
    for i, name in enumerate(["no_fl_sam", "no_kmfem", "no_cl_sam", "no_mfem"]):
        toggles = [True] * 4
        toggles[i] = False
        runs.append((tuple(toggles), fake_report({"drink": values[name]})))
    table = ablation_report(runs)
    assert [label for label, _, _ in table.columns][0] == "full"
    assert set(label for label, _, _ in table.columns) == set(values)
    table.to_csv(tmp_path / "ablation.csv")
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0].split(",")[0] == "behavior"
    drink_row = lines[1].split(",")
    assert drink_row[0] == "drink"
    by_label = dict(zip(lines[0].split(",")[1:], drink_row[1:]))
    assert by_label["full"] == "0.759200"
    assert by_label["no_mfem"] == "0.720200"


def test_ablation_rejects_duplicate_toggles():
    runs = [((True,) * 4, fake_report({"drink": 0.7})),
            ((True,) * 4, fake_report({"drink": 0.8}))]
    with pytest.raises(DuplicateConfigError):
        ablation_report(runs)
