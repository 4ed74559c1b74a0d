import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerothreat.core_types import ValidationError
from aerothreat.evaluation import (
    classification_report,
    confusion_matrix,
    export_report,
    format_report_text,
    report_from_json,
    report_to_json,
)


def brute_force_report(truth, pred, labels):
    """Independent recount straight from the raw pairs."""
    n = len(truth)
    rows = {}
    for label in labels:
        tp = sum(1 for t, p in zip(truth, pred) if t == label and p == label)
        pred_pos = sum(1 for p in pred if p == label)
        true_pos = sum(1 for t in truth if t == label)
        precision = tp / pred_pos if pred_pos else 0.0
        recall = tp / true_pos if true_pos else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        rows[label] = (precision, recall, f1, true_pos)
    accuracy = sum(1 for t, p in zip(truth, pred) if t == p) / n
    macro = tuple(sum(rows[l][k] for l in labels) / len(labels) for k in range(3))
    # recall weighting reduces to exact integer counts: recall_l * support_l
    # is the number of correct label-l samples
    correct = sum(1 for t, p in zip(truth, pred) if t == p)
    weighted = (
        sum(rows[l][0] * rows[l][3] for l in labels) / n,
        correct / n,
        sum(rows[l][2] * rows[l][3] for l in labels) / n,
    )
    return rows, accuracy, macro, weighted


AVD_THREAT_TRUTH = ["LOW"] * 23 + ["MEDIUM"] * 27 + ["HIGH"] * 794
ALL_HIGH_PRED = ["HIGH"] * 844
THREAT_LABELS = ["LOW", "MEDIUM", "HIGH"]


class TestConfusionMatrix:
    def test_perfect_prediction_diagonal(self):
        truth = ["A", "B", "A", "C"]
        cm = confusion_matrix(truth, truth, ["A", "B", "C"])
        assert np.array_equal(cm.counts, np.diag([2, 1, 1]))
        assert classification_report(cm).accuracy == 1.0

    def test_all_high_predictions_column(self):
        cm = confusion_matrix(AVD_THREAT_TRUTH, ALL_HIGH_PRED, THREAT_LABELS)
        assert list(cm.counts[:, 2]) == [23, 27, 794]
        assert cm.counts[:, :2].sum() == 0
        assert cm.total == 844

    def test_two_label_toy_hand_enumeration(self):
        cm = confusion_matrix(["A", "A", "B", "B"], ["A", "B", "B", "B"], ["A", "B"])
        assert cm.counts.tolist() == [[1, 1], [0, 2]]

    def test_unknown_label_rejected(self):
        with pytest.raises(ValidationError):
            confusion_matrix(["A"], ["Z"], ["A", "B"])
        with pytest.raises(ValidationError):
            confusion_matrix(["Z"], ["A"], ["A", "B"])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            confusion_matrix(["A"], ["A", "B"], ["A", "B"])


class TestClassificationReport:
    def test_avd_threat_table_values(self):
        cm = confusion_matrix(AVD_THREAT_TRUTH, ALL_HIGH_PRED, THREAT_LABELS)
        report = classification_report(cm)
        low, medium, high = report.per_label
        assert (low.precision, low.recall, low.f1) == (0.0, 0.0, 0.0)
        assert (medium.precision, medium.recall, medium.f1) == (0.0, 0.0, 0.0)
        assert high.precision == pytest.approx(794 / 844)
        assert high.recall == 1.0
        assert high.f1 == pytest.approx(2 * (794 / 844) / (1 + 794 / 844))
        assert [round(v, 2) for v in (high.precision, high.recall, high.f1)] == [0.94, 1.0, 0.97]
        assert [round(v, 2) for v in report.macro_avg] == [0.31, 0.33, 0.32]
        assert [round(v, 2) for v in report.weighted_avg] == [0.89, 0.94, 0.91]
        assert report.total_support == 844

    def test_perfect_diagonal_all_ones(self):
        cm = confusion_matrix(["A", "B"], ["A", "B"], ["A", "B"])
        report = classification_report(cm)
        assert report.accuracy == 1.0
        assert report.macro_avg == (1.0, 1.0, 1.0)
        assert report.weighted_avg == (1.0, 1.0, 1.0)

    @given(
        n_labels=st.integers(min_value=2, max_value=5),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=100, deadline=None)
    def test_matches_brute_force_recount(self, n_labels, seed):
        rng = np.random.default_rng(seed)
        labels = [f"L{i}" for i in range(n_labels)]
        n = int(rng.integers(1, 200))
        truth = [labels[i] for i in rng.integers(0, n_labels, n)]
        pred = [labels[i] for i in rng.integers(0, n_labels, n)]
        report = classification_report(confusion_matrix(truth, pred, labels))
        rows, accuracy, macro, weighted = brute_force_report(truth, pred, labels)
        for label, m in zip(report.labels, report.per_label):
            assert (m.precision, m.recall, m.f1, m.support) == rows[label]
        assert report.accuracy == accuracy
        assert report.macro_avg == macro
        assert report.weighted_avg == weighted
        # algebraic identity: weighted recall == accuracy
        assert report.weighted_avg[1] == pytest.approx(report.accuracy, abs=1e-12)

    def test_support_sums_and_trace_accuracy(self):
        rng = np.random.default_rng(1)
        labels = ["A", "B", "C"]
        truth = [labels[i] for i in rng.integers(0, 3, 50)]
        pred = [labels[i] for i in rng.integers(0, 3, 50)]
        cm = confusion_matrix(truth, pred, labels)
        report = classification_report(cm)
        assert sum(m.support for m in report.per_label) == cm.total
        assert report.accuracy == np.trace(cm.counts) / cm.total

    def test_empty_matrix_rejected(self):
        cm = confusion_matrix([], [], ["A", "B"])
        with pytest.raises(ValidationError):
            classification_report(cm)


class TestExport:
    def _table_report(self):
        cm = confusion_matrix(AVD_THREAT_TRUTH, ALL_HIGH_PRED, THREAT_LABELS)
        return cm, classification_report(cm)

    def test_text_table_cells(self):
        _, report = self._table_report()
        text = format_report_text(report, title="Threat Level Classification Report")
        lines = {ln.split()[0]: ln.split() for ln in text.splitlines() if ln.strip()}
        assert lines["LOW"][1:] == ["0.00", "0.00", "0.00", "23"]
        assert lines["MEDIUM"][1:] == ["0.00", "0.00", "0.00", "27"]
        assert lines["HIGH"][1:] == ["0.94", "1.00", "0.97", "794"]
        assert lines["Macro"][2:] == ["0.31", "0.33", "0.32", "844"]
        assert lines["Weighted"][2:] == ["0.89", "0.94", "0.91", "844"]

    def test_json_round_trip_exact(self):
        _, report = self._table_report()
        restored = report_from_json(json.loads(json.dumps(report_to_json(report))))
        assert restored == report

    def test_export_files(self, tmp_path):
        cm, report = self._table_report()
        files = export_report(report, cm, tmp_path / "threat_report")
        assert [f.name for f in files] == [
            "threat_report.json",
            "threat_report.txt",
            "threat_report_confusion.csv",
        ]
        for f in files:
            assert f.exists() and f.stat().st_size > 0
        csv_lines = files[2].read_text().strip().split("\n")
        assert csv_lines[0] == "true\\pred,LOW,MEDIUM,HIGH"
        assert csv_lines[3] == "HIGH,0,0,794"

    def test_single_label_edge(self):
        # degenerate single-label matrix: averages equal the single row
        from aerothreat.evaluation import ClassificationReport, ConfusionMatrix

        cm = ConfusionMatrix(labels=("ONLY",), counts=np.array([[5]]))
        report = classification_report(cm)
        assert report.macro_avg == (1.0, 1.0, 1.0)
        assert report.weighted_avg == (1.0, 1.0, 1.0)
        text = format_report_text(report)
        assert "ONLY" in text


class TestPlots:
    def test_curve_pngs_written(self, tmp_path):
        from aerothreat.evaluation import plot_training_curves
        from aerothreat.training import EpochMetrics, write_metrics_csv

        csv_path = tmp_path / "metrics.csv"
        write_metrics_csv(
            [EpochMetrics(i, 2.0 - i * 0.1, 2.1 - i * 0.1, 0.3 + i * 0.05,
                          0.3 + i * 0.04, 0.5 + i * 0.05, 0.5 + i * 0.04)
             for i in range(5)],
            csv_path,
        )
        files = plot_training_curves(csv_path, tmp_path)
        assert [f.name for f in files] == ["accuracy_curves.png", "loss_curves.png"]
        for f in files:
            assert f.stat().st_size > 0
