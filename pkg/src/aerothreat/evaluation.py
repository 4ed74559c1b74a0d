"""Confusion matrices, classification reports, and artifact export.

Internal metric values are kept at full precision; rounding to two decimals
happens only at display time (round-half-even, like the report tables).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core_types import DatasetManifest, ThreatLevel, ValidationError
from .curation import load_preprocessed
from .model import DualHeadNetwork


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # counts[i, j] = true label i predicted as j

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self, i: int) -> int:
        return int(self.counts[i].sum())


@dataclass(frozen=True)
class LabelMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    labels: tuple[str, ...]
    per_label: tuple[LabelMetrics, ...]
    accuracy: float
    macro_avg: tuple[float, float, float]  # precision, recall, f1
    weighted_avg: tuple[float, float, float]
    total_support: int


def confusion_matrix(
    truth: Sequence[str], pred: Sequence[str], labels: Sequence[str]
) -> ConfusionMatrix:
    if len(truth) != len(pred):
        raise ValidationError("truth and pred must have equal length")
    labels = tuple(labels)
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in index:
            raise ValidationError(f"unknown true label {t!r}")
        if p not in index:
            raise ValidationError(f"unknown predicted label {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(labels=labels, counts=counts)


def classification_report(cm: ConfusionMatrix) -> ClassificationReport:
    """Per-label precision/recall/F1/support plus macro and weighted averages.

    Zero-division convention: a label with no predictions has precision 0,
    one with no support has recall 0, and f1 is 0 when both are 0.
    """
    total = cm.total
    if total <= 0:
        raise ValidationError("confusion matrix is empty")
    n = len(cm.labels)
    rows = []
    for i in range(n):
        tp = float(cm.counts[i, i])
        col = float(cm.counts[:, i].sum())
        row = float(cm.counts[i, :].sum())
        precision = tp / col if col > 0 else 0.0
        recall = tp / row if row > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        rows.append(LabelMetrics(precision, recall, f1, int(row)))
    macro = tuple(
        float(np.mean([getattr(r, k) for r in rows])) for k in ("precision", "recall", "f1")
    )
    # weighted recall uses the exact integer numerator (recall_i * support_i
    # is the diagonal count), so weighted recall == accuracy holds exactly
    weighted = (
        float(sum(r.precision * r.support for r in rows) / total),
        float(np.trace(cm.counts)) / total,
        float(sum(r.f1 * r.support for r in rows) / total),
    )
    accuracy = float(np.trace(cm.counts)) / total
    return ClassificationReport(
        labels=cm.labels,
        per_label=tuple(rows),
        accuracy=accuracy,
        macro_avg=macro,
        weighted_avg=weighted,
        total_support=total,
    )


THREAT_LABELS = tuple(level.name for level in ThreatLevel)  # LOW, MEDIUM, HIGH


def evaluate_model(
    net: DualHeadNetwork,
    manifest: DatasetManifest,
    head: str,
    batch_size: int = 64,
) -> tuple[ConfusionMatrix, ClassificationReport]:
    """Score the manifest's test split through one head.

    Argmax ties break toward the lowest label index (numpy argmax behavior).
    """
    if head not in ("category", "threat"):
        raise ValidationError(f"head must be 'category' or 'threat', got {head!r}")
    records = (
        manifest.split_records("test")
        if manifest.split_assignments is not None
        else manifest.records
    )
    if not records:
        raise ValidationError("test split is empty")
    if head == "category":
        labels = manifest.label_space.members
        if len(labels) != net.config.n_classes:
            raise ValidationError(
                f"label space size {len(labels)} != class head width {net.config.n_classes}"
            )
        truth = [r.category for r in records]
    else:
        labels = THREAT_LABELS
        missing = [r.id for r in records if r.threat is None]
        if missing:
            raise ValidationError(f"unannotated records in test split: {missing[:5]}")
        truth = [r.threat.name for r in records]
    preds: list[str] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        batch = np.stack([load_preprocessed(r.path) for r in chunk])
        result = net.forward(batch)
        probs = result.class_probs if head == "category" else result.threat_probs
        preds.extend(labels[i] for i in probs.argmax(axis=1))
    cm = confusion_matrix(truth, preds, labels)
    return cm, classification_report(cm)


# ---------------------------------------------------------------------------
# export

def _fmt(x: float) -> str:
    return f"{x:.2f}"


def format_report_text(report: ClassificationReport, title: str = "Classification Report") -> str:
    width = max(12, max(len(label) for label in report.labels) + 2)
    lines = [title, ""]
    header = f"{'':{width}}{'Precision':>10}{'Recall':>10}{'F1-Score':>10}{'Support':>10}"
    lines.append(header)
    for label, m in zip(report.labels, report.per_label):
        lines.append(
            f"{label:{width}}{_fmt(m.precision):>10}{_fmt(m.recall):>10}"
            f"{_fmt(m.f1):>10}{m.support:>10}"
        )
    lines.append("")
    lines.append(
        f"{'Accuracy':{width}}{_fmt(report.accuracy):>30}{report.total_support:>10}"
    )
    mp, mr, mf = report.macro_avg
    wp, wr, wf = report.weighted_avg
    lines.append(
        f"{'Macro Avg':{width}}{_fmt(mp):>10}{_fmt(mr):>10}{_fmt(mf):>10}"
        f"{report.total_support:>10}"
    )
    lines.append(
        f"{'Weighted Avg':{width}}{_fmt(wp):>10}{_fmt(wr):>10}{_fmt(wf):>10}"
        f"{report.total_support:>10}"
    )
    return "\n".join(lines) + "\n"


def report_to_json(report: ClassificationReport) -> dict:
    return {
        "labels": list(report.labels),
        "per_label": [
            {
                "label": label,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "support": m.support,
            }
            for label, m in zip(report.labels, report.per_label)
        ],
        "accuracy": report.accuracy,
        "macro_avg": {
            "precision": report.macro_avg[0],
            "recall": report.macro_avg[1],
            "f1": report.macro_avg[2],
        },
        "weighted_avg": {
            "precision": report.weighted_avg[0],
            "recall": report.weighted_avg[1],
            "f1": report.weighted_avg[2],
        },
        "total_support": report.total_support,
    }


def report_from_json(obj: dict) -> ClassificationReport:
    return ClassificationReport(
        labels=tuple(obj["labels"]),
        per_label=tuple(
            LabelMetrics(r["precision"], r["recall"], r["f1"], r["support"])
            for r in obj["per_label"]
        ),
        accuracy=obj["accuracy"],
        macro_avg=(
            obj["macro_avg"]["precision"],
            obj["macro_avg"]["recall"],
            obj["macro_avg"]["f1"],
        ),
        weighted_avg=(
            obj["weighted_avg"]["precision"],
            obj["weighted_avg"]["recall"],
            obj["weighted_avg"]["f1"],
        ),
        total_support=obj["total_support"],
    )


def export_report(
    report: ClassificationReport,
    cm: ConfusionMatrix,
    base_path: str | Path,
    title: str = "Classification Report",
) -> list[Path]:
    """Write <base>.json, <base>.txt and <base>_confusion.csv."""
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path = base.with_suffix(".json")
    txt_path = base.with_suffix(".txt")
    cm_path = base.parent / (base.name + "_confusion.csv")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(txt_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report_text(report, title=title))
    with open(cm_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true\\pred"] + list(cm.labels))
        for i, label in enumerate(cm.labels):
            writer.writerow([label] + [int(c) for c in cm.counts[i]])
    return [json_path, txt_path, cm_path]


def plot_training_curves(metrics_csv: str | Path, out_dir: str | Path) -> list[Path]:
    """Render accuracy and loss curve PNGs from a training metrics CSV."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    with open(metrics_csv, "r", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: float(v) for k, v in row.items()})
    if not rows:
        raise ValidationError(f"no metric rows in {metrics_csv}")
    epochs = [r["epoch"] for r in rows]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    acc_path = out_dir / "accuracy_curves.png"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, style in [
        ("train_class_acc", "-"),
        ("val_class_acc", "--"),
        ("train_threat_acc", "-"),
        ("val_threat_acc", "--"),
    ]:
        ax.plot(epochs, [r[key] for r in rows], style, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_title("Training vs. Validation Accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(acc_path)
    plt.close(fig)

    loss_path = out_dir / "loss_curves.png"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, style in [("train_loss", "-"), ("val_loss", "--")]:
        ax.plot(epochs, [r[key] for r in rows], style, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Training vs. Validation Loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(loss_path)
    plt.close(fig)
    return [acc_path, loss_path]
