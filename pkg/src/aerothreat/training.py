"""Adam training loop with per-epoch metric capture and checkpointing."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core_types import DatasetManifest, ImageRecord, ThreatLevel, ValidationError
from .curation import AugmentationParams, augment_image, load_preprocessed
from .model import (
    DualHeadNetwork,
    NumericError,
    one_hot,
    save_checkpoint,
    total_loss,
)


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0001
    batch_size: int = 8
    epochs: int = 21
    loss_weights: tuple[float, float] = (1.0, 1.0)
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0
    augment_online: bool = False
    augmentation: AugmentationParams = field(default_factory=AugmentationParams)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")
        if not (0 <= self.adam.beta1 < 1 and 0 <= self.adam.beta2 < 1):
            raise ValidationError("adam betas must be in [0, 1)")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    train_class_acc: float
    val_class_acc: float
    train_threat_acc: float
    val_threat_acc: float


def adam_step(
    params: dict, grads: dict, state: AdamState, config: TrainConfig
) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update. Mutates params/state in place and
    returns them for convenience."""
    b1, b2, eps = config.adam.beta1, config.adam.beta2, config.adam.eps
    state.t += 1
    t = state.t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        params[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def _check_annotated(records: Sequence[ImageRecord], where: str) -> None:
    missing = [r.id for r in records if r.threat is None]
    if missing:
        raise ValidationError(
            f"{len(missing)} unannotated record(s) in {where}: {missing[:5]}"
        )


class _BatchSource:
    """Preloads and caches preprocessed arrays plus integer targets."""

    def __init__(self, records: Sequence[ImageRecord], label_space):
        self.records = list(records)
        self.images = np.stack([load_preprocessed(r.path) for r in self.records])
        self.class_idx = np.array([label_space.index(r.category) for r in self.records])
        self.threat_idx = np.array([int(r.threat) for r in self.records])

    def __len__(self):
        return len(self.records)


def _evaluate_source(
    net: DualHeadNetwork, source: _BatchSource, config: TrainConfig
) -> tuple[float, float, float]:
    """(mean loss, class accuracy, threat accuracy) over a source."""
    n = len(source)
    n_classes = net.config.n_classes
    n_threats = net.config.n_threats
    loss_sum = 0.0
    class_correct = 0
    threat_correct = 0
    for start in range(0, n, config.batch_size):
        sl = slice(start, min(start + config.batch_size, n))
        batch = source.images[sl]
        result = net.forward(batch)
        cy = one_hot(source.class_idx[sl], n_classes)
        ty = one_hot(source.threat_idx[sl], n_threats)
        loss_sum += total_loss(result, cy, ty, config.loss_weights) * batch.shape[0]
        class_correct += int(
            (result.class_probs.argmax(axis=1) == source.class_idx[sl]).sum()
        )
        threat_correct += int(
            (result.threat_probs.argmax(axis=1) == source.threat_idx[sl]).sum()
        )
    return loss_sum / n, class_correct / n, threat_correct / n


def train(
    net: DualHeadNetwork,
    train_manifest: DatasetManifest | Sequence[ImageRecord],
    val_manifest: DatasetManifest | Sequence[ImageRecord],
    config: TrainConfig,
    out_dir: str | Path = "runs",
    label_space=None,
) -> tuple[DualHeadNetwork, list[EpochMetrics], Optional[Path]]:
    """Run the optimization loop; returns (net, metrics, best checkpoint path).

    Batch order reshuffles each epoch from config.seed; the final partial
    batch is kept. The checkpoint with the lowest validation loss survives.
    """
    if isinstance(train_manifest, DatasetManifest):
        space = train_manifest.label_space
        train_records = train_manifest.records
    else:
        space = label_space
        train_records = list(train_manifest)
    if isinstance(val_manifest, DatasetManifest):
        val_records = val_manifest.records
    else:
        val_records = list(val_manifest)
    if space is None:
        raise ValidationError("label_space required when passing bare record lists")
    if len(space.members) != net.config.n_classes:
        raise ValidationError(
            f"label space size {len(space.members)} does not match "
            f"network class head width {net.config.n_classes}"
        )
    _check_annotated(train_records, "train set")
    _check_annotated(val_records, "validation set")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_src = _BatchSource(train_records, space)
    val_src = _BatchSource(val_records, space)
    rng = np.random.default_rng(config.seed)
    aug_rng = np.random.default_rng(config.seed + 1)
    state = AdamState.init(net.params)
    metrics: list[EpochMetrics] = []
    best_val = np.inf
    ckpt_path: Optional[Path] = None
    n = len(train_src)

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        loss_sum = 0.0
        class_correct = 0
        threat_correct = 0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = train_src.images[idx]
            if config.augment_online:
                batch = np.stack(
                    [
                        augment_image(
                            img,
                            config.augmentation,
                            int(aug_rng.integers(0, 2**63 - 1)),
                        )[0]
                        for img in batch
                    ]
                )
            cy = one_hot(train_src.class_idx[idx], net.config.n_classes)
            ty = one_hot(train_src.threat_idx[idx], net.config.n_threats)
            result = net.forward(batch)
            loss = total_loss(result, cy, ty, config.loss_weights)
            grads = net.backward(result, cy, ty, config.loss_weights)
            adam_step(net.params, grads, state, config)
            loss_sum += loss * len(idx)
            class_correct += int(
                (result.class_probs.argmax(axis=1) == train_src.class_idx[idx]).sum()
            )
            threat_correct += int(
                (result.threat_probs.argmax(axis=1) == train_src.threat_idx[idx]).sum()
            )
        val_loss, val_cacc, val_tacc = _evaluate_source(net, val_src, config)
        metrics.append(
            EpochMetrics(
                epoch=epoch,
                train_loss=loss_sum / n,
                val_loss=val_loss,
                train_class_acc=class_correct / n,
                val_class_acc=val_cacc,
                train_threat_acc=threat_correct / n,
                val_threat_acc=val_tacc,
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            ckpt_path = out_dir / "best_checkpoint.npz"
            save_checkpoint(net, ckpt_path)
    return net, metrics, ckpt_path


def write_metrics_csv(metrics: Sequence[EpochMetrics], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "epoch",
                "train_loss",
                "val_loss",
                "train_class_acc",
                "val_class_acc",
                "train_threat_acc",
                "val_threat_acc",
            ]
        )
        for m in metrics:
            writer.writerow(
                [
                    m.epoch,
                    repr(m.train_loss),
                    repr(m.val_loss),
                    repr(m.train_class_acc),
                    repr(m.val_class_acc),
                    repr(m.train_threat_acc),
                    repr(m.val_threat_acc),
                ]
            )
