"""Command-line pipeline: synth -> curate -> annotate -> split -> train -> evaluate.

Exit codes: 0 success, 2 validation/config error, 3 data error, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import curation, evaluation, synth, threat_rules, training
from .core_types import (
    DataError,
    DatasetManifest,
    ThreatLevel,
    ValidationError,
    load_manifest,
    make_label_space,
    manifest_counts,
    save_manifest,
)
from .model import BackboneSpec, DualHeadNetwork, NetworkConfig, load_checkpoint

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_VALIDATION = 2
EXIT_DATA = 3


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValidationError(f"--config file must hold a JSON object: {path}")
    return obj


def _write_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    # timestamps live here and nowhere else, so reruns stay byte-identical
    with open(out_dir / "run_meta.json", "w", encoding="utf-8") as fh:
        json.dump({"started_at": time.strftime("%Y-%m-%dT%H:%M:%S")}, fh)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    out = Path(args.out)
    synth.generate_synthetic_dataset(
        out, per_category=args.per_category, seed=args.seed, size=args.size
    )
    print(f"wrote {4 * args.per_category} images under {out} (+ rules.json)")
    return EXIT_OK


def _parse_source(spec: str) -> tuple[str, str, str]:
    parts = spec.split(":")
    if len(parts) == 2:
        directory, category = parts
        name = Path(directory).name
    elif len(parts) == 3:
        directory, category, name = parts
    else:
        raise ValidationError(f"source must be DIR:CATEGORY[:NAME], got {spec!r}")
    return directory, category, name


def cmd_curate(args) -> int:
    sources = [_parse_source(s) for s in args.source]
    if args.members:
        members = [m.strip() for m in args.members.split(",")]
    else:
        members = list(dict.fromkeys(cat for _, cat, _ in sources))
    space = make_label_space(args.space_name, members)
    manifest = DatasetManifest(name=args.name, label_space=space)
    failures = []
    for directory, category, name in sources:
        try:
            manifest = curation.ingest_source(directory, name, category, manifest)
        except (DataError, ValidationError) as exc:
            failures.append((directory, str(exc)))
            print(f"error: source {directory}: {exc}", file=sys.stderr)
    if not any(True for _ in manifest.records):
        raise ValidationError(
            "all sources failed: " + "; ".join(msg for _, msg in failures)
        )
    manifest, removed = curation.dedupe(manifest)
    if removed:
        print(f"dedupe removed {removed} duplicate record(s)")
    before = manifest_counts(manifest)
    if args.balance:
        out_dir = Path(args.out)
        params = curation.AugmentationParams(seed=args.seed)
        manifest = curation.balance_by_augmentation(manifest, params, out_dir / "augmented")
    after = manifest_counts(manifest)
    print(f"{'Class':<14}{'Number of Images':>18}{'After Augmentation':>20}")
    for label in space.members:
        aug = after[label] if args.balance else "NA"
        print(f"{label:<14}{before[label]:>18}{aug:>20}")
    total_after = sum(after.values()) if args.balance else "NA"
    print(f"{'Total':<14}{sum(before.values()):>18}{total_after:>20}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(manifest, manifest_path)
    print(f"manifest written to {manifest_path}")
    return EXIT_OK


def cmd_annotate(args) -> int:
    manifest = load_manifest(args.manifest)
    ruleset = (
        threat_rules.load_ruleset(args.rules)
        if args.rules
        else threat_rules.default_ruleset()
    )
    annotated = threat_rules.annotate_manifest(manifest, ruleset)
    counts = {level: 0 for level in ThreatLevel}
    for r in annotated.records:
        counts[r.threat] += 1
    for level in ThreatLevel:
        print(f"{level.display():<8}{counts[level]:>8}")
    out_path = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(annotated, out_path)
    print(f"annotated manifest written to {out_path}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    config = curation.SplitConfig(
        train_fraction=args.train_fraction,
        seed=args.seed,
        shuffle_train=not args.no_shuffle,
    )
    split = curation.stratified_split(manifest, config)
    n_train = sum(1 for v in split.split_assignments.values() if v == "train")
    print(f"split: {n_train} train / {len(split.records) - n_train} test")
    out_path = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(split, out_path)
    print(f"split manifest written to {out_path}")
    return EXIT_OK


def _backbone_spec(name: str) -> BackboneSpec:
    if name == "standin":
        return BackboneSpec(kind="small_conv_standin")
    if name == "efficientnet-b4":
        return BackboneSpec(kind="pretrained_efficientnet_b4", output_channels=1792, frozen=True)
    raise ValidationError(f"unknown backbone {name!r}")


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    manifest = load_manifest(args.manifest)
    if manifest.split_assignments is None:
        raise ValidationError("manifest has no split assignments; run `split` first")
    out_dir = Path(args.out)
    _write_run_config(out_dir, args)
    config = training.TrainConfig(
        learning_rate=args.lr if args.lr is not None else file_cfg.get("learning_rate", 0.0001),
        batch_size=args.batch_size
        if args.batch_size is not None
        else file_cfg.get("batch_size", 8),
        epochs=args.epochs if args.epochs is not None else file_cfg.get("epochs", 21),
        seed=args.seed,
        augment_online=args.augment_online,
    )
    net = DualHeadNetwork(
        NetworkConfig(
            n_classes=len(manifest.label_space.members),
            backbone=_backbone_spec(args.backbone),
            seed=args.seed,
        )
    )
    train_records = manifest.split_records("train")
    val_records = manifest.split_records("test")
    net, metrics, ckpt = training.train(
        net, train_records, val_records, config, out_dir, label_space=manifest.label_space
    )
    csv_path = out_dir / "metrics.csv"
    training.write_metrics_csv(metrics, csv_path)
    plots = evaluation.plot_training_curves(csv_path, out_dir) if metrics else []
    print(f"metrics written to {csv_path}")
    for p in plots:
        print(f"plot written to {p}")
    if ckpt is not None:
        print(f"best checkpoint: {ckpt}")
    return EXIT_OK


def _read_predictions(path: str) -> tuple[list[str], list[str]]:
    import csv as _csv

    truth, pred = [], []
    with open(path, "r", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None or not {"truth", "pred"} <= set(reader.fieldnames):
            raise ValidationError(
                f"predictions file must have 'truth' and 'pred' columns: {path}"
            )
        for row in reader:
            truth.append(row["truth"])
            pred.append(row["pred"])
    if not truth:
        raise DataError(f"predictions file is empty: {path}")
    return truth, pred


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.predictions:
        truth, pred = _read_predictions(args.predictions)
        if args.labels:
            labels = [l.strip() for l in args.labels.split(",")]
        else:
            labels = sorted(set(truth) | set(pred))
        cm = evaluation.confusion_matrix(truth, pred, labels)
        report = evaluation.classification_report(cm)
        files = evaluation.export_report(
            report, cm, out_dir / "predictions_report", title="Classification Report"
        )
        print(evaluation.format_report_text(report))
        for f in files:
            print(f"wrote {f}")
        return EXIT_OK
    if not args.checkpoint:
        raise ValidationError("either --checkpoint or --predictions is required")
    if not args.manifest:
        raise ValidationError("a manifest is required when evaluating a checkpoint")
    manifest = load_manifest(args.manifest)
    net = load_checkpoint(args.checkpoint)
    if net.config.n_classes != len(manifest.label_space.members):
        raise ValidationError(
            f"checkpoint class head ({net.config.n_classes} labels) does not match "
            f"manifest label space {manifest.label_space.name!r} "
            f"({len(manifest.label_space.members)} labels)"
        )
    for head, stem, title in [
        ("category", "category_report", "Object Classification Report"),
        ("threat", "threat_report", "Threat Level Classification Report"),
    ]:
        cm, report = evaluation.evaluate_model(net, manifest, head)
        files = evaluation.export_report(report, cm, out_dir / stem, title=title)
        print(evaluation.format_report_text(report, title=title))
        for f in files:
            print(f"wrote {f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aerothreat",
        description="Dual-task airborne object classification and threat analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the deterministic synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--per-category", type=int, default=130)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("curate", help="ingest sources into a deduplicated manifest")
    p.add_argument("source", nargs="+", help="DIR:CATEGORY[:NAME]")
    p.add_argument("--name", default="dataset")
    p.add_argument("--space-name", default="CUSTOM")
    p.add_argument("--members", help="comma-separated label space members")
    p.add_argument("--balance", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("annotate", help="assign threat levels via a ruleset")
    p.add_argument("manifest")
    p.add_argument("--rules", help="rules JSON file (default: built-in example rules)")
    p.add_argument("--out", help="output manifest path (default: in place)")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("split", help="stratified train/test split")
    p.add_argument("manifest")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--out", help="output manifest path (default: in place)")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the dual-head network")
    p.add_argument("manifest")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-online", action="store_true")
    p.add_argument("--backbone", choices=["standin", "efficientnet-b4"], default="standin")
    p.add_argument("--out", required=True, help="run output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint or a predictions file")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="CSV of truth,pred pairs (bypasses the model)")
    p.add_argument("--labels", help="comma-separated label order for --predictions")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"unexpected error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
