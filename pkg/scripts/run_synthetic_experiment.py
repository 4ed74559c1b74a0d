#!/usr/bin/env python3
"""End-to-end experiment on the synthetic shape/hue dataset.

Generates the dataset, curates it into a manifest, annotates threat levels,
splits, trains the dual-head network and evaluates both heads. All artifacts
land under the chosen output directory.
"""

import argparse
import sys
from pathlib import Path

from aerothreat.cli import main as cli
from aerothreat.synth import SYNTH_SPACE


def run(out: Path, epochs: int, per_category: int, seed: int) -> int:
    data = out / "data"
    rc = cli(["synth", "--out", str(data), "--per-category", str(per_category),
              "--seed", str(seed)])
    if rc:
        return rc
    sources = [f"{data / s.lower()}:{s}" for s in SYNTH_SPACE.members]
    rc = cli(["curate", *sources, "--space-name", "SYNTH", "--name", "synthetic",
              "--seed", str(seed), "--out", str(out)])
    if rc:
        return rc
    manifest = out / "manifest.jsonl"
    rc = cli(["annotate", str(manifest), "--rules", str(data / "rules.json")])
    if rc:
        return rc
    rc = cli(["split", str(manifest), "--train-fraction", "0.77", "--seed", str(seed)])
    if rc:
        return rc
    run_dir = out / "run"
    rc = cli(["train", str(manifest), "--epochs", str(epochs), "--seed", str(seed),
              "--out", str(run_dir)])
    if rc:
        return rc
    return cli(["evaluate", str(manifest),
                "--checkpoint", str(run_dir / "best_checkpoint.npz"),
                "--out", str(out / "eval")])


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="synthetic_experiment")
    parser.add_argument("--epochs", type=int, default=60)
    parser.add_argument("--per-category", type=int, default=130)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    sys.exit(run(Path(args.out), args.epochs, args.per_category, args.seed))
