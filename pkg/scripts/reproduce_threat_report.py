#!/usr/bin/env python3
"""Reproduce the degenerate all-HIGH threat classification report.

Builds the truth/prediction pairs (supports 23 LOW / 27 MEDIUM / 794 HIGH,
every prediction HIGH) and runs them through the metric engine via the
--predictions bypass, printing the report table.
"""

import argparse
import csv
import sys
import tempfile
from pathlib import Path

from aerothreat.cli import main as cli

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="threat_report_out")
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        preds = Path(tmp) / "preds.csv"
        with open(preds, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["truth", "pred"])
            for truth in ["LOW"] * 23 + ["MEDIUM"] * 27 + ["HIGH"] * 794:
                writer.writerow([truth, "HIGH"])
        sys.exit(
            cli(["evaluate", "--predictions", str(preds),
                 "--labels", "LOW,MEDIUM,HIGH", "--out", args.out])
        )
