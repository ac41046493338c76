"""Trivial baseline solver for the tabular tool-command slot.

Tabular-only competitions route to an external AutoML command; the engine
ships this constant-predictor baseline so fixtures and demos have a
working default. It reads the workspace maps, predicts the training
target mean, scores itself on a holdout slice, prints the validation line
the harness parses, and writes ``submission.csv``.

Run inside a workspace directory:  python -m expagent.baseline_tool
"""
from __future__ import annotations

import csv
import math
import sys
from pathlib import Path

TOOL_CODE = "import expagent.baseline_tool as t; t.main()\n"


def _read(path: Path) -> list[dict]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def main(workspace: str = ".", metric_name: str = "rmse", out_dir: str = ".") -> None:
    root = Path(workspace)
    out = Path(out_dir)
    train_targets = _read(root / "train_tab_target_map.csv")
    test_inputs = _read(root / "test_tab_input_map.csv")
    target_column = [c for c in train_targets[0] if c != "id"][0]
    values = [float(r[target_column]) for r in train_targets]
    holdout = max(1, len(values) // 5)
    mean = sum(values[:-holdout] or values) / len(values[:-holdout] or values)
    residuals = [(v - mean) ** 2 for v in values[-holdout:]]
    score = math.sqrt(sum(residuals) / len(residuals))
    print(f"Validation {metric_name.upper()}: {score:.6f}")

    with (out / "submission.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", target_column])
        for row in test_inputs:
            writer.writerow([row["id"], f"{mean:.6f}"])
    with (out / "validation_predictions.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "prediction"])
        for row in train_targets[-holdout:]:
            writer.writerow([row["id"], f"{mean:.6f}"])
    print("submission.csv written")


if __name__ == "__main__":
    main(*sys.argv[1:])
