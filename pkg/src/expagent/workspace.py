"""Per-run workspace: artifact files, unit tests, and cross-stage meta tests.

The workspace is the structured output of the setup phase: map files that
split raw data by modality, transform/metric/submission-format code, and
a task summary. Unit tests here are engine-built and task-agnostic; they
check structural properties of artifacts, never task semantics, and they
are never generated by the agent.

Map files are comma-separated tabular text with a header row whose first
column is named ``id``. Transform modules must define ``transform(values)``
and ``inverse_transform(values)`` over the list of target-column strings;
metric modules must define ``metric(y_true, y_pred) -> float``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .cycle import Feedback

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png", ".gif", ".bmp", ".tif", ".tiff", ".webp")

ARTIFACT_KINDS = ("input_map", "target_map", "transform_code", "metric_code",
                  "submission_format_code", "summary")

# Default artifact file names; names are configuration, the content
# contract is the invariant.
DEFAULT_NAMES = {
    "summary": "summary.md",
    "transform_code": "code_transform_tab_target_train.py",
    "metric_code": "code_metric.py",
    "submission_format_code": "code_submission_format.py",
    "example_submission": "example_submission.csv",
}


def map_file_name(split: str, modality: str, role: str) -> str:
    short = {"tabular": "tab", "text": "txt", "image": "img"}[modality]
    return f"{split}_{short}_{role}_map.csv"


@dataclass(frozen=True)
class WorkspaceArtifact:
    kind: str
    path: Path
    modality: Optional[str] = None
    split: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ValueError(f"unknown artifact kind {self.kind!r}")


class Workspace:
    """A run-scoped directory plus the registry of artifacts written to it."""

    def __init__(self, root: Path, sample_submission: Optional[Path] = None,
                 names: Optional[Mapping[str, str]] = None):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sample_submission = sample_submission
        self.names = dict(DEFAULT_NAMES)
        if names:
            self.names.update(names)
        self.artifacts: list[WorkspaceArtifact] = []
        self.modalities: Optional[dict] = None

    def path(self, name: str) -> Path:
        return self.root / self.names.get(name, name)

    def add_artifact(self, artifact: WorkspaceArtifact) -> None:
        self.artifacts.append(artifact)

    def set_modalities(self, modalities: Mapping[str, bool]) -> None:
        # evaluated once after modality identification, then frozen
        if self.modalities is None:
            self.modalities = dict(modalities)

    def maps(self, split: str) -> list[Path]:
        return [a.path for a in self.artifacts
                if a.kind in ("input_map", "target_map") and a.split == split]


def read_table(path: Path) -> tuple[list[str], list[dict]]:
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], []
        rows = [dict(zip(header, row)) for row in reader]
    return header, rows


def write_table(path: Path, header: list[str], rows: list[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fail(check: str, detail: str) -> Feedback:
    return Feedback.make("unit_test", False, f"[{check}] {detail}")


def _check_map_file(path: Path) -> Optional[Feedback]:
    if not path.exists():
        return _fail("file-exists", f"File not found: {path}")
    try:
        header, rows = read_table(path)
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        return _fail("parse", f"unreadable map file {path.name}: {exc}")
    if not header or header[0] != "id":
        return _fail("id-column", f"{path.name}: first column must be named 'id', got {header[:1]}")
    if len(header) < 2:
        return _fail("non-id-column", f"{path.name}: needs at least one column besides 'id'")
    if len(set(header)) != len(header):
        return _fail("duplicate-columns", f"{path.name}: duplicated column names in {header}")
    if not rows:
        return _fail("rows", f"{path.name}: map has no data rows")
    for i, row in enumerate(rows):
        if not row.get("id", "").strip():
            return _fail("empty-id", f"{path.name}: empty id at data row {i}")
    return None


def check_map(path: Path) -> Feedback:
    failure = _check_map_file(path)
    return failure or Feedback.make("unit_test", True, f"{path.name}: map checks passed")


def check_image_map(path: Path, root: Path) -> Feedback:
    failure = _check_map_file(path)
    if failure:
        return failure
    header, rows = read_table(path)
    for row in rows:
        for column in header[1:]:
            cell = row[column]
            candidate = Path(cell)
            if not candidate.is_absolute():
                candidate = root / candidate
            if candidate.suffix.lower() not in IMAGE_EXTENSIONS:
                return _fail("image-extension",
                             f"{path.name}: {cell!r} does not have a known image extension")
            if not candidate.exists():
                return _fail("image-exists", f"File not found: {cell}")
    return Feedback.make("unit_test", True, f"{path.name}: image map checks passed")


def transform_roundtrip_driver(workspace: Workspace, target_map: Path,
                               sample_size: int = 5) -> str:
    """Driver source for the transform round-trip check, run in the sandbox."""
    return f'''\
import csv, importlib.util, sys

spec = importlib.util.spec_from_file_location("target_transform", {str(workspace.path("transform_code"))!r})
mod = importlib.util.module_from_spec(spec)
spec.loader.exec_module(mod)

with open({str(target_map)!r}, newline="") as fh:
    rows = list(csv.DictReader(fh))
column = [c for c in rows[0] if c != "id"][0]
sample = [r[column] for r in rows[:{sample_size}]]
restored = mod.inverse_transform(mod.transform(sample))
if [str(v) for v in restored] != [str(v) for v in sample]:
    print("round-trip mismatch:", sample, "->", restored, file=sys.stderr)
    sys.exit(1)
print("round-trip ok on", len(sample), "targets")
'''


def metric_driver(workspace: Workspace) -> str:
    """Driver source for the metric finiteness check, run in the sandbox."""
    return f'''\
import importlib.util, math, sys

spec = importlib.util.spec_from_file_location("competition_metric", {str(workspace.path("metric_code"))!r})
mod = importlib.util.module_from_spec(spec)
spec.loader.exec_module(mod)

y_true = [0.0, 1.0, 0.5, 2.0]
y_pred = [0.1, 0.9, 0.4, 2.2]
value = float(mod.metric(y_true, y_pred))
if not math.isfinite(value):
    print("metric returned a non-finite value:", value, file=sys.stderr)
    sys.exit(1)
print("metric ok:", value)
'''


def check_submission_format(workspace: Workspace) -> Feedback:
    """Generated example submission must match the sample submission's
    header and id set exactly."""
    if workspace.sample_submission is None:
        return _fail("sample-submission", "workspace has no sample submission to compare against")
    example = workspace.path("example_submission")
    if not example.exists():
        return _fail("file-exists", f"File not found: {example}")
    want_header, want_rows = read_table(workspace.sample_submission)
    got_header, got_rows = read_table(example)
    if got_header != want_header:
        return _fail("header", f"expected header {want_header}, got {got_header}")
    want_ids = {r[want_header[0]] for r in want_rows}
    got_ids = {r[got_header[0]] for r in got_rows}
    if want_ids != got_ids:
        return _fail("id-set", f"id sets differ by {len(want_ids ^ got_ids)} entries")
    return Feedback.make("unit_test", True, "submission format matches the sample")


def _exec_check(driver: str, workspace: Workspace, executor, label: str) -> Feedback:
    from .sandbox import ExecRequest  # local import to avoid a cycle
    result = executor.execute(ExecRequest(code=driver, working_dir=workspace.root,
                                          time_limit=60.0))
    if result.ok:
        return Feedback.make("unit_test", True, result.stdout_tail)
    return _fail(label, result.stderr_tail or result.stdout_tail or "driver failed")


def run_unit_test(test_id: str, workspace: Workspace, executor=None) -> Feedback:
    """Dispatch a built-in unit test by id.

    Ids: ``map/<file>``, ``image_map/<file>``, ``transform_roundtrip``,
    ``metric``, ``submission_format``.
    """
    if test_id.startswith("map/"):
        return check_map(workspace.root / test_id[len("map/"):])
    if test_id.startswith("image_map/"):
        return check_image_map(workspace.root / test_id[len("image_map/"):], workspace.root)
    if test_id == "transform_roundtrip":
        if executor is None:
            return _fail("executor", "transform round-trip needs an executor")
        targets = [a.path for a in workspace.artifacts if a.kind == "target_map"]
        if not targets:
            return _fail("target-map", "no target map to round-trip against")
        return _exec_check(transform_roundtrip_driver(workspace, targets[0]),
                           workspace, executor, "transform-roundtrip")
    if test_id == "metric":
        if executor is None:
            return _fail("executor", "metric check needs an executor")
        return _exec_check(metric_driver(workspace), workspace, executor, "metric")
    if test_id == "submission_format":
        return check_submission_format(workspace)
    return _fail("unknown-test", f"no built-in unit test named {test_id!r}")


def run_meta_test(group_id: str, workspace: Workspace) -> Feedback:
    """Cross-stage consistency: all maps of a split join on a shared id set
    and a sample joint batch materializes."""
    split = {"train_maps": "train", "test_maps": "test"}.get(group_id)
    if split is None:
        return _fail("unknown-group", f"no meta test group named {group_id!r}")
    paths = workspace.maps(split)
    if not paths:
        return _fail("maps", f"no {split} maps registered")
    id_sets: list[tuple[Path, set[str], list[dict]]] = []
    for path in paths:
        header, rows = read_table(path)
        id_sets.append((path, {r["id"] for r in rows}, rows))
    reference = id_sets[0][1]
    for path, ids, _ in id_sets[1:]:
        if ids != reference:
            return _fail("id-join",
                         f"{path.name} id set differs from {id_sets[0][0].name} "
                         f"by {len(ids ^ reference)} ids")
    # materialize one joint batch: a row assembled from every map
    batch_ids = sorted(reference)[:3]
    for batch_id in batch_ids:
        joint = {}
        for path, _, rows in id_sets:
            match = next((r for r in rows if r["id"] == batch_id), None)
            if match is None:
                return _fail("batch", f"id {batch_id!r} missing from {path.name}")
            joint.update(match)
        if not joint:
            return _fail("batch", "joint batch is empty")
    return Feedback.make(
        "unit_test", True,
        f"{len(paths)} {split} maps join on {len(reference)} shared ids")
