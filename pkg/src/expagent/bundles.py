"""Competition bundles: the offline stand-in for live competition access.

A bundle directory holds everything one competition needs:

    bundle/
      bundle.json            manifest: metric, direction, k_c, team_count,
                             deadline, class, task_type
      description.md         task description shown to the agent
      data/                  raw competition data
      sample_submission.csv  header + id set for submissions
      leaderboard.csv        team, private_score[, public_score]  (optional)
      answers.csv            id, target, usage(Public|Private)    (optional)

Without a leaderboard the bundle still runs, but evaluation is disabled.
"""
from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import BundleError
from .leaderboard import LeaderboardSnapshot, load_leaderboard

REQUIRED_MANIFEST_FIELDS = ("competition_id", "metric", "direction")
DEFAULT_K_C = 2  # modal selection budget across the benchmark


@dataclass
class CompetitionBundle:
    bundle_dir: Path
    competition_id: str
    metric: str
    direction: str
    k_c: int = DEFAULT_K_C
    team_count: Optional[int] = None
    deadline: Optional[str] = None
    competition_class: str = "tabular"  # tabular | cv_nlp
    task_type: str = "regression"       # regression | classification
    warnings: list[str] = field(default_factory=list)

    @property
    def description_path(self) -> Path:
        return self.bundle_dir / "description.md"

    @property
    def data_dir(self) -> Path:
        return self.bundle_dir / "data"

    @property
    def sample_submission(self) -> Path:
        return self.bundle_dir / "sample_submission.csv"

    @property
    def leaderboard_path(self) -> Path:
        return self.bundle_dir / "leaderboard.csv"

    @property
    def answers_path(self) -> Path:
        return self.bundle_dir / "answers.csv"

    @property
    def evaluation_enabled(self) -> bool:
        return self.leaderboard_path.exists() and self.answers_path.exists()

    def description(self) -> str:
        return self.description_path.read_text(encoding="utf-8")

    def leaderboard(self) -> LeaderboardSnapshot:
        return load_leaderboard(self.leaderboard_path, self.direction, self.k_c)


def ingest_bundle(path: Path | str) -> CompetitionBundle:
    """Validate a bundle directory and fill manifest defaults."""
    bundle_dir = Path(path)
    if not bundle_dir.is_dir():
        raise BundleError(f"bundle directory does not exist: {bundle_dir}")
    manifest_path = bundle_dir / "bundle.json"
    if not manifest_path.exists():
        raise BundleError(f"bundle manifest missing: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle manifest is not valid JSON: {exc}") from exc
    for field_name in REQUIRED_MANIFEST_FIELDS:
        if field_name not in manifest:
            raise BundleError(f"bundle manifest missing field {field_name!r}")
    if manifest["direction"] not in ("maximize", "minimize"):
        raise BundleError(f"bundle manifest field 'direction' must be "
                          f"maximize or minimize, got {manifest['direction']!r}")
    if not (bundle_dir / "sample_submission.csv").exists():
        raise BundleError("bundle has no sample_submission.csv")
    if not (bundle_dir / "description.md").exists():
        raise BundleError("bundle has no description.md")

    bundle = CompetitionBundle(
        bundle_dir=bundle_dir,
        competition_id=manifest["competition_id"],
        metric=manifest["metric"],
        direction=manifest["direction"],
        k_c=int(manifest.get("k_c", DEFAULT_K_C)),
        team_count=manifest.get("team_count"),
        deadline=manifest.get("deadline"),
        competition_class=manifest.get("class", "tabular"),
        task_type=manifest.get("task_type", "regression"),
    )
    if not bundle.leaderboard_path.exists():
        bundle.warnings.append("no leaderboard.csv: evaluation disabled for this bundle")
    elif not bundle.answers_path.exists():
        bundle.warnings.append("no answers.csv: submissions cannot be scored")
    if bundle.team_count is None and bundle.leaderboard_path.exists():
        bundle.team_count = bundle.leaderboard().n
    return bundle


class BundleFetcher:
    """Live competition fetching stub behind the bundle interface.

    Disabled by default; every acceptance and test path uses directory
    bundles. When enabled it downloads a bundle archive from an endpoint.
    """

    def __init__(self, endpoint: str = "", enabled: bool = False):
        self.endpoint = endpoint
        self.enabled = enabled

    def fetch(self, competition_id: str, target_dir: Path) -> CompetitionBundle:
        if not self.enabled:
            raise BundleError("live bundle fetching is disabled; provide a bundle directory")
        with urllib.request.urlopen(f"{self.endpoint}/{competition_id}") as response:
            payload = response.read()
        target_dir = Path(target_dir)
        target_dir.mkdir(parents=True, exist_ok=True)
        (target_dir / "bundle_archive").write_bytes(payload)
        raise BundleError("archive unpacking is not implemented in the stub fetcher")
