"""Stage checkpoints in the working directory and ablation report rows."""

from __future__ import annotations

import json
import logging
import shutil
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

from components.distance import load_distance, save_distance
from components.errors import ManifestFormatError
from components.feature_store import export, ingest
from components.models import DistanceMatrix, EvalReport, FeatureSet, ImageMeta

logger = logging.getLogger(__name__)

STAGE_FILE = "stage.json"


class CheckpointKind(str, Enum):
    """What a stage directory holds."""

    FEATURES = "features"
    DISTANCE = "distance"
    RANKING = "ranking"
    REPORT = "report"
    LABELS = "labels"


@dataclass
class StageCheckpoint:
    """Description of one ``<NN>_<stage>`` directory."""

    stage: str
    index: int
    kind: CheckpointKind
    params: dict[str, Any] = field(default_factory=dict)
    files: dict[str, str] = field(default_factory=dict)

    @property
    def dirname(self) -> str:
        """Directory name inside the working directory."""
        return f"{self.index:02d}_{self.stage}"

    def to_dict(self) -> dict[str, Any]:
        """Serialized form written to stage.json."""
        return {
            "stage": self.stage,
            "index": self.index,
            "kind": self.kind.value,
            "params": self.params,
            "files": self.files,
        }


def prepare_workdir(workdir: Path) -> Path:
    """Create the working directory, removing stale stage directories."""
    workdir.mkdir(parents=True, exist_ok=True)
    for child in workdir.iterdir():
        if child.is_dir() and (child / STAGE_FILE).is_file():
            shutil.rmtree(child)
    return workdir


def _write_stage_file(stage_dir: Path, checkpoint: StageCheckpoint) -> None:
    with open(stage_dir / STAGE_FILE, "w", encoding="utf-8") as f:
        json.dump(checkpoint.to_dict(), f, indent=2, sort_keys=True)


def save_features(
    workdir: Path,
    checkpoint: StageCheckpoint,
    query: tuple[FeatureSet, Sequence[ImageMeta]],
    gallery: tuple[FeatureSet, Sequence[ImageMeta]],
) -> Path:
    """Checkpoint the query and gallery feature sets of a stage."""
    stage_dir = workdir / checkpoint.dirname
    stage_dir.mkdir(parents=True, exist_ok=True)
    export(query[0], query[1], stage_dir / "query.json")
    export(gallery[0], gallery[1], stage_dir / "gallery.json")
    checkpoint.files.update({"query": "query.json", "gallery": "gallery.json"})
    _write_stage_file(stage_dir, checkpoint)
    return stage_dir


def save_distance_checkpoint(
    workdir: Path, checkpoint: StageCheckpoint, d: DistanceMatrix
) -> Path:
    """Checkpoint the distance matrix of a stage."""
    stage_dir = workdir / checkpoint.dirname
    stage_dir.mkdir(parents=True, exist_ok=True)
    save_distance(d, stage_dir / "distance.json")
    checkpoint.files["distance"] = "distance.json"
    _write_stage_file(stage_dir, checkpoint)
    return stage_dir


def save_files(workdir: Path, checkpoint: StageCheckpoint) -> Path:
    """Record a stage whose outputs were written by the caller."""
    stage_dir = workdir / checkpoint.dirname
    stage_dir.mkdir(parents=True, exist_ok=True)
    _write_stage_file(stage_dir, checkpoint)
    return stage_dir


def read_checkpoint(stage_dir: Path) -> StageCheckpoint:
    """Parse a stage.json."""
    path = Path(stage_dir) / STAGE_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no stage checkpoint at {stage_dir}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
        return StageCheckpoint(
            stage=raw["stage"],
            index=int(raw["index"]),
            kind=CheckpointKind(raw["kind"]),
            params=dict(raw.get("params", {})),
            files=dict(raw.get("files", {})),
        )
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ManifestFormatError(f"{path}: invalid stage checkpoint ({e})") from e


def load_features(stage_dir: Path) -> tuple[tuple[FeatureSet, list[ImageMeta]], tuple[FeatureSet, list[ImageMeta]]]:
    """Reload the query and gallery sets of a feature checkpoint."""
    checkpoint = read_checkpoint(stage_dir)
    if checkpoint.kind is not CheckpointKind.FEATURES:
        raise ManifestFormatError(f"{stage_dir} holds {checkpoint.kind.value}, not features")
    return (
        ingest(Path(stage_dir) / checkpoint.files["query"]),
        ingest(Path(stage_dir) / checkpoint.files["gallery"]),
    )


def load_distance_checkpoint(stage_dir: Path) -> DistanceMatrix:
    """Reload the distance matrix of a distance checkpoint."""
    checkpoint = read_checkpoint(stage_dir)
    return load_distance(Path(stage_dir) / checkpoint.files["distance"])


def find_last(workdir: Path, kind: CheckpointKind) -> Optional[Path]:
    """Most recent stage directory of the given kind."""
    found = None
    for child in sorted(Path(workdir).iterdir()) if Path(workdir).is_dir() else []:
        if (child / STAGE_FILE).is_file() and read_checkpoint(child).kind is kind:
            found = child
    return found


@dataclass
class StageReport:
    """One row of an ablation table."""

    run_id: str
    variant: str
    position: int
    stages: tuple[str, ...]
    map: float
    rank1: float
    rank5: float
    rank10: float
    num_queries: int
    created_at: datetime

    @staticmethod
    def new(
        run_id: str,
        variant: str,
        position: int,
        stages: Sequence[str],
        report: EvalReport,
    ) -> StageReport:
        """Build a row from an evaluation report."""
        return StageReport(
            run_id=run_id,
            variant=variant,
            position=position,
            stages=tuple(stages),
            map=float(report.mAP),
            rank1=report.rank(1),
            rank5=report.rank(5),
            rank10=report.rank(10),
            num_queries=report.num_queries,
            created_at=datetime.now(timezone.utc),
        )


def new_run_id() -> str:
    """Identifier grouping the rows of one ablation."""
    return str(uuid.uuid4())
