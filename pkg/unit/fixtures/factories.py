"""Factories for feature sets, metadata and on-disk fixtures."""

from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from components.feature_store import export
from components.models import NO_TRACKLET, FeatureSet, ImageMeta
from components.synthetic import synth_auxiliary, synth_generate, synth_views
from history.artifacts import StageReport

# the standard synthetic fixture
STANDARD_FIXTURE = dict(
    num_ids=40,
    cams=4,
    tracklets_per_id=2,
    frames_per_tracklet=5,
    dim=32,
    camera_offset_scale=0.5,
    noise_scale=0.15,
)


class FeatureFactory:
    """Factory for creating test feature sets with various configurations."""

    @staticmethod
    def unit_rows(n: int, dim: int, seed: int = 0) -> np.ndarray:
        """Random unit vectors."""
        rows = np.random.default_rng(seed).standard_normal((n, dim))
        return rows / np.linalg.norm(rows, axis=1, keepdims=True)

    @staticmethod
    def create_metas(
        n: int,
        cameras: Optional[Sequence[int]] = None,
        identities: Optional[Sequence[Optional[int]]] = None,
        tracklets: Optional[Sequence[int]] = None,
        prefix: str = "img",
    ) -> list[ImageMeta]:
        """Metadata rows img0000, img0001, ... with optional per-row fields."""
        return [
            ImageMeta(
                image_id=f"{prefix}{i:04d}",
                camera_id=cameras[i] if cameras is not None else 0,
                tracklet_id=tracklets[i] if tracklets is not None else NO_TRACKLET,
                identity=identities[i] if identities is not None else None,
            )
            for i in range(n)
        ]

    @staticmethod
    def create_set(
        n: int,
        dim: int,
        seed: int = 0,
        metas: Optional[Sequence[ImageMeta]] = None,
        normalized: bool = True,
    ) -> FeatureSet:
        """Random FeatureSet; unit rows when normalized."""
        if normalized:
            data = FeatureFactory.unit_rows(n, dim, seed)
        else:
            data = np.random.default_rng(seed).standard_normal((n, dim)) * 3.0
        ids = tuple(m.image_id for m in metas) if metas is not None else ()
        return FeatureSet(data, normalized=normalized, ids=ids)

    @staticmethod
    def create_labeled_split(
        num_q: int,
        num_g: int,
        num_ids: int,
        cams: int,
        dim: int = 16,
        seed: int = 0,
    ) -> tuple[FeatureSet, list[ImageMeta], FeatureSet, list[ImageMeta]]:
        """Query and gallery sets with random identities and cameras."""
        rng = np.random.default_rng(seed)
        q_metas = FeatureFactory.create_metas(
            num_q,
            cameras=rng.integers(cams, size=num_q).tolist(),
            identities=rng.integers(num_ids, size=num_q).tolist(),
            prefix="q",
        )
        g_metas = FeatureFactory.create_metas(
            num_g,
            cameras=rng.integers(cams, size=num_g).tolist(),
            identities=rng.integers(num_ids, size=num_g).tolist(),
            prefix="g",
        )
        q = FeatureFactory.create_set(num_q, dim, seed + 1, q_metas)
        g = FeatureFactory.create_set(num_g, dim, seed + 2, g_metas)
        return q, q_metas, g, g_metas

    @staticmethod
    def create_standard(seed: int = 0, **overrides) -> tuple[FeatureSet, list[ImageMeta]]:
        """The standard synthetic fixture, optionally reshaped."""
        return synth_generate(**{**STANDARD_FIXTURE, **overrides}, seed=seed)

    @staticmethod
    def write_fixture(
        out_dir: Path,
        stages: Sequence[str],
        seed: int = 0,
        orientation_offset: float = 0.3,
        extra_config: Optional[dict] = None,
        **overrides,
    ) -> Path:
        """Write the standard fixture with views, models and auxiliary sets.

        Returns the path of a config.yaml wired to it, with run logging
        and history stored under out_dir.
        """
        out_dir = Path(out_dir)
        shape = {**STANDARD_FIXTURE, **overrides, "orientation_offset_scale": orientation_offset}
        fs, metas = synth_generate(**shape, seed=seed)
        views = synth_views(fs, metas, 0.3, seed + 100)
        export(views[0][0], metas, out_dir / "main.json")
        view_files = []
        for view_fs, view_metas in views:
            name = f"view_{view_metas[0].view.value}.json"
            export(view_fs, view_metas, out_dir / name)
            view_files.append(name)
        model_files = []
        for i in (1, 2):
            model_fs, model_metas = synth_generate(**shape, seed=seed + i)
            export(model_fs, model_metas, out_dir / f"model_{i}.json")
            model_files.append(f"model_{i}.json")
        export(synth_auxiliary(metas, "camera", 0.05, seed + 200), metas, out_dir / "camera.json")
        export(synth_auxiliary(metas, "orientation", 0.05, seed), metas, out_dir / "orientation.json")

        config = {
            "workdir": "work",
            "inputs": {
                "main": "main.json",
                "views": view_files,
                "models": model_files,
                "camera": "camera.json",
                "orientation": "orientation.json",
            },
            "stages": list(stages),
            "threading": {"max_workers": 2},
            "logging": {"enabled": True, "output_dir": "runs", "retention_days": 0},
            "history": {"enabled": True, "db_path": "history.duckdb"},
        }
        for section, values in (extra_config or {}).items():
            if isinstance(values, dict):
                config.setdefault(section, {}).update(values)
            else:
                config[section] = values
        path = out_dir / "config.yaml"
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(config, f, sort_keys=False)
        return path


    @staticmethod
    def write_standard(
        out_dir: Path, stages: Sequence[str], seed: int = 0, extra_config: Optional[dict] = None
    ) -> Path:
        """Write the plain standard fixture (no heading offset) as main.json."""
        out_dir = Path(out_dir)
        fs, metas = synth_generate(**STANDARD_FIXTURE, seed=seed)
        export(fs, metas, out_dir / "main.json")
        config = {
            "workdir": "work",
            "inputs": {"main": "main.json"},
            "stages": list(stages),
            "threading": {"max_workers": 2},
            **(extra_config or {}),
        }
        path = out_dir / "config.yaml"
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(config, f, sort_keys=False)
        return path


class ReportFactory:
    """Factory for ablation rows."""

    @staticmethod
    def create_row(
        run_id: str, variant: str, position: int, value: float, minutes: int = 0
    ) -> StageReport:
        """A StageReport with every metric set to value."""
        return StageReport(
            run_id=run_id,
            variant=variant,
            position=position,
            stages=("normalize", "rank", "evaluate"),
            map=value,
            rank1=value,
            rank5=value,
            rank10=value,
            num_queries=40,
            created_at=datetime(2025, 1, 1, tzinfo=timezone.utc) + timedelta(minutes=minutes),
        )
