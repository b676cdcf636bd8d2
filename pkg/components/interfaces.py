"""Typed access to config.yaml with safe defaults."""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Any, Optional

from yaml import safe_load  # type: ignore

from components.errors import ConfigError
from components.models import DbscanParams, RerankParams, TrackletMode

logger = logging.getLogger(__name__)

STAGE_NAMES = (
    "normalize",
    "average_views",
    "ensemble",
    "camera_subtract",
    "tracklet",
    "fuse_eq4",
    "rerank",
    "camera_verify",
    "rank",
    "evaluate",
    "cluster",
)
ENSEMBLE_MODES = ("features", "distances")
CAMERA_MEAN_MODES = ("other_tracklets", "all")


def _section(config: dict[str, Any], name: str) -> dict[str, Any]:
    values = config.get(name, {})
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ConfigError(name, f"must be a mapping, got {type(values).__name__}")
    return values


def _number(values: dict[str, Any], field: str, key: str, default: Any) -> float:
    """Float value of ``field.key``; anything else raises a ConfigError naming it."""
    value = values.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(f"{field}.{key}", f"must be a number, got {value!r}")
    try:
        return float(value)
    except ValueError as e:
        raise ConfigError(f"{field}.{key}", f"must be a number, got {value!r}") from e


def _integer(values: dict[str, Any], field: str, key: str, default: Any) -> int:
    number = _number(values, field, key, default)
    if not number.is_integer():
        raise ConfigError(f"{field}.{key}", f"must be an integer, got {values.get(key)!r}")
    return int(number)


def _flag(values: dict[str, Any], field: str, key: str, default: bool) -> bool:
    value = values.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{field}.{key}", f"must be true or false, got {value!r}")
    return value


class Config:
    """Provides an interface and safe defaults for config.yaml values.

    Input paths are resolved against the directory holding the config file.
    Malformed values raise ConfigError with the dotted field path.
    """

    def __init__(self, config_path: str | Path):
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            loaded = safe_load(f)
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("<root>", "config must be a mapping")
        self.config: dict[str, Any] = loaded or {}
        self.base_dir = path.parent.resolve()
        self.path = path

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | Path = ".") -> Config:
        """Build a Config from an in-memory mapping."""
        cfg = cls.__new__(cls)
        cfg.config = dict(data)
        cfg.base_dir = Path(base_dir).resolve()
        cfg.path = None
        return cfg

    def resolve(self, value: Optional[str]) -> Optional[Path]:
        """Path relative to the config directory, or None."""
        if not value:
            return None
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def workdir(self) -> Path:
        """Working directory for stage checkpoints."""
        return self.resolve(str(self.config.get("workdir", "out/work")))  # type: ignore

    @property
    def stages(self) -> list[str]:
        """Ordered stage list."""
        stages = self.config.get("stages", ["normalize", "rank", "evaluate"])
        if not isinstance(stages, (list, tuple)):
            raise ConfigError("stages", f"must be a list of stage names, got {stages!r}")
        return [str(s) for s in stages]

    def override(self, **values: Any) -> None:
        """Apply command-line overrides on top of the file values."""
        for key, value in values.items():
            if value is None:
                continue
            if key == "max_workers":
                self.config.setdefault("threading", {})["max_workers"] = value
            else:
                self.config[key] = value

    class Inputs:
        """Feature manifests consumed by the pipeline."""

        def __init__(self, config: Config) -> None:
            self._cfg = config
            self.inputs = _section(config.config, "inputs")

        def _path(self, key: str) -> Optional[Path]:
            value = self.inputs.get(key)
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"inputs.{key}", f"must be a path, got {value!r}")
            return self._cfg.resolve(value)

        def _paths(self, key: str) -> list[Path]:
            values = self.inputs.get(key, []) or []
            if not isinstance(values, list):
                raise ConfigError(f"inputs.{key}", "must be a list of paths")
            for i, value in enumerate(values):
                if not isinstance(value, str) or not value:
                    raise ConfigError(f"inputs.{key}[{i}]", f"must be a path, got {value!r}")
            return [self._cfg.resolve(v) for v in values]  # type: ignore

        @property
        def main(self) -> Optional[Path]:
            """Single labeled set split into query and gallery."""
            return self._path("main")

        @property
        def query(self) -> Optional[Path]:
            """Explicit query manifest."""
            return self._path("query")

        @property
        def gallery(self) -> Optional[Path]:
            """Explicit gallery manifest."""
            return self._path("gallery")

        @property
        def views(self) -> list[Path]:
            """Per-view manifests for the augmentation test."""
            return self._paths("views")

        @property
        def models(self) -> list[Path]:
            """Per-model manifests for the ensemble."""
            return self._paths("models")

        @property
        def camera(self) -> Optional[Path]:
            """Auxiliary camera embeddings."""
            return self._path("camera")

        @property
        def orientation(self) -> Optional[Path]:
            """Auxiliary orientation embeddings."""
            return self._path("orientation")

        def manifests(self) -> list[tuple[str, Path]]:
            """Every configured manifest with its dotted field path."""
            out = []
            for name in ("main", "query", "gallery", "camera", "orientation"):
                value = getattr(self, name)
                if value is not None:
                    out.append((f"inputs.{name}", value))
            out.extend((f"inputs.views[{i}]", p) for i, p in enumerate(self.views))
            out.extend((f"inputs.models[{i}]", p) for i, p in enumerate(self.models))
            return out

    @property
    def inputs(self) -> Config.Inputs:
        """Input manifests."""
        return Config.Inputs(self)

    class Params:
        """Post-processing parameters."""

        def __init__(self, config: dict[str, Any]) -> None:
            self.params = _section(config, "params")

        @property
        def alpha(self) -> float:
            """Camera-mean subtraction weight."""
            return _number(self.params, "params", "alpha", 0.18)

        @property
        def camera_mean(self) -> str:
            """other_tracklets (leave the image's tracklet out) or all."""
            return str(self.params.get("camera_mean", "other_tracklets"))

        @property
        def beta(self) -> float:
            """Frame weight when blending a frame with its tracklet."""
            return _number(self.params, "params", "beta", 0.0)

        @property
        def tracklet_mode(self) -> str:
            """mean or weighted."""
            return str(self.params.get("tracklet_mode", TrackletMode.WEIGHTED.value))

        @property
        def temperature(self) -> float:
            """Softmax temperature of the weighted tracklet scheme."""
            return _number(self.params, "params", "temperature", 1.0)

        @property
        def lambda1(self) -> float:
            """Camera distance weight."""
            return _number(self.params, "params", "lambda1", 0.1)

        @property
        def lambda2(self) -> float:
            """Orientation distance weight."""
            return _number(self.params, "params", "lambda2", 0.05)

        @property
        def k1(self) -> int:
            """Re-ranking neighborhood size."""
            return _integer(self.params, "params", "k1", 7)

        @property
        def k2(self) -> int:
            """Local query expansion size."""
            return _integer(self.params, "params", "k2", 2)

        @property
        def lambda_value(self) -> float:
            """Weight of the raw distance in the re-ranked distance."""
            return _number(self.params, "params", "lambda", 0.6)

        @property
        def block_size(self) -> int:
            """Rows per distance block."""
            return _integer(self.params, "params", "block_size", 512)

        @property
        def ensemble_mode(self) -> str:
            """features (concatenate) or distances (average matrices)."""
            return str(self.params.get("ensemble_mode", "features"))

        def rerank_params(self) -> RerankParams:
            """Validated re-ranking parameters."""
            return RerankParams(self.k1, self.k2, self.lambda_value)

    @property
    def params(self) -> Config.Params:
        """Post-processing parameters."""
        return Config.Params(self.config)

    class Cluster:
        """Pseudo-label generation."""

        def __init__(self, config: dict[str, Any]) -> None:
            self.cluster = _section(config, "cluster")

        @property
        def alpha(self) -> float:
            """Camera-mean subtraction weight before clustering."""
            return _number(self.cluster, "cluster", "alpha", 0.18)

        @property
        def beta(self) -> float:
            """Frame weight of the tracklet blend before clustering."""
            return _number(self.cluster, "cluster", "beta", 0.0005)

        @property
        def distance(self) -> str:
            """jaccard or raw."""
            return str(self.cluster.get("distance", "jaccard"))

        @property
        def rho(self) -> Optional[float]:
            """When set, eps is estimated from the distance distribution."""
            if self.cluster.get("rho") is None:
                return None
            return _number(self.cluster, "cluster", "rho", None)

        @property
        def param_sets(self) -> list[DbscanParams]:
            """One DBSCAN parameter pair per label file."""
            raw = self.cluster.get("param_sets")
            if not raw:
                return [
                    DbscanParams(
                        _number(self.cluster, "cluster", "eps", 0.6),
                        _integer(self.cluster, "cluster", "min_samples", 2),
                    )
                ]
            if not isinstance(raw, list):
                raise ConfigError("cluster.param_sets", "must be a list of {eps, min_samples}")
            out = []
            for i, item in enumerate(raw):
                field = f"cluster.param_sets[{i}]"
                if not isinstance(item, dict) or "eps" not in item:
                    raise ConfigError(field, "needs eps and min_samples")
                out.append(
                    DbscanParams(
                        _number(item, field, "eps", None),
                        _integer(item, field, "min_samples", 2),
                    )
                )
            return out

    @property
    def cluster(self) -> Config.Cluster:
        """Pseudo-label generation."""
        return Config.Cluster(self.config)

    class Evaluation:
        """Ranking and scoring."""

        def __init__(self, config: dict[str, Any]) -> None:
            self.evaluation = _section(config, "evaluation")

        @property
        def top_k(self) -> int:
            """Length of the exported ranking per query."""
            return _integer(self.evaluation, "evaluation", "top_k", 100)

        @property
        def top_k_map(self) -> int:
            """mAP truncation (0 = full list)."""
            return _integer(self.evaluation, "evaluation", "top_k_map", 100)

        @property
        def i2t(self) -> bool:
            """Rank gallery tracklets instead of images."""
            return _flag(self.evaluation, "evaluation", "i2t", False)

        @property
        def same_camera_relevants(self) -> bool:
            """Count same-camera matches as relevant."""
            return _flag(self.evaluation, "evaluation", "same_camera_relevants", True)

        @property
        def ablation(self) -> bool:
            """Print the cumulative stage table."""
            return _flag(self.evaluation, "evaluation", "ablation", True)

    @property
    def evaluation(self) -> Config.Evaluation:
        """Ranking and scoring."""
        return Config.Evaluation(self.config)

    class Threading:
        """Threading configuration."""

        def __init__(self, config: dict[str, Any]) -> None:
            self.threading = _section(config, "threading")

        @property
        def max_workers(self) -> int:
            """Number of threads for blockwise distance work."""
            return _integer(self.threading, "threading", "max_workers", 4)

    @property
    def threading(self) -> Config.Threading:
        """Threading configuration."""
        return Config.Threading(self.config)

    class Logging:
        """Run logging configuration."""

        def __init__(self, config: dict[str, Any]) -> None:
            self.logging_config = _section(config, "logging")

        @property
        def enabled(self) -> bool:
            """Whether to write run logs."""
            return _flag(self.logging_config, "logging", "enabled", True)

        @property
        def output_dir(self) -> str:
            """Directory for run logs."""
            return str(self.logging_config.get("output_dir", "out/runs"))

        @property
        def retention_days(self) -> int:
            """Days to keep old run logs (0 = keep forever)."""
            return _integer(self.logging_config, "logging", "retention_days", 90)

    @property
    def logging(self) -> Config.Logging:
        """Run logging configuration."""
        return Config.Logging(self.config)

    class History:
        """Run history store."""

        def __init__(self, config: dict[str, Any]) -> None:
            self.history = _section(config, "history")

        @property
        def enabled(self) -> bool:
            """Whether ablation rows are stored."""
            return _flag(self.history, "history", "enabled", True)

        @property
        def db_path(self) -> str:
            """DuckDB file."""
            return str(self.history.get("db_path", "out/history.duckdb"))

    @property
    def history(self) -> Config.History:
        """Run history store."""
        return Config.History(self.config)

    def validate(self) -> None:
        """Reject missing manifests, malformed and out-of-range values.

        Every section is read once, so a bad value anywhere surfaces here
        as a ConfigError naming the offending field.
        """
        for name in self.stages:
            if name not in STAGE_NAMES:
                raise ConfigError("stages", f"unknown stage '{name}'")

        inputs = self.inputs
        if inputs.main is None and (inputs.query is None or inputs.gallery is None):
            raise ConfigError("inputs", "set inputs.main or both inputs.query and inputs.gallery")
        for field, path in inputs.manifests():
            if not path.is_file():
                raise ConfigError(field, f"manifest not found: {path}")

        params = self.params
        params.rerank_params()
        if not math.isfinite(params.alpha):
            raise ConfigError("params.alpha", "must be finite")
        if params.camera_mean not in CAMERA_MEAN_MODES:
            raise ConfigError("params.camera_mean", f"must be one of {CAMERA_MEAN_MODES}")
        if not 0.0 <= params.beta <= 1.0:
            raise ConfigError("params.beta", f"must lie in [0, 1], got {params.beta}")
        try:
            TrackletMode(params.tracklet_mode)
        except ValueError as e:
            raise ConfigError("params.tracklet_mode", "must be mean or weighted") from e
        if not params.temperature > 0:
            raise ConfigError("params.temperature", "must be positive")
        for name in ("lambda1", "lambda2"):
            if not math.isfinite(getattr(params, name)):
                raise ConfigError(f"params.{name}", "must be finite")
        if params.block_size < 1:
            raise ConfigError("params.block_size", "must be a positive integer")
        if params.ensemble_mode not in ENSEMBLE_MODES:
            raise ConfigError("params.ensemble_mode", f"must be one of {ENSEMBLE_MODES}")

        cluster = self.cluster
        if not cluster.param_sets:
            raise ConfigError("cluster.param_sets", "at least one parameter set is required")
        if cluster.distance not in ("jaccard", "raw"):
            raise ConfigError("cluster.distance", "must be jaccard or raw")
        if not math.isfinite(cluster.alpha):
            raise ConfigError("cluster.alpha", "must be finite")
        if not 0.0 <= cluster.beta <= 1.0:
            raise ConfigError("cluster.beta", f"must lie in [0, 1], got {cluster.beta}")
        if cluster.rho is not None and not 0.0 < cluster.rho <= 1.0:
            raise ConfigError("cluster.rho", "must lie in (0, 1]")

        evaluation = self.evaluation
        if evaluation.top_k < 1:
            raise ConfigError("evaluation.top_k", "must be a positive integer")
        if evaluation.top_k_map < 0:
            raise ConfigError("evaluation.top_k_map", "must be >= 0")
        if self.threading.max_workers < 1:
            raise ConfigError("threading.max_workers", "must be >= 1")
        # read the remaining flags once so a malformed one fails here
        for section, names in (
            (evaluation, ("i2t", "same_camera_relevants", "ablation")),
            (self.logging, ("enabled", "retention_days")),
            (self.history, ("enabled",)),
        ):
            for name in names:
                getattr(section, name)
        logger.debug("Configuration validated (%d stages)", len(self.stages))
