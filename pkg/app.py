"""Command-line entry point for the ReID post-processing engine."""

from __future__ import annotations

import logging
import sys
from argparse import ArgumentParser, Namespace
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from components.auditing import RunLogger
from components.cluster import write_labels
from components.distance import load_distance
from components.errors import ReidError, ValidationError
from components.feature_store import export, ingest, read_metadata
from components.interfaces import Config
from components.models import FeatureSet
from components.pipeline import format_ablation_table, label_file_name, run_clustering, run_pipeline
from components.retrieval import evaluate, rank, write_report
from components.synthetic import synth_auxiliary, synth_generate, synth_views
from history.artifacts import load_features
from history.repository import StageReportRepository
from version import __version__

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


@dataclass
class Mode:
    """Command-line arguments"""

    command: str = "pipeline"
    """Subcommand to run"""
    config: str = "config.yaml"
    """Pipeline configuration file"""
    workdir: Optional[str] = None
    """Working directory for stage checkpoints (overrides the config)"""
    stages: Optional[str] = None
    """Comma-separated stage list (overrides the config)"""
    threads: Optional[int] = None
    """Worker threads for distance blocks and BLAS"""
    seed: int = 0
    """Random seed of the synthetic fixture"""
    verbose: bool = False
    """Log at DEBUG level"""

    @property
    def stage_list(self) -> Optional[list[str]]:
        """Parsed --stages value."""
        if not self.stages:
            return None
        return [s.strip() for s in self.stages.split(",") if s.strip()]


def _load_config(mode: Mode) -> Config:
    cfg = Config(mode.config)
    if mode.stages:
        cfg.override(stages=mode.stage_list)
    if mode.workdir:
        cfg.override(workdir=str(Path(mode.workdir).resolve()))
    cfg.override(max_workers=mode.threads)
    cfg.validate()
    return cfg


def _thread_limits(mode: Mode):
    return threadpool_limits(limits=mode.threads) if mode.threads else nullcontext()


def cmd_ingest_check(args: Namespace) -> int:
    """Validate manifests and print a one-line summary per set."""
    for manifest in args.manifests:
        fs, metas = ingest(manifest)
        cameras = {m.camera_id for m in metas}
        tracklets = {m.tracklet_key for m in metas}
        labeled = sum(1 for m in metas if m.identity is not None)
        print(
            f"{manifest}: {fs.count} x {fs.dim}, normalized={fs.normalized}, "
            f"{len(cameras)} cameras, {len(tracklets)} tracklets, {labeled} labeled"
        )
    return EXIT_OK


def cmd_pipeline(mode: Mode) -> int:
    """Run the configured stage list."""
    cfg = _load_config(mode)
    with _thread_limits(mode), RunLogger(cfg, "pipeline") as run_logger:
        result = run_pipeline(cfg, run_logger=run_logger)
    if result.report is not None:
        print(
            f"mAP {result.report.mAP * 100:.2f}  R-1 {result.report.rank1 * 100:.2f}  "
            f"({len(result.report.per_query_ap)} queries)"
        )
    if result.ablation:
        print(format_ablation_table(result.ablation))
        if cfg.history.enabled:
            StageReportRepository(str(cfg.resolve(cfg.history.db_path))).save_reports(
                result.ablation
            )
    return EXIT_OK


def cmd_cluster(mode: Mode, out: Optional[str], features: Optional[str] = None) -> int:
    """Write one pseudo-label file per configured parameter set.

    With ``features`` the query and gallery sets of a feature checkpoint are
    clustered together instead of the configured inputs.
    """
    cfg = _load_config(mode)
    inputs = cfg.inputs
    if features is not None:
        (query, q_metas), (gallery, g_metas) = load_features(Path(features))
        metas = q_metas + g_metas
        fs = FeatureSet.from_metas(np.vstack([query.data, gallery.data]), metas)
    elif inputs.main is not None:
        fs, metas = ingest(inputs.main)
    else:
        query, q_metas = ingest(inputs.query)
        gallery, g_metas = ingest(inputs.gallery)
        metas = q_metas + g_metas
        fs = FeatureSet.from_metas(np.vstack([query.data, gallery.data]), metas)
    out_dir = Path(out) if out else cfg.workdir

    with _thread_limits(mode), RunLogger(cfg, "cluster") as run_logger:
        with run_logger.stage("cluster") as summary:
            label_sets = run_clustering(cfg, fs, metas)
            summary["clusters"] = [labels.num_clusters for labels in label_sets]
    for labels in label_sets:
        path = write_labels(out_dir / label_file_name(labels.params), labels, metas)
        print(f"{path}: {labels.num_clusters} clusters, {labels.num_noise} noise")
    return EXIT_OK


def cmd_evaluate(args: Namespace, mode: Mode) -> int:
    """Score a checkpointed distance matrix against query/gallery metadata."""
    cfg = Config(mode.config) if Path(mode.config).is_file() else Config.from_dict({})
    evaluation = cfg.evaluation
    d = load_distance(args.distance)
    q_metas = read_metadata(args.query_meta)
    g_metas = read_metadata(args.gallery_meta)
    depth = d.shape[1] if evaluation.top_k_map == 0 else max(evaluation.top_k, evaluation.top_k_map)
    rl = rank(d, max(1, depth), evaluation.i2t, g_metas)
    report = evaluate(rl, q_metas, g_metas, evaluation.top_k_map, evaluation.same_camera_relevants)
    if args.output:
        write_report(args.output, report)
    print(f"mAP {report.mAP * 100:.2f}  R-1 {report.rank1 * 100:.2f}  R-5 {report.rank(5) * 100:.2f}")
    return EXIT_OK


def cmd_synth(args: Namespace, mode: Mode) -> int:
    """Write the synthetic fixture and a ready-to-run config."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shape = dict(
        num_ids=args.ids,
        cams=args.cams,
        tracklets_per_id=args.tracklets,
        frames_per_tracklet=args.frames,
        dim=args.dim,
        camera_offset_scale=args.offset,
        noise_scale=args.noise,
        orientation_offset_scale=args.orientation_offset,
    )
    fs, metas = synth_generate(**shape, seed=mode.seed)
    views = synth_views(fs, metas, args.view_noise, mode.seed + 100)
    export(views[0][0], metas, out / "main.json")
    view_files = []
    for view_fs, view_metas in views:
        name = f"view_{view_metas[0].view.value}.json" if view_metas else "view.json"
        export(view_fs, view_metas, out / name)
        view_files.append(name)
    model_files = []
    for i in (1, 2):
        model_fs, model_metas = synth_generate(**shape, seed=mode.seed + i)
        export(model_fs, model_metas, out / f"model_{i}.json")
        model_files.append(f"model_{i}.json")
    export(synth_auxiliary(metas, "camera", args.aux_noise, mode.seed + 200), metas, out / "camera.json")
    export(synth_auxiliary(metas, "orientation", args.aux_noise, mode.seed), metas, out / "orientation.json")

    config = {
        "workdir": "work",
        "inputs": {
            "main": "main.json",
            "views": view_files,
            "models": model_files,
            "camera": "camera.json",
            "orientation": "orientation.json",
        },
        "stages": [
            "normalize",
            "average_views",
            "ensemble",
            "camera_subtract",
            "fuse_eq4",
            "rerank",
            "tracklet",
            "camera_verify",
            "rank",
            "evaluate",
        ],
        "logging": {"enabled": True, "output_dir": "runs", "retention_days": 0},
        "history": {"enabled": True, "db_path": "history.duckdb"},
    }
    with open(out / "config.yaml", "w", encoding="utf-8") as f:
        yaml.safe_dump(config, f, sort_keys=False)
    print(f"Wrote synthetic fixture ({fs.count} images, seed {mode.seed}) to {out}")
    return EXIT_OK


def build_parser() -> ArgumentParser:
    """Argument parser with one subcommand per entry point."""
    parser = ArgumentParser(description="Vehicle ReID post-processing engine")
    parser.add_argument("--version", action="version", version=__version__)
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="Pipeline configuration file")
    common.add_argument("--workdir", help="Working directory for stage checkpoints (overrides the config)")
    common.add_argument("--stages", help="Comma-separated stage list (overrides the config)")
    common.add_argument("--threads", type=int, help="Worker threads for distance blocks and BLAS")
    common.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("ingest-check", parents=[common], help="Validate feature manifests")
    check.add_argument("manifests", nargs="+", help="Manifest files")

    sub.add_parser("pipeline", parents=[common], help="Run the configured stages")

    cluster = sub.add_parser("cluster", parents=[common], help="Generate pseudo labels")
    cluster.add_argument("--out", help="Directory for label files (default: workdir)")
    cluster.add_argument("--features", help="Feature checkpoint directory to cluster instead of the inputs")

    ev = sub.add_parser("evaluate", parents=[common], help="Score a distance checkpoint")
    ev.add_argument("--distance", required=True, help="Distance manifest (JSON sidecar)")
    ev.add_argument("--query-meta", required=True, help="Query metadata CSV")
    ev.add_argument("--gallery-meta", required=True, help="Gallery metadata CSV")
    ev.add_argument("--output", help="Write the report as JSON")

    synth = sub.add_parser("synth", parents=[common], help="Write the synthetic fixture")
    synth.add_argument("--out", default="out/synth", help="Output directory")
    synth.add_argument("--seed", type=int, default=0, help="Random seed of the synthetic fixture")
    synth.add_argument("--ids", type=int, default=40)
    synth.add_argument("--cams", type=int, default=4)
    synth.add_argument("--tracklets", type=int, default=2)
    synth.add_argument("--frames", type=int, default=5)
    synth.add_argument("--dim", type=int, default=32)
    synth.add_argument("--offset", type=float, default=0.5)
    synth.add_argument("--noise", type=float, default=0.15)
    synth.add_argument("--orientation-offset", type=float, default=0.3)
    synth.add_argument("--view-noise", type=float, default=0.3)
    synth.add_argument("--aux-noise", type=float, default=0.05)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the subcommand and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    mode = Mode(
        command=args.command,
        config=args.config,
        workdir=args.workdir,
        stages=args.stages,
        threads=args.threads,
        seed=getattr(args, "seed", 0),
        verbose=args.verbose,
    )
    logging.basicConfig(
        level=logging.DEBUG if mode.verbose else logging.INFO,
        format="%(asctime)s [%(threadName)-12s] %(levelname)-8s %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        match mode.command:
            case "ingest-check":
                return cmd_ingest_check(args)
            case "pipeline":
                return cmd_pipeline(mode)
            case "cluster":
                return cmd_cluster(mode, args.out, args.features)
            case "evaluate":
                return cmd_evaluate(args, mode)
            case "synth":
                return cmd_synth(args, mode)
    except (ValidationError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_VALIDATION
    except (ReidError, OSError) as e:
        logger.error("%s", e)
        return EXIT_RUNTIME
    return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
