"""Stage executor behind the ``pipeline`` command.

A run loads the configured feature sets, applies the ordered stage list,
checkpoints every stage into the working directory and, when ground truth
is available, replays cumulative stage subsets to build an ablation table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from components.auditing import RunLogger
from components.cluster import estimate_eps, generate_label_sets, write_labels, cluster_distance
from components.distance import (
    ensemble_distances,
    fuse_distances,
    pairwise,
    tracklet_distances,
)
from components.errors import (
    AlignmentError,
    ConfigError,
    MissingViewError,
    StageOrderError,
)
from components.feature_ops import (
    average_views,
    camera_means,
    ensemble_features,
    fuse_tracklet,
    l2_normalize,
    subtract_camera_mean,
    subtract_other_tracklet_mean,
    tracklet_aggregate,
)
from components.feature_store import ingest
from components.interfaces import STAGE_NAMES, Config
from components.models import (
    DbscanParams,
    DistanceMatrix,
    EvalReport,
    FeatureSet,
    ImageMeta,
    PseudoLabels,
    RankList,
)
from components.rerank import rerank
from components.retrieval import (
    camera_verify_mask,
    evaluate,
    rank,
    write_ranking,
    write_report,
)
from components.synthetic import split_query_gallery
from history.artifacts import (
    CheckpointKind,
    StageCheckpoint,
    StageReport,
    new_run_id,
    prepare_workdir,
    save_distance_checkpoint,
    save_features,
    save_files,
)

logger = logging.getLogger(__name__)

FEATURE_STAGES = ("normalize", "average_views", "ensemble", "camera_subtract", "tracklet")
DISTANCE_STAGES = ("fuse_eq4", "rerank")
ABLATION_ORDER = (
    "average_views",
    "ensemble",
    "rerank",
    "tracklet",
    "camera_verify",
    "camera_subtract",
    "fuse_eq4",
)
_PHASES = {"camera_verify": 2, "rank": 3, "evaluate": 4}


@dataclass(frozen=True)
class PlannedStage:
    """A stage with its position and whether it acts on distances."""

    name: str
    index: int
    on_distances: bool = False


def plan_stages(stages: Sequence[str]) -> list[PlannedStage]:
    """Check the stage order and resolve where the tracklet step applies.

    Feature stages come first, then fuse_eq4/rerank, then camera_verify,
    rank and evaluate. A tracklet stage after a distance stage works on
    distances; cluster may follow the feature stages anywhere.
    """
    plan: list[PlannedStage] = []
    seen: set[str] = set()
    phase = 0
    previous = None
    distance_seen = False
    distance_tracklet = False
    for index, name in enumerate(stages):
        if name not in STAGE_NAMES:
            raise StageOrderError(f"unknown stage '{name}'", stage=name)
        if name in seen:
            raise StageOrderError(f"stage '{name}' listed twice", stage=name)
        seen.add(name)
        on_distances = False
        if name == "cluster":
            plan.append(PlannedStage(name, index))
            previous = name
            continue
        if name == "tracklet" and distance_seen:
            stage_phase = 1
            on_distances = True
            distance_tracklet = True
        elif name in FEATURE_STAGES:
            stage_phase = 0
            if "cluster" in seen:
                raise StageOrderError(f"feature stage '{name}' cannot follow cluster", stage=name)
        elif name in DISTANCE_STAGES:
            stage_phase = 1
            if name == "rerank" and distance_tracklet:
                raise StageOrderError(
                    "rerank recomputes distances from features and cannot "
                    "follow a distance-level tracklet stage",
                    stage=name,
                )
            distance_seen = True
        else:
            stage_phase = _PHASES[name]
        if stage_phase < phase:
            raise StageOrderError(f"stage '{name}' cannot follow '{previous}'", stage=name)
        if name == "evaluate" and "rank" not in seen:
            raise StageOrderError("evaluate requires a preceding rank stage", stage=name)
        phase = stage_phase
        previous = name
        plan.append(PlannedStage(name, index, on_distances))
    return plan


def ablation_variants(stages: Sequence[str]) -> list[tuple[str, list[str]]]:
    """Cumulative stage subsets: the baseline plus one ablation stage at a time."""
    present = [s for s in ABLATION_ORDER if s in stages]
    base = [s for s in stages if s not in ABLATION_ORDER and s != "cluster"]
    variants = [("baseline", base)]
    enabled: set[str] = set()
    for name in present:
        enabled.add(name)
        subset = [s for s in stages if s in enabled or s in base]
        variants.append((f"+{name}", subset))
    return variants


@dataclass
class Extras:
    """Auxiliary sets aligned row-for-row with one split."""

    views: list[tuple[FeatureSet, list[ImageMeta]]] = field(default_factory=list)
    models: list[FeatureSet] = field(default_factory=list)
    camera: Optional[FeatureSet] = None
    orientation: Optional[FeatureSet] = None


@dataclass
class PipelineInputs:
    """Query and gallery sets with their aligned auxiliary inputs."""

    query: FeatureSet
    q_metas: list[ImageMeta]
    gallery: FeatureSet
    g_metas: list[ImageMeta]
    q_extras: Extras
    g_extras: Extras


@dataclass
class PipelineState:
    """Mutable working state threaded through the stages."""

    query: FeatureSet
    q_metas: list[ImageMeta]
    gallery: FeatureSet
    g_metas: list[ImageMeta]
    q_extras: Extras
    g_extras: Extras
    distance: Optional[DistanceMatrix] = None
    fused: bool = False
    ensemble_models: bool = False
    ranking: Optional[RankList] = None
    report: Optional[EvalReport] = None
    labels: list[PseudoLabels] = field(default_factory=list)

    @staticmethod
    def start(inputs: PipelineInputs) -> PipelineState:
        """Fresh state over the loaded inputs."""
        return PipelineState(
            inputs.query,
            list(inputs.q_metas),
            inputs.gallery,
            list(inputs.g_metas),
            inputs.q_extras,
            inputs.g_extras,
        )


@dataclass
class PipelineResult:
    """Outputs of a pipeline run."""

    state: PipelineState
    ablation: list[StageReport] = field(default_factory=list)

    @property
    def report(self) -> Optional[EvalReport]:
        """Evaluation of the full stage list, when evaluated."""
        return self.state.report


def _align(
    fs: FeatureSet,
    metas: Sequence[ImageMeta],
    wanted: Sequence[ImageMeta],
    set_index: Optional[int] = None,
) -> tuple[FeatureSet, list[ImageMeta]]:
    """Rows of fs matching the wanted image ids, in the wanted order."""
    position = {m.image_id: i for i, m in enumerate(metas)}
    rows = []
    for m in wanted:
        if m.image_id not in position:
            if set_index is not None:
                raise MissingViewError(m.image_id, set_index)
            raise AlignmentError(f"image '{m.image_id}' missing from an auxiliary set")
        rows.append(position[m.image_id])
    picked = [metas[i] for i in rows]
    data = fs.data[rows] if rows else np.zeros((0, fs.dim), dtype=np.float32)
    return FeatureSet.from_metas(data, picked, fs.normalized), picked


def _normalized(fs: FeatureSet) -> FeatureSet:
    return fs if fs.normalized else l2_normalize(fs)


def load_inputs(cfg: Config) -> PipelineInputs:
    """Ingest the configured manifests and split or align them."""
    inputs = cfg.inputs
    if inputs.query is not None and inputs.gallery is not None:
        query, q_metas = ingest(inputs.query)
        gallery, g_metas = ingest(inputs.gallery)
    elif inputs.main is not None:
        main, metas = ingest(inputs.main)
        query, q_metas, gallery, g_metas = split_query_gallery(main, metas)
    else:
        raise ConfigError("inputs", "set inputs.main or both inputs.query and inputs.gallery")

    q_extras, g_extras = Extras(), Extras()
    for set_index, path in enumerate(inputs.views):
        fs, metas = ingest(path)
        q_extras.views.append(_align(fs, metas, q_metas, set_index))
        g_extras.views.append(_align(fs, metas, g_metas, set_index))
    for path in inputs.models:
        fs, metas = ingest(path)
        q_extras.models.append(_normalized(_align(fs, metas, q_metas)[0]))
        g_extras.models.append(_normalized(_align(fs, metas, g_metas)[0]))
    for name in ("camera", "orientation"):
        path = getattr(inputs, name)
        if path is not None:
            fs, metas = ingest(path)
            setattr(q_extras, name, _normalized(_align(fs, metas, q_metas)[0]))
            setattr(g_extras, name, _normalized(_align(fs, metas, g_metas)[0]))
    logger.info(
        "Loaded %d queries and %d gallery images (%d views, %d models)",
        query.count,
        gallery.count,
        len(q_extras.views),
        len(q_extras.models),
    )
    return PipelineInputs(query, q_metas, gallery, g_metas, q_extras, g_extras)


def check_inputs(stages: Sequence[str], cfg: Config) -> None:
    """Stages that need optional inputs must have them configured."""
    inputs = cfg.inputs
    if "average_views" in stages and not inputs.views:
        raise ConfigError("inputs.views", "average_views needs per-view manifests")
    if "ensemble" in stages and not inputs.models:
        raise ConfigError("inputs.models", "ensemble needs per-model manifests")
    if "fuse_eq4" in stages:
        for name in ("camera", "orientation"):
            if getattr(inputs, name) is None:
                raise ConfigError(f"inputs.{name}", "fuse_eq4 needs camera and orientation embeddings")


class StageRunner:
    """Applies planned stages to a PipelineState."""

    def __init__(
        self,
        cfg: Config,
        workdir: Optional[Path] = None,
        run_logger: Optional[RunLogger] = None,
    ):
        self.cfg = cfg
        self.params = cfg.params
        self.workdir = workdir
        self.run_logger = run_logger
        self.max_workers = cfg.threading.max_workers

    def run(self, state: PipelineState, plan: Sequence[PlannedStage]) -> PipelineState:
        """Execute every stage in order."""
        for stage in plan:
            if self.run_logger is not None:
                with self.run_logger.stage(stage.name, stage.index) as summary:
                    self._run_stage(state, stage, summary)
            else:
                self._run_stage(state, stage, {})
        return state

    def _run_stage(self, state: PipelineState, stage: PlannedStage, summary: dict) -> None:
        handler = getattr(self, f"_stage_{stage.name}")
        if stage.name == "tracklet":
            handler(state, stage.on_distances)
        else:
            handler(state)
        logger.debug("Stage %d %s done", stage.index, stage.name)
        if state.report is not None and stage.name == "evaluate":
            summary.update(mAP=round(state.report.mAP, 6), rank1=round(state.report.rank1, 6))
        if self.workdir is not None:
            self._checkpoint(state, stage)

    # feature stages

    def _stage_normalize(self, state: PipelineState) -> None:
        state.query = l2_normalize(state.query)
        state.gallery = l2_normalize(state.gallery)

    def _stage_average_views(self, state: PipelineState) -> None:
        state.query = average_views(
            [fs for fs, _ in state.q_extras.views], [m for _, m in state.q_extras.views]
        )[0]
        state.gallery = average_views(
            [fs for fs, _ in state.g_extras.views], [m for _, m in state.g_extras.views]
        )[0]

    def _stage_ensemble(self, state: PipelineState) -> None:
        if self.params.ensemble_mode == "distances":
            state.ensemble_models = True
            return
        state.query = ensemble_features([_normalized(state.query), *state.q_extras.models])
        state.gallery = ensemble_features([_normalized(state.gallery), *state.g_extras.models])

    def _stage_camera_subtract(self, state: PipelineState) -> None:
        alpha = self.params.alpha
        metas = state.q_metas + state.g_metas
        union = FeatureSet(np.vstack([state.query.data, state.gallery.data]))
        if self.params.camera_mean == "all":
            corrected = subtract_camera_mean(union, metas, camera_means(union, metas), alpha)
        else:
            corrected = subtract_other_tracklet_mean(union, metas, alpha)
        split = state.query.count
        state.query = FeatureSet(corrected.data[:split], True, state.query.ids)
        state.gallery = FeatureSet(corrected.data[split:], True, state.gallery.ids)

    def _stage_tracklet(self, state: PipelineState, on_distances: bool) -> None:
        mode, temperature = self.params.tracklet_mode, self.params.temperature
        if on_distances:
            tf = tracklet_aggregate(_normalized(state.gallery), state.g_metas, mode, temperature)
            state.distance = tracklet_distances(state.distance, state.g_metas, tf)
            return
        beta = self.params.beta
        for side in ("query", "gallery"):
            fs = _normalized(getattr(state, side))
            metas = state.q_metas if side == "query" else state.g_metas
            tf = tracklet_aggregate(fs, metas, mode, temperature)
            setattr(state, side, fuse_tracklet(fs, metas, tf, beta))

    # distance stages

    def _raw(self, state: PipelineState) -> DistanceMatrix:
        block = self.params.block_size
        d = pairwise(_normalized(state.query), _normalized(state.gallery), block, self.max_workers)
        if state.ensemble_models:
            extra = [
                pairwise(q, g, block, self.max_workers)
                for q, g in zip(state.q_extras.models, state.g_extras.models)
            ]
            d = ensemble_distances([d, *extra])
        return d

    def _aux(self, state: PipelineState, name: str) -> DistanceMatrix:
        q, g = getattr(state.q_extras, name), getattr(state.g_extras, name)
        d = pairwise(q, g, self.params.block_size, self.max_workers)
        return DistanceMatrix(d.data, state.query.row_ids(), state.gallery.row_ids(), d.kind)

    def _current(self, state: PipelineState) -> DistanceMatrix:
        if state.distance is None:
            state.distance = self._raw(state)
        return state.distance

    def _union_base(self, state: PipelineState) -> np.ndarray:
        """Joint (Q+G)^2 base distance for re-ranking."""
        block = self.params.block_size

        def joint(q: FeatureSet, g: FeatureSet) -> np.ndarray:
            u = FeatureSet(np.vstack([q.data, g.data]), normalized=True)
            return pairwise(u, u, block, self.max_workers).data

        base = joint(_normalized(state.query), _normalized(state.gallery))
        if state.ensemble_models:
            mats = [base] + [
                joint(q, g) for q, g in zip(state.q_extras.models, state.g_extras.models)
            ]
            base = np.mean(mats, axis=0)
        if state.fused:
            base = (
                base
                - self.params.lambda1 * joint(state.q_extras.camera, state.g_extras.camera)
                - self.params.lambda2 * joint(state.q_extras.orientation, state.g_extras.orientation)
            )
        return base

    def _stage_fuse_eq4(self, state: PipelineState) -> None:
        d_r = self._current(state)
        d_c = self._aux(state, "camera")
        d_o = self._aux(state, "orientation")
        state.distance = fuse_distances(
            d_r, d_c, d_o, self.params.lambda1, self.params.lambda2
        )
        state.fused = True

    def _stage_rerank(self, state: PipelineState) -> None:
        base = self._union_base(state) if (state.fused or state.ensemble_models) else None
        state.distance = rerank(
            _normalized(state.query),
            _normalized(state.gallery),
            self.params.rerank_params(),
            self.params.block_size,
            self.max_workers,
            base=base,
        )

    def _stage_camera_verify(self, state: PipelineState) -> None:
        state.distance = camera_verify_mask(self._current(state), state.q_metas, state.g_metas)

    def _stage_rank(self, state: PipelineState) -> None:
        evaluation = self.cfg.evaluation
        d = self._current(state)
        depth = d.shape[1] if evaluation.top_k_map == 0 else max(evaluation.top_k, evaluation.top_k_map)
        state.ranking = rank(d, max(1, depth), evaluation.i2t, state.g_metas)

    def _stage_evaluate(self, state: PipelineState) -> None:
        evaluation = self.cfg.evaluation
        state.report = evaluate(
            state.ranking,
            state.q_metas,
            state.g_metas,
            evaluation.top_k_map,
            evaluation.same_camera_relevants,
        )
        logger.info(
            "mAP %.4f, rank-1 %.4f over %d queries",
            state.report.mAP,
            state.report.rank1,
            len(state.report.per_query_ap),
        )

    def _stage_cluster(self, state: PipelineState) -> None:
        metas = state.q_metas + state.g_metas
        union = FeatureSet.from_metas(np.vstack([state.query.data, state.gallery.data]), metas)
        state.labels = run_clustering(self.cfg, union, metas)

    def _checkpoint(self, state: PipelineState, stage: PlannedStage) -> None:
        workdir = self.workdir
        params = dict(self.cfg.config.get("params", {}) or {})
        if stage.name in FEATURE_STAGES and not stage.on_distances:
            checkpoint = StageCheckpoint(stage.name, stage.index, CheckpointKind.FEATURES, params)
            save_features(
                workdir,
                checkpoint,
                (state.query, state.q_metas),
                (state.gallery, state.g_metas),
            )
        elif stage.name in ("fuse_eq4", "rerank", "tracklet", "camera_verify"):
            checkpoint = StageCheckpoint(stage.name, stage.index, CheckpointKind.DISTANCE, params)
            save_distance_checkpoint(workdir, checkpoint, state.distance)
        elif stage.name == "rank":
            checkpoint = StageCheckpoint(stage.name, stage.index, CheckpointKind.RANKING, params)
            top_k = self.cfg.evaluation.top_k
            truncated = RankList(
                tuple(
                    replace(
                        rq,
                        gallery_ids=rq.gallery_ids[:top_k],
                        gallery_indices=rq.gallery_indices[:top_k],
                        distances=rq.distances[:top_k],
                    )
                    for rq in state.ranking.queries
                ),
                top_k,
                state.ranking.i2t,
            )
            stage_dir = workdir / checkpoint.dirname
            write_ranking(stage_dir / "ranking.txt", truncated)
            save_distance_checkpoint(workdir, checkpoint, self._current(state))
            checkpoint.files["ranking"] = "ranking.txt"
            save_files(workdir, checkpoint)
        elif stage.name == "evaluate":
            checkpoint = StageCheckpoint(stage.name, stage.index, CheckpointKind.REPORT, params)
            write_report(workdir / checkpoint.dirname / "report.json", state.report)
            checkpoint.files["report"] = "report.json"
            save_files(workdir, checkpoint)
        elif stage.name == "cluster":
            checkpoint = StageCheckpoint(stage.name, stage.index, CheckpointKind.LABELS, {})
            for labels in state.labels:
                name = label_file_name(labels.params)
                write_labels(
                    workdir / checkpoint.dirname / name, labels, state.q_metas + state.g_metas
                )
                checkpoint.files[name] = name
            save_files(workdir, checkpoint)


def label_file_name(params: Optional[DbscanParams]) -> str:
    """File name of the label set produced with the given parameters."""
    if params is None:
        return "labels.csv"
    return f"labels_eps{params.eps:g}_ms{params.min_samples}.csv"


def run_clustering(
    cfg: Config, fs: FeatureSet, metas: Sequence[ImageMeta]
) -> list[PseudoLabels]:
    """Pseudo-label sets for every configured DBSCAN parameter pair."""
    cluster = cfg.cluster
    rr = cfg.params.rerank_params()
    param_sets = cluster.param_sets
    block, workers = cfg.params.block_size, cfg.threading.max_workers
    if cluster.rho is not None:
        d = cluster_distance(fs, metas, cluster.alpha, cluster.beta, rr, cluster.distance, block, workers)
        eps = estimate_eps(d, cluster.rho)
        logger.info("Estimated eps %.4f from rho %.4g", eps, cluster.rho)
        param_sets = [DbscanParams(eps, p.min_samples) for p in param_sets]
    return generate_label_sets(
        fs, metas, cluster.alpha, cluster.beta, rr, param_sets, cluster.distance, block, workers
    )


def run_ablation(
    cfg: Config, inputs: PipelineInputs, stages: Sequence[str]
) -> list[StageReport]:
    """Evaluate every cumulative variant of the stage list."""
    run_id = new_run_id()
    rows: list[StageReport] = []
    runner = StageRunner(cfg)
    for position, (variant, subset) in enumerate(ablation_variants(stages)):
        state = runner.run(PipelineState.start(inputs), plan_stages(subset))
        rows.append(StageReport.new(run_id, variant, position, subset, state.report))
        logger.info("Ablation %-18s mAP %.4f", variant, state.report.mAP)
    return rows


def format_ablation_table(rows: Sequence[StageReport]) -> str:
    """Plain-text ``variant | mAP | R-1`` table in percent."""
    width = max([len("variant")] + [len(r.variant) for r in rows])
    lines = [f"{'variant':<{width}} |   mAP |   R-1", f"{'-' * width}-+-------+------"]
    for r in rows:
        lines.append(f"{r.variant:<{width}} | {r.map * 100:5.1f} | {r.rank1 * 100:5.1f}")
    return "\n".join(lines)


def _has_ground_truth(inputs: PipelineInputs) -> bool:
    return all(m.identity is not None for m in inputs.q_metas + inputs.g_metas)


def run_pipeline(
    cfg: Config,
    stages: Optional[Sequence[str]] = None,
    workdir: Optional[Path] = None,
    run_logger: Optional[RunLogger] = None,
) -> PipelineResult:
    """Validate, load, execute and (optionally) ablate the stage list."""
    stages = list(stages if stages is not None else cfg.stages)
    plan = plan_stages(stages)
    check_inputs(stages, cfg)
    inputs = load_inputs(cfg)
    workdir = prepare_workdir(Path(workdir if workdir is not None else cfg.workdir))
    state = StageRunner(cfg, workdir, run_logger).run(PipelineState.start(inputs), plan)
    result = PipelineResult(state)
    if "evaluate" in stages and cfg.evaluation.ablation and _has_ground_truth(inputs):
        result.ablation = run_ablation(cfg, inputs, stages)
        if run_logger is not None:
            run_logger.event(
                "ablation_completed",
                f"{len(result.ablation)} variants evaluated",
                context={r.variant: round(r.map, 6) for r in result.ablation},
            )
    return result
