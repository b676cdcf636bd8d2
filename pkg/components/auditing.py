"""
Run logging for pipeline and clustering runs.

Artifacts generated per run:
- manifest.json: Run metadata, configuration snapshot and stage summary
- errors.json: Structured error tracking with context
- performance.json: Per-stage timings and total run time
- audit.jsonl: Event-based audit trail

All logging is fail-safe and never breaks a run.
"""

from __future__ import annotations

import json
import logging
import shutil
import threading
import time
import traceback
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional, TYPE_CHECKING

from version import __version__

if TYPE_CHECKING:
    from components.interfaces import Config


logger = logging.getLogger(__name__)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


@dataclass
class ErrorEntry:
    """Structured error record."""

    timestamp: str
    error_type: str
    message: str
    context: dict
    stack_trace: Optional[str] = None
    stage: Optional[str] = None


@dataclass
class PerformanceMetric:
    """Performance measurement."""

    metric_name: str
    value: float
    unit: str  # "seconds", "count"
    timestamp: str
    context: dict = field(default_factory=dict)


@dataclass
class AuditEvent:
    """Audit trail event."""

    timestamp: str
    event_type: str  # "run_started", "stage_completed", "run_completed"
    description: str
    context: dict = field(default_factory=dict)


class ManifestWriter:
    """Writes run manifest (manifest.json)."""

    def __init__(self, run_dir: Path, config: Config, command: str):
        self.run_dir = run_dir
        self.config = config
        self.command = command
        self.start_time = datetime.now(timezone.utc)
        self.stages: list[dict] = []
        self.errors_count = 0
        self.warnings_count = 0

    def record_stage(self, name: str, summary: dict) -> None:
        """Record a finished stage."""
        self.stages.append({"stage": name, **summary})

    def record_error(self, is_warning: bool = False) -> None:
        """Record an error or warning."""
        if is_warning:
            self.warnings_count += 1
        else:
            self.errors_count += 1

    def finalize(self) -> dict:
        """Generate the final manifest."""
        end_time = datetime.now(timezone.utc)
        params = self.config.params
        return {
            "run_metadata": {
                "run_id": self.run_dir.name,
                "version": __version__,
                "command": self.command,
                "start_time": self.start_time.isoformat(),
                "end_time": end_time.isoformat(),
                "duration_seconds": round(
                    (end_time - self.start_time).total_seconds(), 2
                ),
            },
            "configuration_snapshot": {
                "stages": self.config.stages,
                "alpha": params.alpha,
                "beta": params.beta,
                "tracklet_mode": params.tracklet_mode,
                "lambda1": params.lambda1,
                "lambda2": params.lambda2,
                "k1": params.k1,
                "k2": params.k2,
                "lambda": params.lambda_value,
                "top_k_map": self.config.evaluation.top_k_map,
                "threading_max_workers": self.config.threading.max_workers,
            },
            "stage_summary": self.stages,
            "errors_and_warnings": {
                "errors": self.errors_count,
                "warnings": self.warnings_count,
            },
        }

    def write(self) -> None:
        """Write the manifest to disk."""
        try:
            manifest_path = self.run_dir / "manifest.json"
            with open(manifest_path, "w", encoding="utf-8") as f:
                json.dump(self.finalize(), f, indent=2)
            logger.debug("Wrote manifest: %s", manifest_path)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to write manifest: %s", e)


class ErrorLedgerWriter:
    """Writes structured errors (errors.json)."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.errors: list[ErrorEntry] = []
        self.lock = threading.Lock()
        self.current_stage: Optional[str] = None

    def record_error(
        self,
        error_type: str,
        message: str,
        context: dict,
        exception: Optional[BaseException] = None,
    ) -> None:
        """Record an error."""
        with self.lock:
            self.errors.append(
                ErrorEntry(
                    timestamp=_now(),
                    error_type=error_type,
                    message=message,
                    context=context,
                    stack_trace=(
                        "".join(
                            traceback.format_exception(
                                type(exception), exception, exception.__traceback__
                            )
                        )
                        if exception
                        else None
                    ),
                    stage=self.current_stage,
                )
            )

    def finalize(self) -> dict:
        """Generate the final error ledger."""
        with self.lock:
            return {
                "generated_at": _now(),
                "total_errors": len(self.errors),
                "warnings": sum(1 for e in self.errors if e.error_type == "WARNING"),
                "run_failed": any(e.stack_trace is not None for e in self.errors),
                "errors": [asdict(e) for e in self.errors],
            }

    def write(self) -> None:
        """Write error ledger to disk."""
        try:
            ledger_path = self.run_dir / "errors.json"
            with open(ledger_path, "w", encoding="utf-8") as f:
                json.dump(self.finalize(), f, indent=2)
            logger.debug("Wrote error ledger: %s", ledger_path)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to write error ledger: %s", e)


class PerformanceWriter:
    """Writes performance metrics (performance.json)."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.metrics: list[PerformanceMetric] = []
        self.lock = threading.Lock()
        self.timers: dict[str, float] = {}

    def start_timer(self, timer_name: str) -> None:
        """Start a named timer."""
        with self.lock:
            self.timers[timer_name] = time.perf_counter()

    def end_timer(self, timer_name: str, context: Optional[dict] = None) -> float:
        """End a named timer, record it and return the elapsed seconds."""
        with self.lock:
            if timer_name not in self.timers:
                return 0.0
            elapsed = time.perf_counter() - self.timers.pop(timer_name)
            self.metrics.append(
                PerformanceMetric(
                    metric_name=timer_name,
                    value=round(elapsed, 3),
                    unit="seconds",
                    timestamp=_now(),
                    context=context or {},
                )
            )
            return elapsed

    def finalize(self) -> dict:
        """Generate the final performance report."""
        with self.lock:
            grouped: dict[str, list[float]] = {}
            for metric in self.metrics:
                grouped.setdefault(metric.metric_name, []).append(metric.value)
            summary = {
                name: {
                    "count": len(values),
                    "min": round(min(values), 3),
                    "max": round(max(values), 3),
                    "avg": round(sum(values) / len(values), 3),
                    "total": round(sum(values), 3),
                }
                for name, values in grouped.items()
            }
            return {
                "generated_at": _now(),
                "summary": summary,
                "detailed_metrics": [asdict(m) for m in self.metrics],
            }

    def write(self) -> None:
        """Write performance metrics to disk."""
        try:
            perf_path = self.run_dir / "performance.json"
            with open(perf_path, "w", encoding="utf-8") as f:
                json.dump(self.finalize(), f, indent=2)
            logger.debug("Wrote performance metrics: %s", perf_path)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to write performance metrics: %s", e)


class AuditTrailWriter:
    """Writes event audit trail (audit.jsonl)."""

    def __init__(self, run_dir: Path):
        self.run_dir = run_dir
        self.log_path = run_dir / "audit.jsonl"
        self.lock = threading.Lock()
        self.file_handle = None

    def open(self) -> None:
        """Open the audit log file."""
        try:
            self.file_handle = open(self.log_path, "w", encoding="utf-8", buffering=1)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to open audit log: %s", e)

    def log_event(
        self,
        event_type: str,
        description: str,
        context: Optional[dict] = None,
    ) -> None:
        """Log an audit event."""
        if not self.file_handle:
            return
        try:
            with self.lock:
                event = AuditEvent(
                    timestamp=_now(),
                    event_type=event_type,
                    description=description,
                    context=context or {},
                )
                json.dump(asdict(event), self.file_handle)
                self.file_handle.write("\n")
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to write audit event: %s", e)

    def close(self) -> None:
        """Close the audit log."""
        if self.file_handle:
            try:
                self.file_handle.close()
                logger.debug("Wrote audit trail: %s", self.log_path)
            except Exception as e:  # pylint: disable=broad-exception-caught
                logger.warning("Failed to close audit log: %s", e)


class RunLogger:
    """
    Main logging orchestrator - use as context manager.

    Usage:
        with RunLogger(config, "pipeline") as run_logger:
            with run_logger.stage("rerank"):
                ...

    Creates a unique run directory, hooks into Python's logging system to
    capture warnings and errors, times every stage and writes all artifacts
    on exit.
    """

    def __init__(self, config: Config, command: str):
        self.config = config
        self.command = command
        self.enabled = config.logging.enabled
        self.run_dir: Optional[Path] = None
        self.run_id: Optional[str] = None

        self.manifest_writer: Optional[ManifestWriter] = None
        self.error_ledger_writer: Optional[ErrorLedgerWriter] = None
        self.performance_writer: Optional[PerformanceWriter] = None
        self.audit_trail_writer: Optional[AuditTrailWriter] = None

        self.log_handler: Optional[logging.Handler] = None

    @property
    def output_dir(self) -> Path:
        """Directory holding all run directories."""
        return self.config.resolve(self.config.logging.output_dir)  # type: ignore

    def __enter__(self) -> RunLogger:
        """Initialize logging system."""
        if not self.enabled:
            logger.info("Run logging disabled in configuration")
            return self

        try:
            timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
            self.run_id = f"{timestamp}_{self.command}"
            self.run_dir = self.output_dir / self.run_id
            suffix = 1
            while self.run_dir.exists():
                suffix += 1
                self.run_dir = self.output_dir / f"{self.run_id}_{suffix}"
            self.run_dir.mkdir(parents=True)
            self.run_id = self.run_dir.name
            logger.info("Run logging enabled: %s", self.run_dir)

            self.manifest_writer = ManifestWriter(self.run_dir, self.config, self.command)
            self.error_ledger_writer = ErrorLedgerWriter(self.run_dir)
            self.performance_writer = PerformanceWriter(self.run_dir)
            self.performance_writer.start_timer("total_run_time")
            self.audit_trail_writer = AuditTrailWriter(self.run_dir)
            self.audit_trail_writer.open()
            self.audit_trail_writer.log_event(
                "run_started",
                f"{self.command} run started",
                context={"stages": self.config.stages},
            )
            self._install_log_handler()
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.error("Failed to initialize run logging: %s", e, exc_info=True)
            self.enabled = False

        return self

    @contextmanager
    def stage(self, name: str, index: Optional[int] = None) -> Iterator[dict]:
        """Time a stage; the yielded dict is stored as its summary."""
        summary: dict = {} if index is None else {"index": index}
        timer = f"stage:{name}"
        if self.performance_writer:
            self.performance_writer.start_timer(timer)
        if self.error_ledger_writer:
            self.error_ledger_writer.current_stage = name
        start = time.perf_counter()
        try:
            yield summary
        finally:
            if self.performance_writer:
                self.performance_writer.end_timer(timer, context=dict(summary))
            if self.error_ledger_writer:
                self.error_ledger_writer.current_stage = None
        summary["seconds"] = round(time.perf_counter() - start, 3)
        if self.manifest_writer:
            self.manifest_writer.record_stage(name, summary)
        if self.audit_trail_writer:
            self.audit_trail_writer.log_event(
                "stage_completed", f"Stage {name} completed", context=summary
            )

    def event(self, event_type: str, description: str, context: Optional[dict] = None) -> None:
        """Append a free-form event to the audit trail."""
        if self.audit_trail_writer:
            self.audit_trail_writer.log_event(event_type, description, context=context)

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Finalize and write all logs."""
        if not self.enabled or not self.run_dir:
            return False

        try:
            if exc_type is not None and self.error_ledger_writer:
                self.error_ledger_writer.record_error(
                    error_type=exc_type.__name__,
                    message=str(exc_val),
                    context={"traceback": traceback.format_tb(exc_tb)},
                    exception=exc_val,
                )
                if self.manifest_writer:
                    self.manifest_writer.record_error()

            if self.performance_writer:
                self.performance_writer.end_timer("total_run_time")

            if self.audit_trail_writer:
                self.audit_trail_writer.log_event(
                    "run_completed",
                    f"{self.command} run completed",
                    context={"success": exc_type is None},
                )
                self.audit_trail_writer.close()

            if self.manifest_writer:
                self.manifest_writer.write()
            if self.error_ledger_writer:
                self.error_ledger_writer.write()
            if self.performance_writer:
                self.performance_writer.write()

            self._remove_log_handler()
            self._cleanup_old_runs()
            logger.info("Run artifacts written to: %s", self.run_dir)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.error("Failed to finalize run logging: %s", e, exc_info=True)

        return False

    def _install_log_handler(self) -> None:
        """Install a handler capturing WARNING and above."""

        class RunLogHandler(logging.Handler):
            """Feeds warnings and errors into the error ledger."""

            def __init__(self, run_logger: RunLogger):
                super().__init__()
                self.run_logger = run_logger

            def emit(self, record: logging.LogRecord) -> None:
                try:
                    ledger = self.run_logger.error_ledger_writer
                    if ledger:
                        ledger.record_error(
                            error_type=record.levelname,
                            message=record.getMessage(),
                            context={
                                "logger": record.name,
                                "module": record.module,
                                "function": record.funcName,
                                "line": record.lineno,
                            },
                        )
                    if self.run_logger.manifest_writer:
                        self.run_logger.manifest_writer.record_error(
                            is_warning=record.levelno == logging.WARNING
                        )
                except Exception:  # pylint: disable=broad-exception-caught
                    pass

        try:
            self.log_handler = RunLogHandler(self)
            self.log_handler.setLevel(logging.WARNING)
            logging.root.addHandler(self.log_handler)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to install log handler: %s", e)

    def _remove_log_handler(self) -> None:
        if self.log_handler:
            try:
                logging.root.removeHandler(self.log_handler)
            except Exception as e:  # pylint: disable=broad-exception-caught
                logger.warning("Failed to remove log handler: %s", e)

    def _cleanup_old_runs(self) -> None:
        """Remove run directories older than the retention period."""
        if self.config.logging.retention_days <= 0:
            return
        try:
            runs_dir = self.output_dir
            if not runs_dir.exists():
                return
            cutoff_time = time.time() - self.config.logging.retention_days * 86400
            for run_dir in runs_dir.iterdir():
                if run_dir.is_dir() and run_dir.stat().st_mtime < cutoff_time:
                    try:
                        shutil.rmtree(run_dir)
                        logger.debug("Removed old run directory: %s", run_dir)
                    except Exception as e:  # pylint: disable=broad-exception-caught
                        logger.warning("Failed to remove old run %s: %s", run_dir, e)
        except Exception as e:  # pylint: disable=broad-exception-caught
            logger.warning("Failed to cleanup old runs: %s", e)
