"""Test the run logger artifacts."""

import json
import logging

import pytest

from components.auditing import RunLogger
from components.interfaces import Config


@pytest.fixture
def logging_config(tmp_path):
    return Config.from_dict(
        {"stages": ["normalize", "rank"], "logging": {"output_dir": "runs", "retention_days": 0}},
        tmp_path,
    )


def _artifacts(run_logger: RunLogger) -> dict:
    run_dir = run_logger.run_dir
    return {
        "manifest": json.loads((run_dir / "manifest.json").read_text(encoding="utf-8")),
        "errors": json.loads((run_dir / "errors.json").read_text(encoding="utf-8")),
        "performance": json.loads((run_dir / "performance.json").read_text(encoding="utf-8")),
        "audit": [
            json.loads(line)
            for line in (run_dir / "audit.jsonl").read_text(encoding="utf-8").splitlines()
        ],
    }


class TestRunLogger:
    """Test the run directory and its four artifacts."""

    def test_successful_run(self, tmp_path, logging_config):
        """Stages are timed, summarized and audited."""
        with RunLogger(logging_config, "pipeline") as run_logger:
            with run_logger.stage("normalize", 0) as summary:
                summary["rows"] = 10
            run_logger.event("ablation_completed", "1 variant", context={"baseline": 0.5})
        assert run_logger.run_dir.parent == tmp_path.resolve() / "runs"
        assert run_logger.run_dir.name.endswith("_pipeline")
        found = _artifacts(run_logger)
        manifest = found["manifest"]
        assert manifest["run_metadata"]["command"] == "pipeline"
        assert manifest["configuration_snapshot"]["stages"] == ["normalize", "rank"]
        assert manifest["stage_summary"][0]["stage"] == "normalize"
        assert manifest["stage_summary"][0]["rows"] == 10
        assert found["errors"]["total_errors"] == 0
        assert all(set(e) == {"timestamp", "event_type", "description", "context"} for e in found["audit"])
        assert "stage:normalize" in found["performance"]["summary"]
        events = [e["event_type"] for e in found["audit"]]
        assert events == ["run_started", "stage_completed", "ablation_completed", "run_completed"]

    def test_failed_run_records_error(self, logging_config):
        """An escaping exception lands in the error ledger as fatal."""
        with pytest.raises(RuntimeError):
            with RunLogger(logging_config, "cluster") as run_logger:
                with run_logger.stage("cluster"):
                    raise RuntimeError("boom")
        found = _artifacts(run_logger)
        assert found["errors"]["run_failed"] is True
        assert found["errors"]["errors"][0]["stack_trace"].rstrip().endswith("RuntimeError: boom")
        assert found["errors"]["errors"][0]["message"] == "boom"
        assert found["audit"][-1]["context"] == {"success": False}

    def test_warnings_are_captured(self, logging_config):
        """Warnings logged during the run are counted."""
        with RunLogger(logging_config, "pipeline") as run_logger:
            logging.getLogger("components.retrieval").warning("2 queries skipped")
        found = _artifacts(run_logger)
        assert found["manifest"]["errors_and_warnings"]["warnings"] == 1
        assert found["errors"]["errors"][0]["error_type"] == "WARNING"
        assert found["errors"]["warnings"] == 1
        assert found["errors"]["run_failed"] is False

    def test_disabled(self, tmp_path):
        """With logging off nothing is written."""
        cfg = Config.from_dict({"logging": {"enabled": False, "output_dir": "runs"}}, tmp_path)
        with RunLogger(cfg, "pipeline") as run_logger:
            with run_logger.stage("normalize"):
                pass
        assert run_logger.run_dir is None
        assert not (tmp_path / "runs").exists()
