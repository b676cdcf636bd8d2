"""Test the ablation chart tool."""

import yaml

from history.repository import StageReportRepository
from tools.chart import build_figure, main, plot_data, save_chart
from unit.fixtures.factories import ReportFactory

make_row = ReportFactory.create_row


class TestChart:
    """Test chart data and rendering."""

    def test_plot_data_in_percent(self):
        """Series are percentages in variant order."""
        rows = [make_row("r", "baseline", 0, 0.4), make_row("r", "+rerank", 1, 0.655)]
        data = plot_data(rows)
        assert data["variant"] == ["baseline", "+rerank"]
        assert data["mAP"] == [40.0, 65.5]

    def test_build_figure(self):
        """One bar per variant and metric."""
        rows = [make_row("r", "baseline", 0, 0.4), make_row("r", "+rerank", 1, 0.6)]
        fig = build_figure(rows, title="t")
        ax = fig.axes[0]
        assert len(ax.patches) == 4
        assert [t.get_text() for t in ax.get_yticklabels()] == ["baseline", "+rerank"]

    def test_save_chart(self, tmp_path):
        """A PNG file is written."""
        path = save_chart([make_row("r", "baseline", 0, 0.4)], tmp_path / "c" / "a.png")
        assert path.read_bytes()[:4] == b"\x89PNG"

    def test_main_uses_latest_run(self, tmp_path):
        """The command line charts the latest stored run."""
        (tmp_path / "config.yaml").write_text(
            yaml.safe_dump({"history": {"db_path": "h.duckdb"}}), encoding="utf-8"
        )
        StageReportRepository(str(tmp_path / "h.duckdb")).save_reports([make_row("r", "baseline", 0, 0.4)])
        out = tmp_path / "a.png"
        assert main(["--config", str(tmp_path / "config.yaml"), "-o", str(out)]) == 0
        assert out.is_file()

    def test_main_without_runs(self, tmp_path):
        """An empty history is an error."""
        (tmp_path / "config.yaml").write_text(
            yaml.safe_dump({"history": {"db_path": "h.duckdb"}}), encoding="utf-8"
        )
        assert main(["--config", str(tmp_path / "config.yaml")]) == 1

    def test_main_lists_runs(self, tmp_path, capsys):
        """--list prints one line per stored run with its best mAP."""
        (tmp_path / "config.yaml").write_text(
            yaml.safe_dump({"history": {"db_path": "h.duckdb"}}), encoding="utf-8"
        )
        StageReportRepository(str(tmp_path / "h.duckdb")).save_reports(
            [make_row("r1", "baseline", 0, 0.4), make_row("r1", "+rerank", 1, 0.55)]
        )
        assert main(["--config", str(tmp_path / "config.yaml"), "--list"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines == ["r1  2 variants  best mAP 55.0"]
