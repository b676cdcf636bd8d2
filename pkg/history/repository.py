"""Repository for storing and retrieving ablation rows in DuckDB."""

import threading
from datetime import datetime
from pathlib import Path
from typing import Optional

import duckdb

from history.artifacts import StageReport


class StageReportRepository:
    """Repository for per-variant evaluation rows of pipeline runs."""

    _write_lock = threading.Lock()
    _connections: dict[str, "duckdb.DuckDBPyConnection"] = {}

    @classmethod
    def _get_conn(cls, db_path: str) -> "duckdb.DuckDBPyConnection":
        if db_path not in cls._connections:
            Path(db_path).parent.mkdir(parents=True, exist_ok=True)
            cls._connections[db_path] = duckdb.connect(db_path)
        return cls._connections[db_path]

    @classmethod
    def close_all(cls) -> None:
        """Close every cached connection."""
        with cls._write_lock:
            for conn in cls._connections.values():
                conn.close()
            cls._connections.clear()

    def __init__(self, db_path: str = "out/history.duckdb"):
        self.db_path = str(db_path)
        with StageReportRepository._write_lock:
            conn = StageReportRepository._get_conn(self.db_path)
            self._init_db(conn)

    def _init_db(self, conn: "duckdb.DuckDBPyConnection") -> None:
        conn.execute(
            """
            CREATE TABLE IF NOT EXISTS stage_reports (
                run_id VARCHAR NOT NULL,
                variant VARCHAR NOT NULL,
                position INTEGER NOT NULL,
                stages VARCHAR NOT NULL,
                map DOUBLE NOT NULL,
                rank1 DOUBLE NOT NULL,
                rank5 DOUBLE NOT NULL,
                rank10 DOUBLE NOT NULL,
                num_queries INTEGER NOT NULL,
                created_at VARCHAR NOT NULL,
                UNIQUE(run_id, position)
            )
        """
        )
        conn.execute(
            "CREATE INDEX IF NOT EXISTS idx_stage_reports_run "
            "ON stage_reports(run_id)"
        )

    def save_reports(self, reports: list[StageReport]) -> None:
        """Append the rows of one ablation."""
        with StageReportRepository._write_lock:
            conn = StageReportRepository._get_conn(self.db_path)
            for r in reports:
                conn.execute(
                    """
                    INSERT INTO stage_reports
                    (run_id, variant, position, stages, map, rank1, rank5,
                     rank10, num_queries, created_at)
                    VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
                """,
                    [
                        r.run_id,
                        r.variant,
                        r.position,
                        ",".join(r.stages),
                        r.map,
                        r.rank1,
                        r.rank5,
                        r.rank10,
                        r.num_queries,
                        r.created_at.isoformat(),
                    ],
                )

    def load_run(self, run_id: str) -> list[StageReport]:
        """Rows of one run ordered by position."""
        with StageReportRepository._write_lock:
            conn = StageReportRepository._get_conn(self.db_path)
            rows = conn.execute(
                """
                SELECT run_id, variant, position, stages, map, rank1, rank5,
                       rank10, num_queries, created_at
                FROM stage_reports WHERE run_id = ? ORDER BY position
            """,
                [run_id],
            ).fetchall()
        return [
            StageReport(
                run_id=row[0],
                variant=row[1],
                position=int(row[2]),
                stages=tuple(s for s in row[3].split(",") if s),
                map=float(row[4]),
                rank1=float(row[5]),
                rank5=float(row[6]),
                rank10=float(row[7]),
                num_queries=int(row[8]),
                created_at=datetime.fromisoformat(row[9]),
            )
            for row in rows
        ]

    def latest_run_id(self) -> Optional[str]:
        """Most recently stored run, if any."""
        with StageReportRepository._write_lock:
            conn = StageReportRepository._get_conn(self.db_path)
            row = conn.execute(
                "SELECT run_id FROM stage_reports "
                "GROUP BY run_id ORDER BY max(created_at) DESC LIMIT 1"
            ).fetchone()
        return row[0] if row else None

    def list_runs(self) -> list[tuple[str, int, float]]:
        """(run_id, rows, best mAP) per stored run."""
        with StageReportRepository._write_lock:
            conn = StageReportRepository._get_conn(self.db_path)
            return [
                (row[0], int(row[1]), float(row[2]))
                for row in conn.execute(
                    "SELECT run_id, count(*), max(map) FROM stage_reports "
                    "GROUP BY run_id ORDER BY min(created_at)"
                ).fetchall()
            ]
