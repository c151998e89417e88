import json
import logging
import sqlite3
import time
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class ResultsDatabase:
    def __init__(self, db_path: str = "polar_results.db"):
        """Open the results database and create tables if they don't exist."""
        self.db_path = db_path
        self._create_tables()

    def _get_connection(self) -> sqlite3.Connection:
        try:
            conn = sqlite3.connect(self.db_path)
            conn.row_factory = sqlite3.Row
            return conn
        except sqlite3.Error as e:
            logger.error(f"Database connection error: {e}")
            raise

    def _create_tables(self) -> None:
        with self._get_connection() as conn:
            cursor = conn.cursor()

            # One row per CLI invocation
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    problem TEXT NOT NULL,
                    config TEXT NOT NULL,
                    started_ts REAL NOT NULL,
                    finished_ts REAL,
                    status TEXT NOT NULL DEFAULT 'running'
                )
            ''')

            # Study rows, payload stored as JSON text
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS study_rows (
                    run_id INTEGER NOT NULL,
                    position INTEGER NOT NULL,
                    payload TEXT NOT NULL,
                    PRIMARY KEY (run_id, position)
                )
            ''')

            cursor.execute('''
                CREATE INDEX IF NOT EXISTS idx_runs_problem
                ON runs(problem, started_ts)
            ''')

            conn.commit()

    def start_run(self, problem: str, config: Dict[str, Any]) -> Optional[int]:
        """Register a run and return its id."""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    INSERT INTO runs (problem, config, started_ts, status)
                    VALUES (?, ?, ?, 'running')
                ''', (problem, json.dumps(config, sort_keys=True, default=str), time.time()))
                conn.commit()
                return cursor.lastrowid
        except sqlite3.Error as e:
            logger.error(f"Error starting run: {e}")
            return None

    def add_row(self, run_id: int, row: Dict[str, Any]) -> bool:
        """Append a study row after the last stored position."""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    SELECT COALESCE(MAX(position) + 1, 0) FROM study_rows WHERE run_id = ?
                ''', (run_id,))
                position = cursor.fetchone()[0]
                cursor.execute('''
                    INSERT INTO study_rows (run_id, position, payload)
                    VALUES (?, ?, ?)
                ''', (run_id, position, json.dumps(row, default=str)))
                conn.commit()
                return True
        except sqlite3.Error as e:
            logger.error(f"Error adding study row: {e}")
            return False

    def finish_run(self, run_id: int, status: str = "ok") -> bool:
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    UPDATE runs SET finished_ts = ?, status = ? WHERE id = ?
                ''', (time.time(), status, run_id))
                conn.commit()
                return cursor.rowcount > 0
        except sqlite3.Error as e:
            logger.error(f"Error finishing run: {e}")
            return False

    def get_rows(self, run_id: int) -> List[Dict[str, Any]]:
        """Study rows of a run in insertion order."""
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                cursor.execute('''
                    SELECT payload FROM study_rows WHERE run_id = ? ORDER BY position
                ''', (run_id,))
                return [json.loads(row['payload']) for row in cursor.fetchall()]
        except sqlite3.Error as e:
            logger.error(f"Error getting study rows: {e}")
            return []

    def get_recent_runs(self, problem: Optional[str] = None, limit: int = 10) -> List[Dict[str, Any]]:
        try:
            with self._get_connection() as conn:
                cursor = conn.cursor()
                if problem:
                    cursor.execute('''
                        SELECT id, problem, config, started_ts, finished_ts, status
                        FROM runs WHERE problem = ?
                        ORDER BY id DESC LIMIT ?
                    ''', (problem, limit))
                else:
                    cursor.execute('''
                        SELECT id, problem, config, started_ts, finished_ts, status
                        FROM runs ORDER BY id DESC LIMIT ?
                    ''', (limit,))
                runs = []
                for row in cursor.fetchall():
                    run = dict(row)
                    run['config'] = json.loads(run['config'])
                    runs.append(run)
                return runs
        except sqlite3.Error as e:
            logger.error(f"Error getting recent runs: {e}")
            return []
