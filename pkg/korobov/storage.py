import asyncio
import json
import logging
import time
from typing import Any, Dict, List

import aiosqlite

logger = logging.getLogger('Korobov.Storage')

DB_PATH = 'korobov_checkpoints.sqlite3'

SCHEMA = '''
CREATE TABLE IF NOT EXISTS runs (
    run_key TEXT PRIMARY KEY,
    command TEXT NOT NULL,
    config TEXT NOT NULL,
    version TEXT NOT NULL,
    created_at INTEGER NOT NULL
);

CREATE TABLE IF NOT EXISTS rows (
    run_key TEXT NOT NULL,
    row_index INTEGER NOT NULL,
    payload TEXT NOT NULL,
    finished_at INTEGER NOT NULL,
    PRIMARY KEY(run_key, row_index),
    FOREIGN KEY(run_key) REFERENCES runs(run_key)
);
'''


class CheckpointStore:
    """Finished sweep rows keyed by (run_key, row_index) so interrupted sweeps resume."""

    def __init__(self, db_path: str = DB_PATH):
        self.db_path = str(db_path)
        self._lock = asyncio.Lock()

    async def init(self):
        async with aiosqlite.connect(self.db_path) as db:
            await db.executescript(SCHEMA)
            await db.commit()

    async def register_run(self, run_key: str, command: str, config: Dict[str, Any], version: str) -> str:
        """Record the run once; returns the package version that first recorded it."""
        async with self._lock:
            async with aiosqlite.connect(self.db_path) as db:
                await db.execute('INSERT OR IGNORE INTO runs(run_key, command, config, version, created_at) '
                                 'VALUES (?,?,?,?,?)',
                                 (run_key, command, json.dumps(config, sort_keys=True), version, int(time.time())))
                await db.commit()
                async with db.execute('SELECT version FROM runs WHERE run_key = ?', (run_key,)) as cur:
                    (recorded,) = await cur.fetchone()
        return recorded

    async def save_row(self, run_key: str, row_index: int, payload: Dict[str, Any]):
        async with self._lock:
            async with aiosqlite.connect(self.db_path) as db:
                await db.execute('INSERT INTO rows(run_key, row_index, payload, finished_at) VALUES (?,?,?,?) '
                                 'ON CONFLICT(run_key, row_index) DO UPDATE SET payload=excluded.payload, '
                                 'finished_at=excluded.finished_at',
                                 (run_key, row_index, json.dumps(payload, sort_keys=True), int(time.time())))
                await db.commit()
        logger.debug('Checkpointed row %d of run %s', row_index, run_key[:10])

    async def load_rows(self, run_key: str) -> Dict[int, Dict[str, Any]]:
        async with aiosqlite.connect(self.db_path) as db:
            async with db.execute('SELECT row_index, payload FROM rows WHERE run_key = ? ORDER BY row_index',
                                  (run_key,)) as cur:
                rows = await cur.fetchall()
                return {r[0]: json.loads(r[1]) for r in rows}

    async def list_runs(self) -> List[Dict[str, Any]]:
        async with aiosqlite.connect(self.db_path) as db:
            async with db.execute('SELECT r.run_key, r.command, r.version, r.created_at, COUNT(w.row_index) '
                                  'FROM runs r LEFT JOIN rows w ON w.run_key = r.run_key GROUP BY r.run_key '
                                  'ORDER BY r.created_at, r.run_key') as cur:
                rows = await cur.fetchall()
                return [{'run_key': r[0], 'command': r[1], 'version': r[2], 'created_at': r[3], 'rows': r[4]}
                        for r in rows]

    async def clear_run(self, run_key: str) -> int:
        """Drop a run and its finished rows; returns how many rows went with it."""
        async with self._lock:
            async with aiosqlite.connect(self.db_path) as db:
                cur = await db.execute('DELETE FROM rows WHERE run_key = ?', (run_key,))
                dropped = cur.rowcount
                await db.execute('DELETE FROM runs WHERE run_key = ?', (run_key,))
                await db.commit()
        logger.info('Cleared run %s (%d rows)', run_key[:10], dropped)
        return dropped
