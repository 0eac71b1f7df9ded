"""Embedded persistence: one SQLite file for job docs and event logs, plus a
content-addressed blob directory for images and masks.

All writes go through a single lock so the store is safe to share across the
worker pool and HTTP handlers.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import sqlite3
import threading
from typing import Dict, List, Optional, Tuple

_ARTIFACT_ID = re.compile(r"^[0-9a-f]{64}$")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    created_seq INTEGER,
    doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS events (
    job_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    doc TEXT NOT NULL,
    PRIMARY KEY (job_id, seq)
);
"""


class JobStore:
    def __init__(self, root: str):
        self.root = os.path.abspath(root)
        self.blob_dir = os.path.join(self.root, "blobs")
        os.makedirs(self.blob_dir, exist_ok=True)
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(
            os.path.join(self.root, "store.sqlite3"), check_same_thread=False
        )
        with self._lock:
            self._conn.executescript(_SCHEMA)
            self._conn.commit()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- jobs ---------------------------------------------------------------

    def put_job(self, job_id: str, doc: Dict) -> None:
        payload = json.dumps(doc)
        with self._lock:
            self._conn.execute(
                "INSERT INTO jobs (id, created_seq, doc) VALUES (?, "
                "(SELECT COALESCE(MAX(created_seq), 0) + 1 FROM jobs), ?) "
                "ON CONFLICT(id) DO UPDATE SET doc = excluded.doc",
                (job_id, payload),
            )
            self._conn.commit()

    def get_job(self, job_id: str) -> Optional[Dict]:
        with self._lock:
            row = self._conn.execute(
                "SELECT doc FROM jobs WHERE id = ?", (job_id,)
            ).fetchone()
        return json.loads(row[0]) if row else None

    def list_jobs(self) -> List[Dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT doc FROM jobs ORDER BY created_seq"
            ).fetchall()
        return [json.loads(r[0]) for r in rows]

    # -- event log ----------------------------------------------------------

    def append_event(self, job_id: str, doc: Dict) -> int:
        """Append with the next sequence number; the log stays gap-free."""
        payload = json.dumps(doc)
        with self._lock:
            row = self._conn.execute(
                "SELECT COALESCE(MAX(seq), -1) FROM events WHERE job_id = ?",
                (job_id,),
            ).fetchone()
            seq = row[0] + 1
            self._conn.execute(
                "INSERT INTO events (job_id, seq, doc) VALUES (?, ?, ?)",
                (job_id, seq, payload),
            )
            self._conn.commit()
        return seq

    def events_after(self, job_id: str, after: int = -1) -> List[Tuple[int, Dict]]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT seq, doc FROM events WHERE job_id = ? AND seq > ? "
                "ORDER BY seq",
                (job_id, after),
            ).fetchall()
        return [(seq, json.loads(doc)) for seq, doc in rows]

    def event_count(self, job_id: str) -> int:
        with self._lock:
            row = self._conn.execute(
                "SELECT COUNT(*) FROM events WHERE job_id = ?", (job_id,)
            ).fetchone()
        return row[0]

    # -- artifacts ----------------------------------------------------------

    def put_artifact(self, data: bytes) -> str:
        """Store bytes under their sha256; identical blobs are stored once."""
        artifact_id = hashlib.sha256(data).hexdigest()
        path = os.path.join(self.blob_dir, artifact_id)
        if not os.path.exists(path):
            tmp = path + ".tmp"
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        return artifact_id

    def get_artifact(self, artifact_id: str) -> Optional[bytes]:
        if not _ARTIFACT_ID.match(artifact_id):
            return None
        path = os.path.join(self.blob_dir, artifact_id)
        if not os.path.exists(path):
            return None
        with open(path, "rb") as fh:
            return fh.read()
