"""Append-only JSON-lines response cache keyed by a request digest."""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path
from typing import Any


def request_digest(payload: dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """Digest -> response mapping, optionally persisted to ``path``.

    Lookups read a plain dict; all writes go through one lock so the file is
    appended by a single writer at a time. When a key occurs twice in the
    file the last record wins.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path else None
        self._entries: dict[str, dict[str, Any]] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        # A torn final line from an interrupted run.
                        continue
                    self._entries[rec["key"]] = rec["response"]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> dict[str, Any] | None:
        value = self._entries.get(key)
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def put(self, key: str, response: dict[str, Any], meta: dict[str, Any] | None = None) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = response
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                rec = {"key": key, **(meta or {}), "response": response}
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
