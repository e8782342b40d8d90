"""Regenerate the bundled synthetic fixture corpus."""

from __future__ import annotations

import json
from pathlib import Path

from gramlineup.synthetic import fixture_manifest

OUT = Path(__file__).resolve().parents[1] / "src" / "gramlineup" / "data" / "fixture_corpus.jsonl"

if __name__ == "__main__":
    with OUT.open("w", encoding="utf-8") as fh:
        for obj in fixture_manifest():
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"wrote {OUT}")
