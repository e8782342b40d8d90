"""Grammatical lineup evaluation for grammatical error feedback (GEF).

Builds partially corrected essay lineups from edit annotations, generates
feedback through pluggable chat-completion endpoints, and scores that
feedback by first-token yes-probability matching. GEC metrics (edit-level
F-beta and GLEU) are included for the correction stage.
"""

from gramlineup.corpus import (
    Edit,
    M2Format,
    M2Record,
    detokenize,
    parse_clc_xml,
    parse_m2,
    serialize_m2,
    tokenize,
)
from gramlineup.lineup import EssayVersion, Lineup, apply_edits, build_lineup
from gramlineup.metrics import PRF, GleuScore, edit_prf, extract_edits, gleu

__version__ = "0.1.0"

__all__ = [
    "Edit",
    "EssayVersion",
    "GleuScore",
    "Lineup",
    "M2Format",
    "M2Record",
    "PRF",
    "apply_edits",
    "build_lineup",
    "detokenize",
    "edit_prf",
    "extract_edits",
    "gleu",
    "parse_clc_xml",
    "parse_m2",
    "serialize_m2",
    "tokenize",
]
