"""Grammatical lineups: versions of one essay with a growing share of errors corrected.

A single seeded permutation of the edit indices is drawn per essay and each
rate corrects a prefix of it, so the corrected sets are nested across rates.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from gramlineup.corpus import (
    M2Format,
    M2Record,
    M2Variant,
    OverlapViolation,
    TokenSeq,
    Edit,
    check_no_overlap,
    edits_overlap,
    parse_m2,
    serialize_m2,
)

DEFAULT_RATES: tuple[Fraction, ...] = tuple(Fraction(p, 100) for p in (0, 25, 50, 75, 100))
EXTENDED_RATES: tuple[Fraction, ...] = tuple(
    Fraction(p, 100) for p in (0, 15, 25, 40, 50, 60, 75, 85, 100)
)


def as_rate(value: Fraction | float | int | str) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def parse_percent_list(spec: str) -> list[Fraction]:
    """``"0,25,50,75,100"`` -> rates in [0, 1]."""
    rates = [Fraction(part.strip()) / 100 for part in spec.split(",") if part.strip()]
    for r in rates:
        if not 0 <= r <= 1:
            raise ValueError(f"rate {float(r) * 100:g}% outside [0, 100]")
    return rates


def rate_label(rate: Fraction) -> str:
    """Percent label used in reports: ``Fraction(1, 4)`` -> ``"25"``."""
    pct = as_rate(rate) * 100
    if pct.denominator == 1:
        return str(pct.numerator)
    return f"{float(pct):g}"


def n_corrected(n: int, rate: Fraction) -> int:
    """Number of errors corrected at ``rate``: round-half-up of ``rate * n``."""
    return math.floor(as_rate(rate) * n + Fraction(1, 2))


def essay_seed(seed: int, essay_id: str) -> int:
    """Per-essay 64-bit seed so essays with equal edit counts get unrelated permutations."""
    digest = hashlib.sha256(f"{seed}:{essay_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def permutation(n: int, seed: int) -> list[int]:
    order = list(range(n))
    random.Random(seed).shuffle(order)
    return order


def select_subset(edits: Sequence[Edit], rate: Fraction | float, seed: int) -> set[int]:
    rate = as_rate(rate)
    if not 0 <= rate <= 1:
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    return set(permutation(len(edits), seed)[: n_corrected(len(edits), rate)])


def _chosen_edits(edits: Sequence[Edit], chosen: Iterable[int]) -> list[Edit]:
    picked = [edits[i] for i in sorted(set(chosen))]
    check_no_overlap(picked)
    return picked


def apply_edits(source: TokenSeq, edits: Sequence[Edit], chosen: Iterable[int]) -> TokenSeq:
    """Apply the chosen edits, right to left so earlier spans keep their offsets."""
    tokens = list(source)
    picked = _chosen_edits(edits, chosen)
    for e in sorted(picked, key=lambda e: (e.start, e.end), reverse=True):
        if e.end > len(source):
            raise OverlapViolation(f"edit {e.span} runs past the end of the text")
        tokens[e.start : e.end] = e.replacement
    return tuple(tokens)


def apply_all(source: TokenSeq, edits: Sequence[Edit]) -> TokenSeq:
    return apply_edits(source, edits, range(len(edits)))


def remap_residual(
    source: TokenSeq, edits: Sequence[Edit], chosen: Iterable[int], essay_id: str = ""
) -> M2Record:
    """Record for the partially corrected text holding the edits not yet applied.

    Each remaining span shifts by the net length change of every applied edit
    that ends at or before it starts.
    """
    chosen = set(chosen)
    picked = _chosen_edits(edits, chosen)
    text = apply_edits(source, edits, chosen)
    residual = []
    for i, e in enumerate(edits):
        if i in chosen:
            continue
        for c in picked:
            if edits_overlap(c, e):
                raise OverlapViolation(f"applied edit {c.span} overlaps remaining edit {e.span}")
        offset = sum(c.delta for c in picked if c.end <= e.start)
        residual.append(e.shifted(offset))
    return M2Record(source=text, edits=residual, essay_id=essay_id)


@dataclass
class EssayVersion:
    essay_id: str
    rate: Fraction
    text: TokenSeq
    residual: M2Record
    applied_ids: frozenset[int]
    seed: int

    @property
    def label(self) -> str:
        return rate_label(self.rate)


@dataclass
class Lineup:
    essay_id: str
    versions: list[EssayVersion]
    seed: int = 0
    n_edits: int = 0
    rates: list[Fraction] = field(init=False)

    def __post_init__(self) -> None:
        self.rates = [v.rate for v in self.versions]

    @property
    def degenerate(self) -> bool:
        """Essays with no annotated errors give identical foils."""
        return self.n_edits == 0

    @property
    def labels(self) -> list[str]:
        return [v.label for v in self.versions]

    def to_json(self) -> dict:
        return {
            "essay_id": self.essay_id,
            "seed": self.seed,
            "degenerate": self.degenerate,
            "versions": [
                {
                    "rate": float(v.rate),
                    "text": " ".join(v.text),
                    "applied_ids": sorted(v.applied_ids),
                    "m2": serialize_m2(v.residual, M2Format(M2Variant.STANDARD)),
                }
                for v in self.versions
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, indent=2) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> Lineup:
        versions = []
        n_edits = 0
        for v in obj["versions"]:
            text = tuple(v["text"].split())
            [residual] = parse_m2("S " + " ".join(text) + "\n" + v["m2"])
            residual.essay_id = obj["essay_id"]
            applied = frozenset(v["applied_ids"])
            n_edits = max(n_edits, len(applied) + len(residual.edits))
            versions.append(
                EssayVersion(obj["essay_id"], as_rate(v["rate"]), text, residual, applied, obj["seed"])
            )
        return cls(obj["essay_id"], versions, seed=obj["seed"], n_edits=n_edits)


def build_lineup(record: M2Record, rates: Sequence[Fraction | float] = DEFAULT_RATES, seed: int = 0) -> Lineup:
    """Build one :class:`EssayVersion` per rate; deterministic in ``(record, rates, seed)``."""
    rates = sorted(as_rate(r) for r in rates)
    if len(set(rates)) != len(rates):
        raise ValueError("lineup rates must be distinct")
    if rates[0] != 0 or rates[-1] != 1:
        raise ValueError("lineup rates must include 0 and 1")
    edits = list(record.edits)
    check_no_overlap(edits)
    order = permutation(len(edits), seed)
    versions = []
    for rate in rates:
        chosen = frozenset(order[: n_corrected(len(edits), rate)])
        residual = remap_residual(record.source, edits, chosen, record.essay_id)
        versions.append(EssayVersion(record.essay_id, rate, residual.source, residual, chosen, seed))
    return Lineup(record.essay_id, versions, seed=seed, n_edits=len(edits))
