"""GEC metrics: untyped edit extraction, edit-level precision/recall/F-beta, corpus GLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from gramlineup.corpus import Edit, TokenSeq

# Alignment operations.
MATCH, SUB, INS, DEL, TRANS = "M", "S", "I", "D", "T"


def align(source: Sequence[str], target: Sequence[str]) -> list[tuple[str, int, int]]:
    """Minimal-cost token alignment with unit-cost substitution, insertion,
    deletion and adjacent transposition.

    Returns ``(op, i, j)`` steps where ``i``/``j`` are the source/target
    positions at which the step begins. Ties prefer match, then substitution,
    transposition, deletion, insertion.
    """
    n, m = len(source), len(target)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        row, prev = cost[i], cost[i - 1]
        s = source[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (s != target[j - 1])
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if row[j - 1] + 1 < best:
                best = row[j - 1] + 1
            if (
                i > 1
                and j > 1
                and s == target[j - 2]
                and source[i - 2] == target[j - 1]
                and cost[i - 2][j - 2] + 1 < best
            ):
                best = cost[i - 2][j - 2] + 1
            row[j] = best

    steps: list[tuple[str, int, int]] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0 and source[i - 1] == target[j - 1] and cost[i - 1][j - 1] == here:
            steps.append((MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and cost[i - 1][j - 1] + 1 == here:
            steps.append((SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif (
            i > 1
            and j > 1
            and source[i - 1] == target[j - 2]
            and source[i - 2] == target[j - 1]
            and source[i - 1] != source[i - 2]
            and cost[i - 2][j - 2] + 1 == here
        ):
            steps.append((TRANS, i - 2, j - 2))
            i, j = i - 2, j - 2
        elif i > 0 and cost[i - 1][j] + 1 == here:
            steps.append((DEL, i - 1, j))
            i -= 1
        else:
            steps.append((INS, i, j - 1))
            j -= 1
    steps.reverse()
    return steps


def extract_edits(source: Sequence[str], target: Sequence[str]) -> list[Edit]:
    """Untyped edits turning ``source`` into ``target``.

    Adjacent non-match alignment steps merge into one edit; a transposition
    becomes an ordinary two-token replacement.
    """
    source, target = tuple(source), tuple(target)
    edits: list[Edit] = []
    run_start: tuple[int, int] | None = None
    i = j = 0

    def flush() -> None:
        nonlocal run_start
        if run_start is not None:
            si, sj = run_start
            edits.append(Edit(si, i, target[sj:j], etype="UNK"))
            run_start = None

    for op, _, _ in align(source, target):
        if op == MATCH:
            flush()
            i, j = i + 1, j + 1
            continue
        if run_start is None:
            run_start = (i, j)
        if op == SUB:
            i, j = i + 1, j + 1
        elif op == TRANS:
            i, j = i + 2, j + 2
        elif op == DEL:
            i += 1
        else:
            j += 1
    flush()
    return edits


# -- precision / recall / F-beta -------------------------------------------


def f_beta(precision: float, recall: float, beta: float = 0.5) -> float:
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0.0
    return (1 + b2) * precision * recall / denom


@dataclass(frozen=True)
class PRF:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    beta: float = 0.5

    @property
    def precision(self) -> float:
        # 0/0 counts as perfect, as in the M2 scorer.
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0

    @property
    def f_beta(self) -> float:
        return f_beta(self.precision, self.recall, self.beta)

    def __add__(self, other: PRF) -> PRF:
        if self.beta != other.beta:
            raise ValueError("cannot combine scores with different beta")
        return PRF(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.beta)


def _edit_key(e: Edit) -> tuple[int, int, TokenSeq]:
    return (e.start, e.end, tuple(e.replacement))


def edit_prf(hyp: Iterable[Edit], ref: Iterable[Edit], beta: float = 0.5) -> PRF:
    """Score hypothesis edits against reference edits over one source text.

    Edits match on span and replacement only; error types are ignored.
    """
    h = Counter(_edit_key(e) for e in hyp)
    r = Counter(_edit_key(e) for e in ref)
    tp = sum((h & r).values())
    return PRF(tp, sum(h.values()) - tp, sum(r.values()) - tp, beta)


def corpus_prf(pairs: Iterable[tuple[Iterable[Edit], Iterable[Edit]]], beta: float = 0.5) -> PRF:
    total = PRF(beta=beta)
    for hyp, ref in pairs:
        total = total + edit_prf(hyp, ref, beta)
    return total


# -- GLEU ------------------------------------------------------------------


class EmptyCorpus(ValueError):
    pass


@dataclass(frozen=True)
class GleuScore:
    score: float
    n_max: int
    precisions: list[float] = field(default_factory=list)
    brevity_penalty: float = 1.0


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[k : k + n]) for k in range(len(tokens) - n + 1))


def gleu(
    sources: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    hypotheses: Sequence[Sequence[str]],
    n_max: int = 4,
) -> GleuScore:
    """Corpus GLEU with a single reference per sentence.

    For each order n the numerator credits hypothesis n-grams found in the
    reference and debits those that survive from the source although the
    reference changed them. Orders for which the hypotheses contain no
    n-grams at all are left out of the geometric mean.
    """
    if not (len(sources) == len(references) == len(hypotheses)):
        raise ValueError("sources, references and hypotheses must be aligned")
    if not hypotheses:
        raise EmptyCorpus("GLEU needs at least one sentence")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")

    num = [0] * (n_max + 1)
    den = [0] * (n_max + 1)
    hyp_len = ref_len = 0
    for src, ref, hyp in zip(sources, references, hypotheses):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, n_max + 1):
            h, r, s = ngrams(hyp, n), ngrams(ref, n), ngrams(src, n)
            # Survivors are source n-grams kept by the hypothesis beyond what the reference keeps.
            num[n] += max(0, sum((h & r).values()) - sum(((h & s) - r).values()))
            den[n] += max(0, len(hyp) - n + 1)

    precisions = [num[n] / den[n] if den[n] else 0.0 for n in range(1, n_max + 1)]
    if hyp_len == 0:
        return GleuScore(0.0, n_max, precisions, 0.0)
    bp = min(1.0, math.exp(1 - ref_len / hyp_len))
    orders = [n for n in range(1, n_max + 1) if den[n]]
    if any(num[n] == 0 for n in orders):
        return GleuScore(0.0, n_max, precisions, bp)
    log_mean = sum(math.log(num[n] / den[n]) for n in orders) / len(orders)
    return GleuScore(bp * math.exp(log_mean), n_max, precisions, bp)
