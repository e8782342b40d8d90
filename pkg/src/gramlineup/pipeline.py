"""The three stages over a corpus of lineups: GEC, feedback generation, discrimination.

Discrimination probes every (query, foil) pair of a lineup once, independently,
and predicts the foil with the highest yes-probability.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from gramlineup.corpus import Edit, Essay, M2Format, M2Variant, TokenSeq, detokenize, serialize_m2, tokenize
from gramlineup.lineup import (
    DEFAULT_RATES,
    EssayVersion,
    Lineup,
    apply_all,
    as_rate,
    build_lineup,
    essay_seed,
    rate_label,
)
from gramlineup.llm import ChatRequest, Gateway, PromptKind, render_prompt
from gramlineup.llm.prompts import CORRECTED, ESSAY, FEEDBACK, M2_FILE
from gramlineup.metrics import PRF, edit_prf, extract_edits, gleu

log = logging.getLogger(__name__)

GEC_MAX_TOKENS = 2048
GEF_MAX_TOKENS = 1024


class MissingHypothesis(LookupError):
    pass


class GecKind(enum.Enum):
    MANUAL = "manual"
    HYP_FILE = "hyp"
    LLM = "llm"
    NONE = "none"


@dataclass(frozen=True)
class GecSource:
    kind: GecKind
    name: str = ""

    @classmethod
    def parse(cls, spec: str) -> GecSource:
        """``manual``, ``none``, ``hyp:<system>`` or ``llm:<model>``."""
        head, _, tail = spec.partition(":")
        try:
            kind = GecKind(head.lower())
        except ValueError:
            raise ValueError(f"unknown GEC source {spec!r}") from None
        if kind in (GecKind.HYP_FILE, GecKind.LLM) and not tail:
            raise ValueError(f"GEC source {spec!r} needs a name after ':'")
        return cls(kind, tail)

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.name}" if self.name else self.kind.value


def load_hypotheses(
    root: str | Path, system: str, essay_ids: Sequence[str], labels: Iterable[str]
) -> dict[tuple[str, str], TokenSeq]:
    """Read ``<root>/<system>/<label>.txt``: one tokenized essay per line, in corpus order."""
    out: dict[tuple[str, str], TokenSeq] = {}
    for label in labels:
        path = Path(root) / system / f"{label}.txt"
        if not path.exists():
            continue
        lines = path.read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) != len(essay_ids):
            raise MissingHypothesis(f"{path}: {len(lines)} lines for {len(essay_ids)} essays")
        for essay_id, line in zip(essay_ids, lines):
            out[(essay_id, label)] = tokenize(line)
    return out


def run_gec(
    versions: Sequence[EssayVersion],
    source: GecSource,
    *,
    gateway: Gateway | None = None,
    hypotheses: Mapping[tuple[str, str], TokenSeq] | None = None,
) -> dict[Fraction, TokenSeq]:
    """One corrected text per version (empty for ``GecKind.NONE``)."""
    out: dict[Fraction, TokenSeq] = {}
    if source.kind is GecKind.NONE:
        return out
    for v in versions:
        if source.kind is GecKind.MANUAL:
            out[v.rate] = apply_all(v.text, v.residual.edits)
        elif source.kind is GecKind.HYP_FILE:
            key = (v.essay_id, v.label)
            if hypotheses is None or key not in hypotheses:
                raise MissingHypothesis(f"no {source.name} hypothesis for essay {v.essay_id} at {v.label}%")
            out[v.rate] = hypotheses[key]
        else:
            if gateway is None:
                raise ValueError("LLM GEC needs a gateway")
            prompt = render_prompt(PromptKind.GEC, {ESSAY: detokenize(v.text)})
            text = gateway.complete(ChatRequest(source.name, prompt, max_tokens=GEC_MAX_TOKENS))
            out[v.rate] = tokenize(text)
    return out


@dataclass(frozen=True)
class FeedbackResponse:
    essay_id: str
    rate: Fraction
    generator_model: str
    gec_source: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"empty feedback for essay {self.essay_id} at {rate_label(self.rate)}%")

    def to_json(self) -> dict:
        return {
            "essay_id": self.essay_id,
            "rate": float(self.rate),
            "generator_model": self.generator_model,
            "gec_source": self.gec_source,
            "text": self.text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> FeedbackResponse:
        return cls(obj["essay_id"], as_rate(obj["rate"]), obj["generator_model"], obj["gec_source"], obj["text"])


def feedback_prompt(version: EssayVersion, corrected: TokenSeq | None) -> str:
    essay = detokenize(version.text)
    if corrected is None:
        return render_prompt(PromptKind.GEF_NO_GEC, {ESSAY: essay})
    kind = PromptKind.GEF_WITH_GEC_100 if version.rate == 1 else PromptKind.GEF_WITH_GEC
    return render_prompt(kind, {ESSAY: essay, CORRECTED: detokenize(corrected)})


def generate_feedback(
    lineup: Lineup,
    corrected: Mapping[Fraction, TokenSeq],
    generator: str,
    gec_source: GecSource,
    gateway: Gateway,
) -> list[FeedbackResponse]:
    with_gec = gec_source.kind is not GecKind.NONE
    out = []
    for v in lineup.versions:
        if with_gec and v.rate not in corrected:
            raise MissingHypothesis(f"no corrected text for essay {v.essay_id} at {v.label}%")
        prompt = feedback_prompt(v, corrected[v.rate] if with_gec else None)
        text = gateway.complete(ChatRequest(generator, prompt, max_tokens=GEF_MAX_TOKENS))
        out.append(FeedbackResponse(v.essay_id, v.rate, generator, str(gec_source), text))
    return out


# -- discrimination --------------------------------------------------------


@dataclass
class ProbMatrix:
    """Yes-probabilities for one essay: ``p[i][j]`` probes query ``rows[i]`` against foil ``cols[j]``."""

    essay_id: str
    rows: list[str]
    cols: list[str]
    p: list[list[float]]
    method: str
    p_normalized: list[list[float]] = field(default_factory=list)
    degenerate_rows: list[int] = field(default_factory=list)
    degenerate_essay: bool = False

    def to_json(self) -> dict:
        return {
            "essay_id": self.essay_id,
            "method": self.method,
            "rows": self.rows,
            "cols": self.cols,
            "p": self.p,
            "p_normalized": self.p_normalized,
            "degenerate_rows": self.degenerate_rows,
            "degenerate_essay": self.degenerate_essay,
        }

    @classmethod
    def from_json(cls, obj: dict) -> ProbMatrix:
        return cls(
            obj["essay_id"],
            list(obj["rows"]),
            list(obj["cols"]),
            [list(r) for r in obj["p"]],
            obj["method"],
            [list(r) for r in obj.get("p_normalized", [])],
            list(obj.get("degenerate_rows", [])),
            bool(obj.get("degenerate_essay", False)),
        )


def _ordered_feedbacks(lineup: Lineup, feedbacks: Sequence[FeedbackResponse]) -> list[FeedbackResponse]:
    by_rate = {f.rate: f for f in feedbacks if f.essay_id == lineup.essay_id}
    missing = [v.label for v in lineup.versions if v.rate not in by_rate]
    if missing:
        raise ValueError(f"essay {lineup.essay_id}: no feedback for rates {', '.join(missing)}")
    return [by_rate[v.rate] for v in lineup.versions]


def _probe_grid(prompts: list[list[str]], judge: str, gateway: Gateway) -> tuple[list[list[float]], list[list[float]]]:
    p, pn = [], []
    for row in prompts:
        probes = [gateway.probe_yes(prompt, judge) for prompt in row]
        p.append([pr.p_yes for pr in probes])
        pn.append([pr.p_yes_normalized for pr in probes])
    return p, pn


def discriminate_essay_type(
    lineup: Lineup, feedbacks: Sequence[FeedbackResponse], judge: str, gateway: Gateway
) -> ProbMatrix:
    """Rows are feedback responses, columns the essay versions they are matched against."""
    fbs = _ordered_feedbacks(lineup, feedbacks)
    essays = [detokenize(v.text) for v in lineup.versions]
    prompts = [
        [render_prompt(PromptKind.ESSAY_MATCH, {ESSAY: e, FEEDBACK: f.text}) for e in essays] for f in fbs
    ]
    p, pn = _probe_grid(prompts, judge, gateway)
    return ProbMatrix(
        lineup.essay_id, lineup.labels, lineup.labels, p, "essay", pn, degenerate_essay=lineup.degenerate
    )


def method_name(fmt: M2Format) -> str:
    return f"feedback:{fmt.variant.value}"


def discriminate_feedback_based(
    lineup: Lineup,
    feedbacks: Sequence[FeedbackResponse],
    fmt: M2Format,
    judge: str,
    gateway: Gateway,
) -> ProbMatrix:
    """Rows are the residual M2 files of each version, columns the feedback responses."""
    if fmt.include_source:
        raise ValueError("the learner essay line must be left out of M2 files used for matching")
    fbs = _ordered_feedbacks(lineup, feedbacks)
    files = [serialize_m2(v.residual, fmt).rstrip("\n") for v in lineup.versions]
    prompts = [
        [render_prompt(PromptKind.FEEDBACK_MATCH, {M2_FILE: m2, FEEDBACK: f.text}) for f in fbs] for m2 in files
    ]
    p, pn = _probe_grid(prompts, judge, gateway)
    degenerate = [i for i, v in enumerate(lineup.versions) if not v.residual.edits]
    return ProbMatrix(
        lineup.essay_id,
        lineup.labels,
        lineup.labels,
        p,
        method_name(fmt),
        pn,
        degenerate_rows=degenerate,
        degenerate_essay=lineup.degenerate,
    )


# -- scoring ---------------------------------------------------------------


@dataclass
class EvalReport:
    labels: list[str]
    accuracy: float
    confusion: list[list[int]]
    mean_yes: dict[str, list[float] | None]
    n_essays: int
    n_ties: int = 0
    degenerate_essays: list[str] = field(default_factory=list)
    accuracy_non_degenerate: float | None = None
    accuracy_degenerate: float | None = None
    method: str = ""

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "labels": self.labels,
            "n_essays": self.n_essays,
            "accuracy": self.accuracy,
            "confusion": self.confusion,
            "mean_yes": self.mean_yes,
            "n_ties": self.n_ties,
            "degenerate_essays": self.degenerate_essays,
            "accuracy_non_degenerate": self.accuracy_non_degenerate,
            "accuracy_degenerate": self.accuracy_degenerate,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, obj: dict) -> EvalReport:
        return cls(
            labels=list(obj["labels"]),
            accuracy=obj["accuracy"],
            confusion=[list(r) for r in obj["confusion"]],
            mean_yes=dict(obj["mean_yes"]),
            n_essays=obj["n_essays"],
            n_ties=obj.get("n_ties", 0),
            degenerate_essays=list(obj.get("degenerate_essays", [])),
            accuracy_non_degenerate=obj.get("accuracy_non_degenerate"),
            accuracy_degenerate=obj.get("accuracy_degenerate"),
            method=obj.get("method", ""),
        )


def argmax_first(values: Sequence[float]) -> tuple[int, bool]:
    """Index of the maximum (lowest index on ties) and whether a tie occurred."""
    best = max(values)
    hits = [j for j, v in enumerate(values) if v == best]
    return hits[0], len(hits) > 1


def accuracy(matrices: Sequence[ProbMatrix]) -> EvalReport:
    if not matrices:
        return EvalReport([], 0.0, [], {}, 0)
    labels = matrices[0].rows
    for m in matrices:
        if m.rows != labels or m.cols != labels:
            raise ValueError(f"essay {m.essay_id}: lineup labels differ from {labels}")
    k = len(labels)
    confusion = [[0] * k for _ in range(k)]
    correct = {True: [0, 0], False: [0, 0]}  # degenerate? -> [correct, total]
    ties = 0
    sums: list[list[list[float]]] = [[[] for _ in range(k)] for _ in range(k)]
    for m in matrices:
        for i, row in enumerate(m.p):
            pred, tied = argmax_first(row)
            ties += tied
            if tied:
                log.debug("essay %s row %s: tie broken towards %s", m.essay_id, labels[i], labels[pred])
            confusion[i][pred] += 1
            bucket = correct[m.degenerate_essay]
            bucket[0] += pred == i
            bucket[1] += 1
            if i not in m.degenerate_rows:
                for j, v in enumerate(row):
                    sums[i][j].append(v)
    mean_yes: dict[str, list[float] | None] = {}
    for i, label in enumerate(labels):
        # fsum keeps the means independent of essay order.
        mean_yes[label] = [math.fsum(c) / len(c) for c in sums[i]] if sums[i][0] else None
    total = sum(b[1] for b in correct.values())
    hits = sum(b[0] for b in correct.values())

    def ratio(b: list[int]) -> float | None:
        return b[0] / b[1] if b[1] else None

    return EvalReport(
        labels=list(labels),
        accuracy=hits / total,
        confusion=confusion,
        mean_yes=mean_yes,
        n_essays=len(matrices),
        n_ties=ties,
        degenerate_essays=sorted(m.essay_id for m in matrices if m.degenerate_essay),
        accuracy_non_degenerate=ratio(correct[False]),
        accuracy_degenerate=ratio(correct[True]),
        method=matrices[0].method,
    )


# -- orchestration ---------------------------------------------------------


@dataclass
class RunSpec:
    rates: Sequence[Fraction] = DEFAULT_RATES
    seed: int = 0
    gec_source: GecSource = GecSource(GecKind.MANUAL)
    generator: str = "mock:oracle"
    judge: str = "mock:oracle"
    method: str = "feedback"
    m2_format: M2Format = M2Format(M2Variant.NO_LEXICAL)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.method not in ("essay", "feedback"):
            raise ValueError(f"method must be 'essay' or 'feedback', got {self.method!r}")


@dataclass
class EssayResult:
    lineup: Lineup
    corrected: dict[Fraction, TokenSeq]
    feedbacks: list[FeedbackResponse]
    matrix: ProbMatrix


@dataclass
class RunResult:
    essays: list[EssayResult]
    report: EvalReport

    @property
    def matrices(self) -> list[ProbMatrix]:
        return [e.matrix for e in self.essays]


def lineups_for(essays: Sequence[Essay], rates: Sequence[Fraction], seed: int) -> list[Lineup]:
    return [build_lineup(e.record, rates, essay_seed(seed, e.essay_id)) for e in essays]


def run_essay(
    lineup: Lineup,
    spec: RunSpec,
    gateway: Gateway,
    hypotheses: Mapping[tuple[str, str], TokenSeq] | None = None,
    feedbacks: Sequence[FeedbackResponse] | None = None,
) -> EssayResult:
    corrected = run_gec(lineup.versions, spec.gec_source, gateway=gateway, hypotheses=hypotheses)
    if feedbacks is None:
        feedbacks = generate_feedback(lineup, corrected, spec.generator, spec.gec_source, gateway)
    if spec.method == "essay":
        matrix = discriminate_essay_type(lineup, feedbacks, spec.judge, gateway)
    else:
        matrix = discriminate_feedback_based(lineup, feedbacks, spec.m2_format, spec.judge, gateway)
    return EssayResult(lineup, corrected, list(feedbacks), matrix)


def run_pipeline(
    essays: Sequence[Essay],
    spec: RunSpec,
    gateway: Gateway,
    hypotheses: Mapping[tuple[str, str], TokenSeq] | None = None,
) -> RunResult:
    """Run every stage for every essay; results keep corpus order whatever the completion order."""
    lineups = lineups_for(essays, spec.rates, spec.seed)
    workers = max(1, min(spec.workers, gateway.max_in_flight))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda lu: run_essay(lu, spec, gateway, hypotheses), lineups))
    return RunResult(results, accuracy([r.matrix for r in results]))


# -- GEC scoring -----------------------------------------------------------


@dataclass
class GecGrid:
    """``cells[i][j]``: edits of the system run on version ``labels[i]`` against the residual of ``labels[j]``."""

    system: str
    labels: list[str]
    cells: list[list[PRF]]


@dataclass
class GleuTable:
    labels: list[str]
    columns: list[str]
    scores: list[list[float]]


LOWER_BOUND = "lower bound"


def _versions_by_label(lineup: Lineup) -> dict[str, EssayVersion]:
    return {v.label: v for v in lineup.versions}


def system_edits(version: EssayVersion, hyp: TokenSeq | None) -> list[Edit]:
    """Edits a system made on ``version``; ``None`` stands for the manual residual itself."""
    if hyp is None:
        return list(version.residual.edits)
    return extract_edits(version.text, hyp)


def gec_grid(
    lineups: Sequence[Lineup],
    system: str,
    hypotheses: Mapping[tuple[str, str], TokenSeq] | None,
    labels: Sequence[str] | None = None,
    beta: float = 0.5,
) -> GecGrid:
    """Corpus-level PRF for every (hypothesis version, reference version) pair.

    ``hypotheses=None`` scores the manual corrections. Without ``labels`` the
    grid covers the versions for which hypotheses exist, in lineup order,
    leaving out the fully corrected one.
    """
    if not lineups:
        return GecGrid(system, [], [])
    if labels is None:
        labels = [v.label for v in lineups[0].versions if v.rate < 1]
        if hypotheses is not None:
            labels = [lb for lb in labels if all((lu.essay_id, lb) in hypotheses for lu in lineups)]
    labels = list(labels)
    cells = []
    for hl in labels:
        row = []
        for rl in labels:
            total = PRF(0, 0, 0, beta)
            for lu in lineups:
                by = _versions_by_label(lu)
                hv, rv = by[hl], by[rl]
                if hypotheses is None:
                    hyp = None
                else:
                    key = (lu.essay_id, hl)
                    if key not in hypotheses:
                        raise MissingHypothesis(f"no {system} hypothesis for essay {lu.essay_id} at {hl}%")
                    hyp = hypotheses[key]
                total = total + edit_prf(system_edits(hv, hyp), rv.residual.edits, beta)
            row.append(total)
        cells.append(row)
    return GecGrid(system, labels, cells)


def gleu_table(
    lineups: Sequence[Lineup],
    systems: Mapping[str, Mapping[tuple[str, str], TokenSeq]],
    labels: Sequence[str] | None = None,
    n_max: int = 4,
) -> GleuTable:
    """GLEU of each system on each version against the full correction; the first column scores the unchanged source."""
    if not lineups:
        return GleuTable([], [LOWER_BOUND, *systems], [])
    if labels is None:
        labels = [v.label for v in lineups[0].versions if v.rate < 1]
    labels = list(labels)
    scores = []
    for lb in labels:
        versions = [_versions_by_label(lu)[lb] for lu in lineups]
        sources = [v.text for v in versions]
        refs = [apply_all(v.text, v.residual.edits) for v in versions]
        row = [gleu(sources, refs, sources, n_max).score]
        for name, hyps in systems.items():
            try:
                hyp = [hyps[(v.essay_id, lb)] for v in versions]
            except KeyError as exc:
                raise MissingHypothesis(f"no {name} hypothesis for {exc.args[0]}") from None
            row.append(gleu(sources, refs, hyp, n_max).score)
        scores.append(row)
    return GleuTable(labels, [LOWER_BOUND, *systems], scores)
