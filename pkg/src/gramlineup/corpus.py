"""Annotation formats: tokenized essays, M2 edit files and CLC-style inline XML.

The M2 layout follows the ERRANT convention::

    S Hello Mike , I bought a mobile phone ...
    A 15 16|||R:SPELL|||listen|||REQUIRED|||-NONE-|||0

Token indices in ``A`` lines refer to the whitespace tokenization of the
``S`` line, so :func:`tokenize` is deliberately simple and fixed.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

TokenSeq = tuple[str, ...]

PUNCT = frozenset(".,!?;:")
NONE_TOKEN = "-NONE-"
NOOP = "noop"

_ETYPE_RE = re.compile(r"^(?:[MRU]:[A-Z]+(?::[A-Z]+)?|noop|UNK)$")
_WORD_RE = re.compile(r"\S+")
_A_LINE_RE = re.compile(r"^A (-?\d+) (-?\d+)\s*\|\|\|(.*)$")


class CorpusError(ValueError):
    """Base class for annotation parsing errors."""


class MalformedLine(CorpusError):
    pass


class SpanOutOfRange(CorpusError):
    pass


class OverlapViolation(CorpusError):
    pass


class InvalidEdit(CorpusError):
    pass


class UnbalancedTag(CorpusError):
    pass


class NestedAnnotation(CorpusError):
    pass


# -- tokenization -----------------------------------------------------------


def tokenize_spans(text: str) -> list[tuple[str, int, int]]:
    """Tokenize ``text`` and return ``(token, char_start, char_end)`` triples."""
    out: list[tuple[str, int, int]] = []
    for m in _WORD_RE.finditer(text):
        word, start = m.group(), m.start()
        cut = len(word)
        while cut > 0 and word[cut - 1] in PUNCT:
            cut -= 1
        if cut:
            out.append((word[:cut], start, start + cut))
        for k in range(cut, len(word)):
            out.append((word[k], start + k, start + k + 1))
    return out


def tokenize(text: str) -> TokenSeq:
    """Split on whitespace, then peel word-final ``. , ! ? ; :`` into their own tokens.

    >>> tokenize("Write soon.")
    ('Write', 'soon', '.')
    """
    return tuple(tok for tok, _, _ in tokenize_spans(text))


def detokenize(tokens: Iterable[str]) -> str:
    """Inverse of :func:`tokenize` for ordinary prose: punctuation re-attaches leftwards."""
    parts: list[str] = []
    for tok in tokens:
        if parts and tok in PUNCT:
            parts[-1] += tok
        else:
            parts.append(tok)
    return " ".join(parts)


def _as_tokens(value: str | Sequence[str]) -> TokenSeq:
    if isinstance(value, str):
        return tuple(value.split())
    return tuple(value)


def _check_tokens(tokens: TokenSeq) -> None:
    for tok in tokens:
        if not tok or any(ch.isspace() for ch in tok):
            raise InvalidEdit(f"invalid token {tok!r}")


# -- edits and records ------------------------------------------------------


@dataclass(frozen=True, order=True)
class Edit:
    """One correction: replace ``source[start:end]`` with ``replacement``.

    ``start == end`` is an insertion; an empty replacement over a non-empty
    span is a deletion.
    """

    start: int
    end: int
    replacement: TokenSeq = ()
    etype: str = "UNK"
    annotator: int = 0
    required: bool = True
    comment: str = NONE_TOKEN

    def __post_init__(self) -> None:
        object.__setattr__(self, "replacement", _as_tokens(self.replacement))
        _check_tokens(self.replacement)
        if not 0 <= self.start <= self.end:
            raise InvalidEdit(f"bad span ({self.start}, {self.end})")
        if not _ETYPE_RE.match(self.etype):
            raise InvalidEdit(f"bad error type {self.etype!r}")
        if self.etype.startswith("U:") and (self.replacement or self.start == self.end):
            raise InvalidEdit(f"{self.etype} edit must be a deletion")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def delta(self) -> int:
        """Change in token count when this edit is applied."""
        return len(self.replacement) - (self.end - self.start)

    def shifted(self, offset: int) -> Edit:
        return replace(self, start=self.start + offset, end=self.end + offset)


def edits_overlap(a: Edit, b: Edit) -> bool:
    """True when ``a`` and ``b`` cannot both be applied to the same text.

    Spans overlap when they share a token, when an insertion falls strictly
    inside the other span, or when both are insertions at one position.
    """
    if a.start == a.end and b.start == b.end:
        return a.start == b.start
    return a.start < b.end and b.start < a.end


def check_no_overlap(edits: Sequence[Edit]) -> None:
    ordered = sorted(edits, key=lambda e: (e.start, e.end))
    # Sorted by start, so it is enough to compare neighbours and track the
    # furthest end seen so far.
    for prev, cur in zip(ordered, ordered[1:]):
        if edits_overlap(prev, cur):
            raise OverlapViolation(f"edits {prev.span} and {cur.span} overlap")
    far_end = -1
    for e in ordered:
        if e.start < far_end:
            raise OverlapViolation(f"edit {e.span} overlaps an earlier span ending at {far_end}")
        far_end = max(far_end, e.end)


@dataclass
class M2Record:
    source: TokenSeq
    edits: list[Edit] = field(default_factory=list)
    essay_id: str = ""

    def __post_init__(self) -> None:
        self.source = _as_tokens(self.source)
        self.edits = sorted(self.edits, key=lambda e: (e.start, e.end))

    def validate(self) -> None:
        _check_tokens(self.source)
        for e in self.edits:
            if e.end > len(self.source):
                raise SpanOutOfRange(
                    f"edit {e.span} exceeds source length {len(self.source)}"
                )
        by_annotator: dict[int, list[Edit]] = {}
        for e in self.edits:
            by_annotator.setdefault(e.annotator, []).append(e)
        for group in by_annotator.values():
            check_no_overlap(group)


class M2Variant(enum.Enum):
    STANDARD = "standard"
    REPLACED_CORRECTED = "replaced"
    NO_LEXICAL = "nolex"


@dataclass(frozen=True)
class M2Format:
    variant: M2Variant = M2Variant.STANDARD
    include_source: bool = False

    @classmethod
    def parse(cls, name: str, include_source: bool = False) -> M2Format:
        aliases = {
            "standard": M2Variant.STANDARD,
            "replaced": M2Variant.REPLACED_CORRECTED,
            "replaced_corrected": M2Variant.REPLACED_CORRECTED,
            "nolex": M2Variant.NO_LEXICAL,
            "no_lexical": M2Variant.NO_LEXICAL,
        }
        try:
            return cls(aliases[name.lower()], include_source)
        except KeyError:
            raise ValueError(f"unknown M2 format {name!r}") from None


STANDARD_WITH_SOURCE = M2Format(M2Variant.STANDARD, include_source=True)


# -- M2 parsing and serialization ------------------------------------------


def _parse_a_line(line: str, lineno: int) -> Edit | None:
    m = _A_LINE_RE.match(line)
    if not m:
        raise MalformedLine(f"line {lineno}: cannot parse annotation {line!r}")
    start, end = int(m.group(1)), int(m.group(2))
    fields = m.group(3).split("|||")
    if len(fields) != 5:
        raise MalformedLine(f"line {lineno}: expected 6 '|||' fields, got {len(fields) + 1}")
    etype, corr, req, comment, annotator = fields
    if etype == NOOP or (start, end) == (-1, -1):
        return None
    corr = corr.strip()
    replacement = () if corr in ("", NONE_TOKEN) else tuple(corr.split())
    try:
        return Edit(
            start,
            end,
            replacement,
            etype=etype,
            annotator=int(annotator),
            required=req == "REQUIRED",
            comment=comment,
        )
    except (InvalidEdit, ValueError) as exc:
        raise MalformedLine(f"line {lineno}: {exc}") from None


def parse_m2(text: str, annotator: int | None = 0) -> list[M2Record]:
    """Parse an M2 file into one record per ``S`` block, in file order.

    Only edits by ``annotator`` are kept; pass ``None`` to keep every
    annotator. ``noop`` lines yield no edits.
    """
    records: list[M2Record] = []
    current: M2Record | None = None

    def close() -> None:
        nonlocal current
        if current is not None:
            current.edits.sort(key=lambda e: (e.start, e.end))
            current.validate()
            records.append(current)
        current = None

    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            close()
        elif line.startswith("S"):
            close()
            current = M2Record(source=tuple(line[1:].split()), essay_id=str(len(records)))
        elif line.startswith("A"):
            if current is None:
                raise MalformedLine(f"line {lineno}: annotation before any source line")
            edit = _parse_a_line(line, lineno)
            if edit is None:
                continue
            if edit.end > len(current.source):
                raise SpanOutOfRange(
                    f"line {lineno}: span {edit.span} exceeds source length {len(current.source)}"
                )
            if annotator is None or edit.annotator == annotator:
                current.edits.append(edit)
        else:
            raise MalformedLine(f"line {lineno}: expected 'S', 'A' or blank, got {line[:20]!r}")
    close()
    return records


def _correction_field(record: M2Record, edit: Edit, variant: M2Variant) -> str:
    if variant is M2Variant.NO_LEXICAL:
        return ""
    if variant is M2Variant.REPLACED_CORRECTED:
        return " ".join(record.source[edit.start : edit.end])
    return " ".join(edit.replacement) if edit.replacement else NONE_TOKEN


def serialize_m2(record: M2Record, fmt: M2Format = STANDARD_WITH_SOURCE) -> str:
    """Render one record; every emitted line ends with ``\\n``."""
    lines = []
    if fmt.include_source:
        lines.append("S " + " ".join(record.source))
    for e in record.edits:
        corr = _correction_field(record, e, fmt.variant)
        req = "REQUIRED" if e.required else "OPTIONAL"
        lines.append(f"A {e.start} {e.end}|||{e.etype}|||{corr}|||{req}|||{e.comment}|||{e.annotator}")
    return "".join(line + "\n" for line in lines)


def dump_m2(records: Iterable[M2Record], fmt: M2Format = STANDARD_WITH_SOURCE) -> str:
    """Render several records separated by blank lines."""
    return "\n".join(serialize_m2(r, fmt) for r in records)


# -- CLC inline XML ---------------------------------------------------------


@dataclass(frozen=True)
class ClcAnnotation:
    etype: str
    wrong: str
    correct: str
    char_offset: int

    def __post_init__(self) -> None:
        if not self.wrong.strip() and not self.correct.strip():
            raise InvalidEdit(f"empty {self.etype} annotation at offset {self.char_offset}")


@dataclass
class ClcTypeMap:
    """Maps raw CLC codes to M2 error types.

    Codes without an override become ``<prefix>:<CODE>`` where the prefix is
    ``R`` (both sides present), ``M`` (only the correction) or ``U`` (only
    the learner text).
    """

    overrides: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path) -> ClcTypeMap:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(dict(data.get("overrides", {})))

    def etype(self, ann: ClcAnnotation) -> str:
        if ann.etype in self.overrides:
            return self.overrides[ann.etype]
        has_wrong, has_correct = bool(ann.wrong.strip()), bool(ann.correct.strip())
        prefix = "R" if has_wrong and has_correct else ("U" if has_wrong else "M")
        return f"{prefix}:{ann.etype.upper()}"


_NS_TAG_RE = re.compile(r"<NS\s+type\s*=\s*[\"']([^\"']*)[\"']\s*>|</NS\s*>")
_INNER_RE = re.compile(r"<(i|c)>(.*?)</\1>", re.S)


def _split_ns_body(body: str) -> tuple[str, str]:
    parts = dict((tag, text) for tag, text in _INNER_RE.findall(body))
    if parts:
        return parts.get("i", ""), parts.get("c", "")
    if "|" in body:
        wrong, correct = body.split("|", 1)
        return wrong, correct
    return body, ""


def parse_clc_annotations(text: str) -> tuple[str, list[ClcAnnotation]]:
    """Strip ``<NS>`` markup, returning the learner text and the annotations."""
    plain: list[str] = []
    anns: list[ClcAnnotation] = []
    pos, length = 0, 0
    open_tag: re.Match[str] | None = None
    for m in _NS_TAG_RE.finditer(text):
        if m.group(0).startswith("</"):
            if open_tag is None:
                raise UnbalancedTag(f"closing </NS> at offset {m.start()} without an opening tag")
            wrong, correct = _split_ns_body(text[open_tag.end() : m.start()])
            lead = len(wrong) - len(wrong.lstrip())
            anns.append(ClcAnnotation(open_tag.group(1), wrong.strip(), correct.strip(), length + lead))
            plain.append(wrong)
            length += len(wrong)
            open_tag = None
        else:
            if open_tag is not None:
                raise NestedAnnotation(f"<NS> at offset {m.start()} nested inside another <NS>")
            chunk = text[pos : m.start()]
            plain.append(chunk)
            length += len(chunk)
            open_tag = m
        pos = m.end()
    if open_tag is not None:
        raise UnbalancedTag(f"<NS> at offset {open_tag.start()} is never closed")
    plain.append(text[pos:])
    return "".join(plain), anns


def strip_tags_keep_wrong(text: str) -> str:
    return parse_clc_annotations(text)[0]


def parse_clc_xml(
    text: str, essay_id: str = "", type_map: ClcTypeMap | None = None
) -> M2Record:
    """Convert a CLC fragment with ``<NS type="X">wrong|correct</NS>`` spans to an M2 record."""
    type_map = type_map or ClcTypeMap()
    plain, anns = parse_clc_annotations(text)
    spans = tokenize_spans(plain)
    edits = []
    for ann in anns:
        a = ann.char_offset
        b = a + len(ann.wrong)
        if ann.wrong:
            covered = [i for i, (_, ts, te) in enumerate(spans) if ts < b and te > a]
            start, end = covered[0], covered[-1] + 1
        else:
            start = end = sum(1 for _, _, te in spans if te <= a)
        try:
            edits.append(Edit(start, end, tokenize(ann.correct), etype=type_map.etype(ann)))
        except InvalidEdit as exc:
            raise InvalidEdit(f"annotation at offset {a}: {exc}") from None
    record = M2Record(source=tuple(t for t, _, _ in spans), edits=edits, essay_id=essay_id)
    record.validate()
    return record


# -- essay manifest ---------------------------------------------------------


@dataclass
class Essay:
    """One line of the essay manifest, resolved to an annotated record."""

    essay_id: str
    record: M2Record
    text: str = ""
    cefr_level: str | None = None
    l1: str | None = None


def essay_from_json(obj: Mapping, type_map: ClcTypeMap | None = None) -> Essay:
    """Resolve a manifest entry; annotations are taken from ``m2``, then ``clc``,
    then an alignment of ``text`` against ``corrected_text``."""
    essay_id = str(obj["essay_id"])
    text = obj.get("text", "")
    if obj.get("m2"):
        records = parse_m2(obj["m2"])
        if len(records) != 1:
            raise CorpusError(f"essay {essay_id}: m2 field must hold exactly one record")
        record = records[0]
    elif obj.get("clc"):
        record = parse_clc_xml(obj["clc"], type_map=type_map)
    elif obj.get("corrected_text") is not None:
        from gramlineup.metrics import extract_edits

        source = tokenize(text)
        record = M2Record(source, extract_edits(source, tokenize(obj["corrected_text"])))
    else:
        record = M2Record(tokenize(text))
    record.essay_id = essay_id
    return Essay(essay_id, record, text, obj.get("cefr_level"), obj.get("l1"))


def load_corpus(path: str | Path, type_map: ClcTypeMap | None = None) -> list[Essay]:
    """Read a JSON-lines essay manifest."""
    essays = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                essay = essay_from_json(json.loads(line), type_map)
            except (KeyError, json.JSONDecodeError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from None
            if essay.essay_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate essay_id {essay.essay_id!r}")
            seen.add(essay.essay_id)
            essays.append(essay)
    return essays


def essay_to_json(essay: Essay) -> dict:
    obj = {"essay_id": essay.essay_id, "text": essay.text or detokenize(essay.record.source)}
    obj["m2"] = serialize_m2(essay.record, STANDARD_WITH_SOURCE)
    if essay.cefr_level:
        obj["cefr_level"] = essay.cefr_level
    if essay.l1:
        obj["l1"] = essay.l1
    return obj
