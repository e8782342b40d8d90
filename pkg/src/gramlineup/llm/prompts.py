"""Prompt catalog for GEC, feedback generation and the two matching probes."""

from __future__ import annotations

import enum
import re
from typing import Mapping


class MissingSlot(KeyError):
    pass


class PromptKind(enum.Enum):
    GEC = "gec"
    GEF_WITH_GEC = "gef_with_gec"
    GEF_WITH_GEC_100 = "gef_with_gec_100"
    GEF_NO_GEC = "gef_no_gec"
    ESSAY_MATCH = "essay_match"
    FEEDBACK_MATCH = "feedback_match"


ESSAY = "ESSAY"
CORRECTED = "CORRECTED ESSAY"
FEEDBACK = "FEEDBACK"
M2_FILE = "ERRANT M2 FILE"

_LEARNER = "Read the following essay written by an L2 learner of English"
_PAIR = f"{_LEARNER} and its respective corrected version:\n\nOriginal: [ESSAY]\n\nCorrected: [CORRECTED ESSAY]\n\n"
_DIFF = "Provide grammatical feedback to the learner based on the differences between the original and the corrected version."
_NO_REVISION = "You don't have to provide a revised version of the essay."
_DEAR = 'Start your feedback with "Dear learner".'
_YES_NO = "Just say yes or no without providing any additional comment, note or explanation."

ERRANT_LEGEND = (
    "in which M: missing, R: replace, U: unnecessary, ADJ: adjective, ADV: adverb, "
    "CONJ: conjunction, DET: determiner, NOUN: noun, PART: particle, PREP: preposition, "
    "PRON: pronoun, PUNCT: punctuation, VERB: verb, CONTR: contraction, OTHER: other, "
    "MORPH: morphology, ORTH: orthography, SPELL: spelling, WO: word order, FORM: form, "
    "INFL: inflection, NUM: number, POSS: possessive, SVA: agreement, TENSE: tense."
)

TEMPLATES: dict[PromptKind, str] = {
    PromptKind.GEC: (
        f"{_LEARNER}: [ESSAY]\n\n"
        "Provide the grammatically corrected version of the essay without adding any comment, note, or explanation."
    ),
    PromptKind.GEF_WITH_GEC: f"{_PAIR}{_DIFF} {_DEAR}",
    PromptKind.GEF_WITH_GEC_100: f"{_PAIR}{_DIFF} {_NO_REVISION} {_DEAR}",
    PromptKind.GEF_NO_GEC: f"{_LEARNER}: [ESSAY]\n\nProvide grammatical feedback to the learner. {_NO_REVISION} {_DEAR}",
    PromptKind.ESSAY_MATCH: (
        f"{_LEARNER}: [ESSAY]\n\n"
        "Now, read the following feedback: [FEEDBACK]\n\n"
        f"Is it correct, appropriate and thorough? {_YES_NO}"
    ),
    PromptKind.FEEDBACK_MATCH: (
        "Read the following feedback response to an essay written by an L2 learner: [FEEDBACK]\n\n"
        "Now, read this ERRANT (ERRor ANnotation Toolkit) file: [ERRANT M2 FILE]\n\n"
        f"{ERRANT_LEGEND}\n\n"
        f"Does the feedback response explain the ERRANT file correctly, appropriately and thoroughly? {_YES_NO}"
    ),
}

_SLOT_RE = re.compile(r"\[(ESSAY|CORRECTED ESSAY|FEEDBACK|ERRANT M2 FILE)\]")


def placeholders(kind: PromptKind) -> list[str]:
    return _SLOT_RE.findall(TEMPLATES[kind])


def render_prompt(kind: PromptKind, slots: Mapping[str, str]) -> str:
    """Substitute ``[ESSAY]``-style placeholders in one pass, so slot values
    that happen to contain placeholder text are left alone."""
    template = TEMPLATES[kind]
    for name in _SLOT_RE.findall(template):
        if name not in slots:
            raise MissingSlot(f"{kind.value} prompt needs slot [{name}]")
    return _SLOT_RE.sub(lambda m: slots[m.group(1)], template)


def _template_regex(template: str) -> re.Pattern[str]:
    pieces = []
    pos = 0
    for m in _SLOT_RE.finditer(template):
        pieces.append(re.escape(template[pos : m.start()]))
        pieces.append(f"(?P<{m.group(1).replace(' ', '_')}>.*?)")
        pos = m.end()
    pieces.append(re.escape(template[pos:]))
    return re.compile("".join(pieces), re.S)


_PARSERS = {kind: _template_regex(t) for kind, t in TEMPLATES.items()}


def parse_prompt(prompt: str) -> tuple[PromptKind, dict[str, str]] | None:
    """Recover the kind and slot values of a rendered prompt (used by mock backends)."""
    # GEF_WITH_GEC_100 must be tried before GEF_WITH_GEC, whose lazy slot would swallow the extra sentence.
    order = sorted(_PARSERS, key=lambda k: -len(TEMPLATES[k]))
    for kind in order:
        m = _PARSERS[kind].fullmatch(prompt)
        if m:
            return kind, {k.replace("_", " "): v for k, v in m.groupdict().items()}
    return None
