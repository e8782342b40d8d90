"""Seeded synthetic learner essays with known corrections.

Errors are injected into correct text at positions at least two tokens
apart, and never next to an identical token, so that re-aligning any
partially corrected version against the correction recovers exactly the
annotated spans.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from gramlineup.corpus import STANDARD_WITH_SOURCE, Edit, M2Record, detokenize, serialize_m2, tokenize

SENTENCES = [
    "I bought a mobile phone last week and I like it very much .",
    "My sister goes to school by bus every morning .",
    "We went to the beach with our friends in the summer .",
    "The teacher gave us a lot of homework yesterday .",
    "I am looking forward to hearing from you soon .",
    "There are many interesting places to visit in my city .",
    "He was watching television when the phone rang .",
    "Last year my family moved to a bigger house near the river .",
    "I think that learning English is very important for my future .",
    "On Saturdays I usually play football with my brother .",
    "The restaurant was expensive but the food was delicious .",
    "She has lived in this town since she was a child .",
    "We visited the museum and saw some beautiful paintings .",
    "My favourite hobby is reading books about history .",
    "In the evening , I often listen to music and relax .",
    "Our class went on a trip to the mountains in April .",
    "The weather was cold , so we stayed at home .",
    "I would like to work in a big company after university .",
    "My parents always tell me to study harder .",
    "Yesterday I met an old friend at the station .",
    "The new shopping centre opened two months ago .",
    "He wants to become a doctor because he likes helping people .",
    "We watched a funny film at the cinema on Friday .",
    "Every summer my grandmother makes cakes for the whole family .",
    "I can swim , but my brother cannot .",
    "The children were playing in the park after lunch .",
    "It is difficult to find a cheap flat in the centre .",
    "She sent me a long letter about her holiday in Spain .",
    "Many students prefer to study in the library .",
    "I hope you will come to my party next month .",
]

SPELL_SKIP = {"the", "and", "with", "about", "after"}
TENSE_PAIRS = {
    "was": "is", "went": "go", "bought": "buy", "gave": "give", "moved": "move",
    "visited": "visit", "met": "meet", "watched": "watch", "sent": "send", "opened": "open",
    "were": "are", "saw": "see", "stayed": "stay", "rang": "ring",
}
SVA_PAIRS = {"goes": "go", "likes": "like", "makes": "make", "wants": "want", "has": "have"}
PREP_PAIRS = {"to": "for", "in": "at", "at": "in", "on": "in", "by": "with", "about": "of", "for": "to"}
NUM_PAIRS = {
    "friends": "friend", "places": "place", "paintings": "painting", "books": "book",
    "students": "student", "cakes": "cake", "children": "childs", "months": "month",
}
DETERMINERS = {"the", "a", "an"}

# error kind -> (M2 type, CLC code)
KINDS = {
    "spell": ("R:SPELL", "S"),
    "tense": ("R:VERB:TENSE", "TV"),
    "sva": ("R:VERB:SVA", "AGV"),
    "prep": ("R:PREP", "RT"),
    "num": ("R:NOUN:NUM", "FN"),
    "missing_det": ("M:DET", "MD"),
    "extra_det": ("U:DET", "UD"),
    "missing_punct": ("M:PUNCT", "MP"),
}


@dataclass
class SyntheticEssay:
    essay_id: str
    source: tuple[str, ...]
    corrected: tuple[str, ...]
    edits: list[Edit]
    clc_codes: list[str]

    @property
    def record(self) -> M2Record:
        return M2Record(self.source, list(self.edits), self.essay_id)


def _misspell(word: str, rng: random.Random) -> str:
    k = rng.randrange(1, len(word) - 1)
    return word[:k] + word[k + 1 :]


def _candidates(tokens: list[str], i: int) -> list[str]:
    tok = tokens[i]
    low = tok.lower()
    kinds = []
    if tok.isalpha() and len(tok) >= 5 and low not in SPELL_SKIP:
        kinds.append("spell")
    if low in TENSE_PAIRS:
        kinds.append("tense")
    if low in SVA_PAIRS:
        kinds.append("sva")
    if low in PREP_PAIRS:
        kinds.append("prep")
    if low in NUM_PAIRS:
        kinds.append("num")
    if low in DETERMINERS:
        kinds.append("missing_det")
    if tok == ",":
        kinds.append("missing_punct")
    if (
        tok.isalpha()
        and low not in DETERMINERS
        and i > 0
        and tokens[i - 1].lower() not in DETERMINERS
        and tokens[i - 1] not in (".", ",")
    ):
        kinds.append("extra_det")
    return kinds


def make_essay(essay_id: str, rng: random.Random, n_errors: int, n_sentences: int = 6) -> SyntheticEssay:
    """Build one essay with exactly ``n_errors`` annotated errors."""
    while True:
        sents = rng.sample(SENTENCES, n_sentences)
        corrected = [t for s in sents for t in tokenize(s)]
        by_kind: dict[str, list[int]] = {}
        for i in range(1, len(corrected)):
            for kind in _candidates(corrected, i):
                by_kind.setdefault(kind, []).append(i)
        used: set[int] = set()
        picked: list[tuple[int, str]] = []
        # Draw the kind first so that widely applicable kinds do not crowd out the rest.
        while by_kind and len(picked) < n_errors:
            kind = rng.choice(sorted(by_kind))
            slots = by_kind[kind]
            i = slots.pop(rng.randrange(len(slots)))
            if not slots:
                del by_kind[kind]
            if any(abs(i - j) < 3 for j in used):
                continue
            used.add(i)
            picked.append((i, kind))
        if len(picked) == n_errors:
            break
    picked.sort()
    return _inject(essay_id, corrected, picked, rng)


def _inject(essay_id: str, corrected: list[str], picked: list[tuple[int, str]], rng: random.Random) -> SyntheticEssay:
    at = dict(picked)
    source: list[str] = []
    edits: list[Edit] = []
    codes: list[str] = []
    for i, tok in enumerate(corrected):
        kind = at.get(i)
        if kind is None:
            source.append(tok)
            continue
        etype, code = KINDS[kind]
        pos = len(source)
        low = tok.lower()
        if kind in ("missing_det", "missing_punct"):
            edits.append(Edit(pos, pos, (tok,), etype))
        elif kind == "extra_det":
            source.extend(["the", tok])
            edits.append(Edit(pos, pos + 1, (), etype))
        else:
            if kind == "spell":
                wrong = _misspell(tok, rng)
            else:
                table = {"tense": TENSE_PAIRS, "sva": SVA_PAIRS, "prep": PREP_PAIRS, "num": NUM_PAIRS}[kind]
                wrong = table[low]
                if tok[0].isupper():
                    wrong = wrong.capitalize()
            source.append(wrong)
            edits.append(Edit(pos, pos + 1, (tok,), etype))
        codes.append(code)
    return SyntheticEssay(essay_id, tuple(source), tuple(corrected), edits, codes)


def clc_markup(essay: SyntheticEssay) -> str:
    """Render the learner text with ``<NS type="X">wrong|correct</NS>`` spans."""
    starts = {e.start: (e, c) for e, c in zip(essay.edits, essay.clc_codes)}
    pieces: list[str] = []
    i = 0
    n = len(essay.source)
    while i <= n:
        if i in starts:
            e, code = starts.pop(i)
            wrong = detokenize(essay.source[e.start : e.end])
            pieces.append(f'<NS type="{code}">{wrong}|{detokenize(e.replacement)}</NS>')
            if e.end > e.start:
                i = e.end
                continue
        if i < n:
            pieces.append(essay.source[i])
        i += 1
    return detokenize(pieces)


# Edit counts for which every default and extended rate yields a distinct
# number of corrected edits, so no two versions of a lineup coincide.
N_ERRORS = (8, 10, 11, 12)

LEVELS = ["A1", "A2", "B1", "B2", "C1", "C2"]
L1S = ["Italian", "Spanish", "Japanese", "German", "Portuguese", "Polish", "Turkish", "Korean"]


def fixture_manifest(n_essays: int = 20, seed: int = 2024) -> list[dict]:
    """Manifest entries cycling through the three annotation formats (m2, clc, text pair)."""
    rng = random.Random(seed)
    out = []
    for k in range(n_essays):
        essay = make_essay(f"synth-{k:03d}", rng, n_errors=rng.choice(N_ERRORS))
        obj: dict = {"essay_id": essay.essay_id, "text": detokenize(essay.source)}
        fmt = ("m2", "clc", "pair")[k % 3]
        if fmt == "m2":
            obj["m2"] = serialize_m2(essay.record, STANDARD_WITH_SOURCE)
        elif fmt == "clc":
            obj["clc"] = clc_markup(essay)
        else:
            obj["corrected_text"] = detokenize(essay.corrected)
        obj["cefr_level"] = LEVELS[k % len(LEVELS)]
        obj["l1"] = rng.choice(L1S)
        out.append(obj)
    return out
