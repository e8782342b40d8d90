from __future__ import annotations

import json
import random
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gramlineup.corpus import M2Format, M2Variant, detokenize, tokenize
from gramlineup.lineup import DEFAULT_RATES, EXTENDED_RATES, apply_all, build_lineup
from gramlineup.llm import Backend, ChatRequest, Completion, Gateway, ResponseCache
from gramlineup.llm.backends import OracleBackend
from gramlineup.llm.prompts import PromptKind, parse_prompt
from gramlineup.pipeline import (
    LOWER_BOUND,
    EvalReport,
    FeedbackResponse,
    GecKind,
    GecSource,
    MissingHypothesis,
    ProbMatrix,
    RunSpec,
    accuracy,
    argmax_first,
    discriminate_essay_type,
    discriminate_feedback_based,
    gec_grid,
    generate_feedback,
    gleu_table,
    lineups_for,
    load_hypotheses,
    run_gec,
    run_pipeline,
)

from conftest import GOLDEN


class Recorder(Backend):
    """Oracle behaviour, plus a log of every prompt it was sent."""

    supports_logprobs = True

    def __init__(self):
        self.inner = OracleBackend()
        self.prompts: list[str] = []
        self.lock = threading.Lock()

    def generate(self, req: ChatRequest) -> Completion:
        with self.lock:
            self.prompts.append(req.prompt)
        return self.inner.generate(req)


@pytest.fixture
def recorder():
    return Recorder()


def gateway_with(rec, cache=None):
    return Gateway(cache, backends={"mock:rec": rec})


# -- GEC ------------------------------------------------------------------


def test_gec_source_parse():
    assert GecSource.parse("manual").kind is GecKind.MANUAL
    assert GecSource.parse("hyp:gector") == GecSource(GecKind.HYP_FILE, "gector")
    assert str(GecSource.parse("llm:gpt-4o")) == "llm:gpt-4o"
    for bad in ("hyp", "llm:", "magic"):
        with pytest.raises(ValueError):
            GecSource.parse(bad)


def test_manual_gec(mike):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    out = run_gec(lu.versions, GecSource(GecKind.MANUAL))
    corrected = tokenize((GOLDEN / "essays" / "mike_corrected.txt").read_text(encoding="utf-8"))
    assert out[lu.versions[0].rate] == corrected
    assert out[lu.versions[-1].rate] == lu.versions[-1].text
    assert run_gec(lu.versions, GecSource(GecKind.NONE)) == {}


def test_llm_gec_uses_whole_essay_prompt(mike, recorder):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    out = run_gec(lu.versions, GecSource(GecKind.LLM, "mock:rec"), gateway=gateway_with(recorder))
    # 50% and 75% coincide for this essay, so the cache answers one of them
    assert len(recorder.prompts) == len({v.text for v in lu.versions}) == 4
    assert all(parse_prompt(p)[0] is PromptKind.GEC for p in recorder.prompts)
    assert out[lu.versions[0].rate] == mike.source  # the oracle mock echoes


def test_hypothesis_files(tmp_path, mike):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    d = tmp_path / "sys"
    d.mkdir()
    for v in lu.versions[:4]:
        (d / f"{v.label}.txt").write_text(" ".join(v.text) + "\n")
    hyps = load_hypotheses(tmp_path, "sys", [mike.essay_id], lu.labels)
    assert len(hyps) == 4
    with pytest.raises(MissingHypothesis):
        run_gec(lu.versions, GecSource(GecKind.HYP_FILE, "sys"), hypotheses=hyps)
    (d / "0.txt").write_text("a\nb\n")
    with pytest.raises(MissingHypothesis):
        load_hypotheses(tmp_path, "sys", [mike.essay_id], lu.labels)


# -- feedback ---------------------------------------------------------------


def test_feedback_prompt_variants(fixture_essays, recorder):
    lu = build_lineup(fixture_essays[0].record, DEFAULT_RATES, 1)
    g = gateway_with(recorder)
    corrected = run_gec(lu.versions, GecSource(GecKind.MANUAL))
    fbs = generate_feedback(lu, corrected, "mock:rec", GecSource(GecKind.MANUAL), g)
    assert len(fbs) == 5
    kinds = [parse_prompt(p)[0] for p in recorder.prompts]
    assert kinds == [PromptKind.GEF_WITH_GEC] * 4 + [PromptKind.GEF_WITH_GEC_100]
    recorder.prompts.clear()
    generate_feedback(lu, {}, "mock:rec", GecSource(GecKind.NONE), g)
    assert all("Corrected:" not in p for p in recorder.prompts)
    assert all(parse_prompt(p)[0] is PromptKind.GEF_NO_GEC for p in recorder.prompts)


def test_feedback_requires_corrections(mike):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    with pytest.raises(MissingHypothesis):
        generate_feedback(lu, {}, "mock:oracle", GecSource(GecKind.MANUAL), Gateway())


def test_feedback_response_validation_and_json():
    with pytest.raises(ValueError):
        FeedbackResponse("e", DEFAULT_RATES[1], "m", "manual", "   ")
    fb = FeedbackResponse("e", DEFAULT_RATES[1], "m", "manual", "Dear learner")
    assert FeedbackResponse.from_json(json.loads(json.dumps(fb.to_json()))) == fb


# -- discrimination -----------------------------------------------------------


def _feedbacks(lu, g, gec=GecSource(GecKind.MANUAL)):
    return generate_feedback(lu, run_gec(lu.versions, gec), "mock:oracle", gec, g)


@pytest.mark.parametrize("rates,k", [(DEFAULT_RATES, 5), (EXTENDED_RATES, 9)])
def test_matrix_shapes_and_oracle_diagonal(fixture_essays, rates, k):
    lu = build_lineup(fixture_essays[0].record, rates, 3)
    g = Gateway()
    fbs = _feedbacks(lu, g)
    for m in (
        discriminate_essay_type(lu, fbs, "mock:oracle", g),
        discriminate_feedback_based(lu, fbs, M2Format(M2Variant.NO_LEXICAL), "mock:oracle", g),
    ):
        assert len(m.p) == k and all(len(r) == k for r in m.p)
        for i, row in enumerate(m.p):
            assert all(row[i] > v for j, v in enumerate(row) if j != i)


def test_feedback_based_prompt_content(mike, recorder):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    g = gateway_with(recorder)
    fbs = _feedbacks(lu, Gateway())
    discriminate_feedback_based(lu, fbs, M2Format(M2Variant.NO_LEXICAL), "mock:rec", g)
    first_row = [p for p in recorder.prompts if "A 15 16" in p]
    assert first_row and all("listen" not in p.split("file:")[1].split("in which")[0] for p in first_row)
    recorder.prompts.clear()
    discriminate_feedback_based(lu, fbs, M2Format(M2Variant.REPLACED_CORRECTED), "mock:rec", g)
    full = [p for p in recorder.prompts if "A 26 27" in p and "A 15 16" in p]
    assert all(w in full[0] for w in ("|||liste|||", "|||see|||", "|||is|||"))
    with pytest.raises(ValueError):
        discriminate_feedback_based(lu, fbs, M2Format(M2Variant.STANDARD, include_source=True), "mock:oracle", g)


def test_degenerate_rows_are_probed_and_flagged(mike):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    g = Gateway()
    m = discriminate_feedback_based(lu, _feedbacks(lu, g), M2Format(M2Variant.NO_LEXICAL), "mock:oracle", g)
    assert m.degenerate_rows == [4]
    assert len(m.p[4]) == 5
    rep = accuracy([m])
    assert rep.mean_yes["100"] is None
    assert sum(sum(r) for r in rep.confusion) == 5


def test_missing_feedback_rejected(mike):
    lu = build_lineup(mike, DEFAULT_RATES, 1)
    g = Gateway()
    fbs = _feedbacks(lu, g)[:-1]
    with pytest.raises(ValueError):
        discriminate_essay_type(lu, fbs, "mock:oracle", g)


# -- accuracy -------------------------------------------------------------------


def _matrix(p, eid="e", **kw):
    labels = [str(i) for i in range(len(p))]
    return ProbMatrix(eid, labels, labels, p, "essay", **kw)


def test_argmax_first():
    assert argmax_first([0.2, 0.5, 0.5]) == (1, True)
    assert argmax_first([0.9, 0.1]) == (0, False)


def test_identity_like_matrices():
    p = [[0.9 if i == j else 0.1 for j in range(5)] for i in range(5)]
    rep = accuracy([_matrix(p), _matrix(p, "f")])
    assert rep.accuracy == 1.0
    assert rep.confusion == [[2 if i == j else 0 for j in range(5)] for i in range(5)]


def test_two_of_five_rows_correct():
    p = [[0.9 if i == j else 0.1 for j in range(5)] for i in range(2)]
    p += [[0.9, 0.1, 0.1, 0.1, 0.1]] * 3
    assert accuracy([_matrix(p)]).accuracy == pytest.approx(0.4)


def test_ties_go_to_lowest_index():
    rep = accuracy([_matrix([[0.5] * 5 for _ in range(5)])])
    assert rep.accuracy == pytest.approx(0.2) and rep.n_ties == 5
    assert [row[0] for row in rep.confusion] == [1] * 5


def test_degenerate_essay_split():
    good = _matrix([[0.9 if i == j else 0.1 for j in range(3)] for i in range(3)])
    flat = _matrix([[0.5] * 3 for _ in range(3)], "d", degenerate_essay=True)
    rep = accuracy([good, flat])
    assert rep.accuracy_non_degenerate == 1.0
    assert rep.accuracy_degenerate == pytest.approx(1 / 3)
    assert rep.degenerate_essays == ["d"]


def test_label_mismatch_rejected():
    a = _matrix([[1.0]])
    b = ProbMatrix("x", ["9"], ["9"], [[1.0]], "essay")
    with pytest.raises(ValueError):
        accuracy([a, b])


def test_empty_accuracy():
    rep = accuracy([])
    assert rep.n_essays == 0 and rep.confusion == []


probs = st.floats(0, 1, allow_nan=False)
matrices = st.lists(st.lists(st.lists(probs, min_size=4, max_size=4), min_size=4, max_size=4), min_size=1, max_size=6)


@given(matrices, st.randoms(use_true_random=False))
def test_accuracy_permutation_invariant(ps, rnd):
    ms = [_matrix(p, f"e{i}") for i, p in enumerate(ps)]
    shuffled = list(ms)
    rnd.shuffle(shuffled)
    a, b = accuracy(ms), accuracy(shuffled)
    assert a.dumps() == b.dumps()
    total = sum(sum(r) for r in a.confusion)
    assert total == len(ms) * 4
    assert a.accuracy == sum(a.confusion[i][i] for i in range(4)) / total


def test_report_json_round_trip():
    p = [[0.9 if i == j else 0.1 for j in range(3)] for i in range(3)]
    rep = accuracy([_matrix(p)])
    assert EvalReport.from_json(json.loads(rep.dumps())).dumps() == rep.dumps()
    m = _matrix(p, degenerate_rows=[2])
    assert ProbMatrix.from_json(json.loads(json.dumps(m.to_json()))) == m


# -- orchestration -----------------------------------------------------------------


def test_one_cache_record_per_probe(fixture_essays, tmp_path):
    essays = fixture_essays[:3]
    path = tmp_path / "cache.jsonl"
    g = Gateway(ResponseCache(path))
    run_pipeline(essays, RunSpec(judge="mock:calibrated", generator="mock:oracle"), g)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    judge_records = [r for r in records if r["model_id"] == "mock:calibrated"]
    assert len(judge_records) == 3 * 5 * 5
    assert len(records) == 3 * 5 + 3 * 5 * 5


def test_pipeline_keeps_corpus_order_with_workers(fixture_essays):
    spec = RunSpec(workers=4, method="essay")
    r = run_pipeline(fixture_essays, spec, Gateway(max_in_flight=4))
    assert [e.lineup.essay_id for e in r.essays] == [e.essay_id for e in fixture_essays]
    assert r.report.dumps() == run_pipeline(fixture_essays, RunSpec(method="essay"), Gateway()).report.dumps()


def test_run_spec_validates_method():
    with pytest.raises(ValueError):
        RunSpec(method="joint")


# -- GEC scoring ----------------------------------------------------------------------


def test_manual_grid_diagonal_is_perfect(fixture_essays):
    lineups = lineups_for(fixture_essays, DEFAULT_RATES, 0)
    grid = gec_grid(lineups, "manual", None)
    assert grid.labels == ["0", "25", "50", "75"]
    for i in range(4):
        assert grid.cells[i][i].f_beta == 1.0
        for j in range(4):
            if i != j:
                assert grid.cells[i][j].f_beta < 1.0


def test_reference_hypotheses_equal_manual_grid(fixture_essays):
    lineups = lineups_for(fixture_essays, DEFAULT_RATES, 0)
    hyps = {(lu.essay_id, v.label): apply_all(v.text, v.residual.edits) for lu in lineups for v in lu.versions}
    a = gec_grid(lineups, "ref", hyps)
    b = gec_grid(lineups, "manual", None)
    assert [[c.f_beta for c in row] for row in a.cells] == [[c.f_beta for c in row] for row in b.cells]


def test_gec_grid_four_versions(fixture_essays):
    lineups = lineups_for(fixture_essays[:4], DEFAULT_RATES, 0)
    hyps = {(lu.essay_id, v.label): v.text for lu in lineups for v in lu.versions if v.label != "100"}
    grid = gec_grid(lineups, "lazy", hyps)
    assert len(grid.cells) == 4 and all(len(r) == 4 for r in grid.cells)
    # an unchanged hypothesis proposes nothing: precision 1, recall 0
    assert all(c.tp == 0 and c.fp == 0 for row in grid.cells for c in row)


def test_gleu_table_lower_bound(fixture_essays):
    lineups = lineups_for(fixture_essays, DEFAULT_RATES, 0)
    src = {(lu.essay_id, v.label): v.text for lu in lineups for v in lu.versions}
    ref = {(lu.essay_id, v.label): apply_all(v.text, v.residual.edits) for lu in lineups for v in lu.versions}
    tab = gleu_table(lineups, {"copy": src, "ref": ref})
    assert tab.columns == [LOWER_BOUND, "copy", "ref"]
    for row in tab.scores:
        assert row[0] == row[1] < row[2] == 1.0
    lower = [row[0] for row in tab.scores]
    assert lower == sorted(lower)  # fewer residual errors, closer to the reference
    with pytest.raises(MissingHypothesis):
        gleu_table(lineups, {"partial": {}})
