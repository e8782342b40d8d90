"""Command-line front end.

Settings come from ``--config`` (JSON) and flags; flags win. Exit codes:
0 success, 1 pipeline error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from gramlineup.corpus import CorpusError, M2Format, dump_m2, load_corpus, parse_m2
from gramlineup.lineup import DEFAULT_RATES, parse_percent_list, rate_label
from gramlineup.llm import EndpointConfig, Gateway, GatewayError, ResponseCache
from gramlineup.pipeline import (
    FeedbackResponse,
    GecKind,
    GecSource,
    MissingHypothesis,
    RunSpec,
    accuracy,
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
from gramlineup.report import TableKind, TableSpec, emit_csv, render_csv, scores_csv, write_report_artifacts, write_run

log = logging.getLogger("gramlineup")


class ConfigError(Exception):
    """Invalid settings; reported as a single line with exit code 2."""


@dataclass
class RunConfig:
    corpus: str | None = None
    rates: list[Fraction] = field(default_factory=lambda: list(DEFAULT_RATES))
    seed: int = 0
    endpoint: str | None = None
    gec: str = "manual"
    generator: str = "mock:oracle"
    judge: str = "mock:oracle"
    method: str = "feedback"
    m2_format: str = "nolex"
    cache: str | None = None
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    offline: bool = False
    hyp_dir: str | None = None
    max_in_flight: int = 8

    def manifest(self) -> dict[str, Any]:
        d = asdict(self)
        d["rates"] = [rate_label(r) for r in self.rates]
        d["corpus"] = str(Path(self.corpus).resolve()) if self.corpus else None
        d.pop("max_in_flight")
        return d

    def validate(self) -> None:
        if self.method not in ("essay", "feedback"):
            raise ConfigError(f"--method must be essay or feedback, got {self.method!r}")
        try:
            M2Format.parse(self.m2_format)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            GecSource.parse(self.gec)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.workers < 1 or self.max_in_flight < 1:
            raise ConfigError("--workers and max_in_flight must be positive")
        if 0 not in self.rates or 1 not in self.rates or len(set(self.rates)) != len(self.rates):
            raise ConfigError("--rates must be distinct and include 0 and 100")


# Flag name -> how to coerce a JSON config value.
_COERCE = {
    "rates": lambda v: parse_percent_list(v if isinstance(v, str) else ",".join(str(x) for x in v)),
    "seed": int,
    "workers": int,
    "max_in_flight": int,
    "offline": bool,
}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    data: dict[str, Any] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: expected a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
    known = RunConfig.__dataclass_fields__
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig()
    try:
        for key, value in data.items():
            setattr(cfg, key, _COERCE.get(key, lambda v: v)(value))
        for key in known:
            value = getattr(args, key, None)
            if value is not None:
                setattr(cfg, key, _COERCE["rates"](value) if key == "rates" else value)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if getattr(args, "no_gec", False):
        cfg.gec = "none"
    cfg.validate()
    return cfg


def _essays(cfg: RunConfig):
    if not cfg.corpus:
        raise ConfigError("--corpus is required")
    if not Path(cfg.corpus).exists():
        raise ConfigError(f"corpus not found: {cfg.corpus}")
    return load_corpus(cfg.corpus)


def _gateway(cfg: RunConfig) -> Gateway:
    endpoint = EndpointConfig.load(cfg.endpoint) if cfg.endpoint else None
    return Gateway(ResponseCache(cfg.cache), endpoint, max_in_flight=cfg.max_in_flight, offline=cfg.offline)


def _report_degenerate(lineups) -> None:
    for lu in lineups:
        if lu.degenerate:
            print(f"degenerate essay {lu.essay_id}: no edits, all versions identical", file=sys.stderr)


def _hypotheses(cfg: RunConfig, essays, lineups, system: str):
    if not cfg.hyp_dir:
        raise ConfigError("--hyp-dir is required for hypothesis-file GEC")
    labels = lineups[0].labels if lineups else []
    return load_hypotheses(cfg.hyp_dir, system, [e.essay_id for e in essays], labels)


# -- subcommands -----------------------------------------------------------


def cmd_build_lineup(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    essays = _essays(cfg)
    lineups = lineups_for(essays, cfg.rates, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for lu in lineups:
        (out / f"{lu.essay_id}.json").write_text(lu.dumps(), encoding="utf-8")
    _report_degenerate(lineups)
    print(f"wrote {len(lineups)} lineups with {len(cfg.rates)} versions to {out}")
    return 0


def cmd_redact_m2(args: argparse.Namespace) -> int:
    try:
        fmt = M2Format.parse(args.m2_format or "standard")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    fmt = M2Format(fmt.variant, include_source=args.keep_source)
    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"M2 file not found: {path}")
    records = parse_m2(path.read_text(encoding="utf-8"))
    text = dump_m2(records, fmt)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_score_gec(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    essays = _essays(cfg)
    lineups = lineups_for(essays, cfg.rates, cfg.seed)
    if not cfg.hyp_dir:
        raise ConfigError("--hyp-dir is required")
    root = Path(cfg.hyp_dir)
    systems = args.systems.split(",") if args.systems else sorted(p.name for p in root.iterdir() if p.is_dir())
    labels = lineups[0].labels if lineups else []
    ids = [e.essay_id for e in essays]
    hyps = {s: load_hypotheses(root, s, ids, labels) for s in systems}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grids = [gec_grid(lineups, "manual", None)] if args.manual else []
    grids += [gec_grid(lineups, s, hyps[s]) for s in systems]
    for g in grids:
        spec = TableSpec(TableKind.GEC_F05_GRID, g)
        emit_csv(spec, out / f"f05_{g.system}.csv")
        print(f"# {g.system} F0.5")
        sys.stdout.write(render_csv(spec).replace("\r\n", "\n"))
    # GLEU rows cover the versions every system has hypotheses for.
    gl_labels = [lb for lb in labels if lb != "100" and all(all((i, lb) in h for i in ids) for h in hyps.values())]
    tab = gleu_table(lineups, hyps, gl_labels)
    emit_csv(TableSpec(TableKind.GLEU_TABLE, tab), out / "gleu.csv")
    (out / "scores.csv").write_text(scores_csv(grids, tab), encoding="utf-8", newline="")
    print("# GLEU")
    sys.stdout.write(render_csv(TableSpec(TableKind.GLEU_TABLE, tab)).replace("\r\n", "\n"))
    return 0


def cmd_generate_feedback(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    essays = _essays(cfg)
    lineups = lineups_for(essays, cfg.rates, cfg.seed)
    _report_degenerate(lineups)
    gateway = _gateway(cfg)
    source = GecSource.parse(cfg.gec)
    hyps = _hypotheses(cfg, essays, lineups, source.name) if source.kind is GecKind.HYP_FILE else None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with out.open("w", encoding="utf-8") as fh:
        for lu in lineups:
            corrected = run_gec(lu.versions, source, gateway=gateway, hypotheses=hyps)
            for fb in generate_feedback(lu, corrected, cfg.generator, source, gateway):
                fh.write(json.dumps(fb.to_json(), sort_keys=True) + "\n")
                n += 1
    print(f"wrote {n} feedback responses to {out}")
    return 0


def _read_feedback(path: str) -> list[FeedbackResponse]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"feedback file not found: {p}")
    return [FeedbackResponse.from_json(json.loads(line)) for line in p.read_text(encoding="utf-8").splitlines() if line]


def cmd_discriminate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    essays = _essays(cfg)
    lineups = lineups_for(essays, cfg.rates, cfg.seed)
    _report_degenerate(lineups)
    feedbacks = _read_feedback(args.feedback)
    gateway = _gateway(cfg)
    fmt = M2Format.parse(cfg.m2_format)
    matrices = []
    for lu in lineups:
        fbs = [f for f in feedbacks if f.essay_id == lu.essay_id]
        if cfg.method == "essay":
            matrices.append(discriminate_essay_type(lu, fbs, cfg.judge, gateway))
        else:
            matrices.append(discriminate_feedback_based(lu, fbs, fmt, cfg.judge, gateway))
    report = accuracy(matrices)
    manifest = {**cfg.manifest(), "feedback": str(Path(args.feedback).resolve())}
    out = write_run(args.out, manifest, report, matrices)
    print(f"accuracy {100 * report.accuracy:.2f} over {report.n_essays} essays -> {out}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    essays = _essays(cfg)
    gateway = _gateway(cfg)
    source = GecSource.parse(cfg.gec)
    spec = RunSpec(
        rates=cfg.rates,
        seed=cfg.seed,
        gec_source=source,
        generator=cfg.generator,
        judge=cfg.judge,
        method=cfg.method,
        m2_format=M2Format.parse(cfg.m2_format),
        workers=cfg.workers,
    )
    hyps = None
    if source.kind is GecKind.HYP_FILE:
        hyps = _hypotheses(cfg, essays, lineups_for(essays, cfg.rates, cfg.seed), source.name)
    result = run_pipeline(essays, spec, gateway, hyps)
    _report_degenerate([e.lineup for e in result.essays])
    out = write_run(args.out, cfg.manifest(), result.report, result.matrices)
    rep = result.report
    print(f"accuracy {100 * rep.accuracy:.2f} over {rep.n_essays} essays ({gateway.calls} backend calls) -> {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from gramlineup.pipeline import EvalReport

    run_dir = Path(args.run_dir)
    path = run_dir / "report.json"
    if not path.exists():
        raise ConfigError(f"report not found: {path}")
    report = EvalReport.from_json(json.loads(path.read_text(encoding="utf-8")))
    write_report_artifacts(run_dir, report)
    print(f"accuracy {100 * report.accuracy:.2f}; tables written to {run_dir}")
    return 0


# -- parser ----------------------------------------------------------------


def _common(p: argparse.ArgumentParser, models: bool = False) -> None:
    p.add_argument("--config", help="JSON file with default settings (flags win)")
    p.add_argument("--corpus", help="corpus manifest (JSON lines)")
    p.add_argument("--rates", help="correction rates in percent, e.g. 0,25,50,75,100")
    p.add_argument("--seed", type=int)
    if models:
        p.add_argument("--gec", help="manual, none, hyp:<system> or llm:<model>")
        p.add_argument("--no-gec", action="store_true", help="generate feedback from the essay alone")
        p.add_argument("--generator", help="feedback model (mock:<name> or an endpoint model id)")
        p.add_argument("--judge", help="discrimination model")
        p.add_argument("--method", choices=["essay", "feedback"])
        p.add_argument("--m2-format", dest="m2_format", choices=["standard", "replaced", "nolex"])
        p.add_argument("--cache", help="response cache (JSON lines)")
        p.add_argument("--endpoint", help="JSON endpoint config: base_url, api_key, supports_logprobs")
        p.add_argument("--offline", action="store_true", default=None, help="fail on cache misses")
        p.add_argument("--workers", type=int)
        p.add_argument("--hyp-dir", dest="hyp_dir", help="hypothesis files: <dir>/<system>/<rate>.txt")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramlineup", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-lineup", help="write one lineup JSON per essay")
    _common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_lineup)

    p = sub.add_parser("redact-m2", help="rewrite an M2 file in another format")
    p.add_argument("input")
    p.add_argument("--m2-format", dest="m2_format", choices=["standard", "replaced", "nolex"])
    p.add_argument("--keep-source", action="store_true", help="keep the S line")
    p.add_argument("--out")
    p.set_defaults(func=cmd_redact_m2)

    p = sub.add_parser("score-gec", help="F0.5 grids and GLEU table for hypothesis files")
    _common(p)
    p.add_argument("--hyp-dir", dest="hyp_dir")
    p.add_argument("--systems", help="comma-separated systems (default: every subdirectory)")
    p.add_argument("--manual", action="store_true", help="also score the manual corrections")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score_gec)

    p = sub.add_parser("generate-feedback", help="write feedback responses as JSON lines")
    _common(p, models=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_feedback)

    p = sub.add_parser("discriminate", help="probe a judge with saved feedback")
    _common(p, models=True)
    p.add_argument("--feedback", required=True)
    p.add_argument("--out", default="reports")
    p.set_defaults(func=cmd_discriminate)

    p = sub.add_parser("run", help="GEC, feedback generation and discrimination end to end")
    _common(p, models=True)
    p.add_argument("--out", default="reports")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-render tables and charts from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gramlineup: {exc}", file=sys.stderr)
        return 2
    except (GatewayError, MissingHypothesis, CorpusError, ValueError, OSError) as exc:
        print(f"gramlineup: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
