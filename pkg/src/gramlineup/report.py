"""CSV tables and SVG charts for evaluation runs.

Rates, probabilities and scores are written as percentages with two
decimals; confusion counts stay integers. Renderers never modify their input.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence
from xml.sax.saxutils import escape

from gramlineup.pipeline import EvalReport, GecGrid, GleuTable, ProbMatrix


class TableKind(enum.Enum):
    GEC_F05_GRID = "gec_f05_grid"
    GLEU_TABLE = "gleu_table"
    ACCURACY_TABLE = "accuracy_table"
    CONFUSION_MATRIX = "confusion_matrix"
    MEAN_YES_CURVES = "mean_yes_curves"


@dataclass(frozen=True)
class TableSpec:
    """``data`` is a :class:`GecGrid`, :class:`GleuTable`, a list of
    ``(name, EvalReport)`` pairs for accuracy tables, or an :class:`EvalReport`."""

    kind: TableKind
    data: Any
    title: str = ""


def pct(x: float | None) -> str:
    return "" if x is None else f"{100 * x:.2f}"


def _accuracy_rows(data: Any) -> list[tuple[str, EvalReport]]:
    if isinstance(data, EvalReport):
        return [(data.method or "run", data)]
    return list(data)


def table_rows(spec: TableSpec) -> list[list[str]]:
    """Header row followed by data rows, as strings."""
    k, d = spec.kind, spec.data
    if k is TableKind.GEC_F05_GRID:
        grid: GecGrid = d
        rows = [["HYP/REF", *grid.labels]]
        for label, cells in zip(grid.labels, grid.cells):
            rows.append([label, *(pct(c.f_beta) for c in cells)])
        return rows
    if k is TableKind.GLEU_TABLE:
        tab: GleuTable = d
        rows = [["version", *tab.columns]]
        for label, scores in zip(tab.labels, tab.scores):
            rows.append([label, *(pct(s) for s in scores)])
        return rows
    if k is TableKind.ACCURACY_TABLE:
        rows = [["configuration", "accuracy"]]
        rows += [[name, pct(rep.accuracy)] for name, rep in _accuracy_rows(d)]
        return rows
    rep: EvalReport = d
    if k is TableKind.CONFUSION_MATRIX:
        rows = [["query/predicted", *rep.labels]]
        rows += [[lb, *(str(c) for c in counts)] for lb, counts in zip(rep.labels, rep.confusion)]
        return rows
    if k is TableKind.MEAN_YES_CURVES:
        rows = [["feedback", *rep.labels]]
        for lb in rep.labels:
            curve = rep.mean_yes.get(lb)
            rows.append([lb, *(pct(v) for v in curve)] if curve else [lb, *([""] * len(rep.labels))])
        return rows
    raise ValueError(f"unsupported table kind {k}")


def render_csv(spec: TableSpec) -> str:
    rows = table_rows(spec)
    if _empty(spec):
        rows = rows[:1]
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerows(rows)
    return buf.getvalue()


def _empty(spec: TableSpec) -> bool:
    d = spec.data
    if spec.kind is TableKind.ACCURACY_TABLE:
        return all(rep.n_essays == 0 for _, rep in _accuracy_rows(d))
    if isinstance(d, EvalReport):
        return d.n_essays == 0
    return not d.labels


def emit_csv(spec: TableSpec, destination: str | Path) -> Path:
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(spec))
    return path


def scores_csv(grids: Sequence[GecGrid], gleu_tab: GleuTable | None = None) -> str:
    """Long form: one row per (system, hypothesis version, reference version)."""
    gleu_by = {}
    if gleu_tab is not None:
        for lb, row in zip(gleu_tab.labels, gleu_tab.scores):
            for col, s in zip(gleu_tab.columns, row):
                gleu_by[(col, lb)] = s
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["system", "hyp_version", "ref_version", "P", "R", "F0.5", "GLEU"])
    for g in grids:
        for hl, cells in zip(g.labels, g.cells):
            for rl, c in zip(g.labels, cells):
                gl = gleu_by.get((g.system, hl)) if hl == rl else None
                w.writerow([g.system, hl, rl, pct(c.precision), pct(c.recall), pct(c.f_beta), pct(gl)])
    return buf.getvalue()


# -- SVG -------------------------------------------------------------------

CELL = 48
MARGIN = 64
PLOT_W, PLOT_H = 360, 240
PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22"]


def _f(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _heat(frac: float) -> str:
    # White to dark blue.
    r = round(255 - frac * (255 - 8))
    g = round(255 - frac * (255 - 48))
    b = round(255 - frac * (255 - 107))
    return f"#{r:02x}{g:02x}{b:02x}"


def _svg(width: int, height: int, body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">'
    )
    lines = [head]
    if title:
        lines.append(f'<title>{escape(title)}</title>')
    lines += body
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_confusion_svg(rep: EvalReport, title: str = "") -> str:
    k = len(rep.labels)
    peak = max((c for row in rep.confusion for c in row), default=0)
    body = []
    for i, row in enumerate(rep.confusion):
        y = MARGIN + i * CELL
        body.append(f'<text x="{MARGIN - 8}" y="{y + CELL // 2 + 4}" text-anchor="end">{escape(rep.labels[i])}</text>')
        for j, count in enumerate(row):
            x = MARGIN + j * CELL
            frac = count / peak if peak else 0.0
            colour = "#ffffff" if frac > 0.5 else "#000000"
            body.append(
                f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{_heat(frac)}" stroke="#cccccc" '
                f'data-row="{i}" data-col="{j}" data-value="{count}"/>'
            )
            body.append(
                f'<text x="{x + CELL // 2}" y="{y + CELL // 2 + 4}" text-anchor="middle" fill="{colour}">{count}</text>'
            )
    for j, lb in enumerate(rep.labels):
        body.append(f'<text x="{MARGIN + j * CELL + CELL // 2}" y="{MARGIN - 8}" text-anchor="middle">{escape(lb)}</text>')
    side = 2 * MARGIN + k * CELL
    return _svg(side, side, body, title)


def render_mean_yes_svg(rep: EvalReport, title: str = "") -> str:
    k = len(rep.labels)
    width, height = PLOT_W + 2 * MARGIN, PLOT_H + 2 * MARGIN
    x0, y0 = MARGIN, MARGIN + PLOT_H

    def xy(j: int, p: float) -> tuple[str, str]:
        x = x0 + (PLOT_W * j / (k - 1) if k > 1 else PLOT_W / 2)
        return _f(x), _f(y0 - PLOT_H * p)

    body = [
        f'<line x1="{x0}" y1="{y0}" x2="{x0 + PLOT_W}" y2="{y0}" stroke="#000000"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN}" stroke="#000000"/>',
    ]
    for j, lb in enumerate(rep.labels):
        x, _ = xy(j, 0.0)
        body.append(f'<text x="{x}" y="{y0 + 16}" text-anchor="middle">{escape(lb)}</text>')
    for t in (0.0, 0.5, 1.0):
        _, y = xy(0, t)
        body.append(f'<text x="{x0 - 6}" y="{y}" text-anchor="end">{_f(t)}</text>')
    for i, lb in enumerate(rep.labels):
        curve = rep.mean_yes.get(lb)
        if not curve:
            continue
        colour = PALETTE[i % len(PALETTE)]
        pts = " ".join(",".join(xy(j, p)) for j, p in enumerate(curve))
        peak = max(range(len(curve)), key=lambda j: (curve[j], -j))
        px, py = xy(peak, curve[peak])
        body.append(
            f'<polyline points="{pts}" fill="none" stroke="{colour}" stroke-width="2" '
            f'data-row="{i}" data-label="{escape(lb)}" data-peak="{peak}"/>'
        )
        body.append(f'<circle cx="{px}" cy="{py}" r="4" fill="{colour}" data-row="{i}" data-peak="{peak}"/>')
    return _svg(width, height, body, title)


def render_svg(spec: TableSpec) -> str:
    if spec.kind is TableKind.CONFUSION_MATRIX:
        return render_confusion_svg(spec.data, spec.title)
    if spec.kind is TableKind.MEAN_YES_CURVES:
        return render_mean_yes_svg(spec.data, spec.title)
    raise ValueError(f"no SVG rendering for {spec.kind.value}")


def emit_svg(spec: TableSpec, destination: str | Path) -> Path:
    path = Path(destination)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(spec), encoding="utf-8")
    return path


# -- run directories -------------------------------------------------------

# Manifest keys that do not influence results and so stay out of the run id.
_VOLATILE = ("cache", "workers", "offline")


def run_id(manifest: dict) -> str:
    stable = {k: v for k, v in manifest.items() if k not in _VOLATILE}
    canon = json.dumps(stable, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def write_run(
    out_root: str | Path, manifest: dict, report: EvalReport, matrices: Sequence[ProbMatrix]
) -> Path:
    """Write ``<out_root>/<run-id>/`` with manifest, report, raw matrices, CSV tables and SVG charts."""
    out = Path(out_root) / run_id(manifest)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.json").write_text(report.dumps(), encoding="utf-8")
    with (out / "matrices.jsonl").open("w", encoding="utf-8") as fh:
        for m in matrices:
            fh.write(json.dumps(m.to_json(), sort_keys=True) + "\n")
    write_report_artifacts(out, report, manifest.get("method", ""))
    return out


def write_report_artifacts(out: str | Path, report: EvalReport, name: str = "") -> None:
    out = Path(out)
    emit_csv(TableSpec(TableKind.ACCURACY_TABLE, [(name or report.method or "run", report)]), out / "accuracy.csv")
    emit_csv(TableSpec(TableKind.CONFUSION_MATRIX, report), out / "confusion.csv")
    emit_csv(TableSpec(TableKind.MEAN_YES_CURVES, report), out / "mean_yes.csv")
    emit_svg(TableSpec(TableKind.CONFUSION_MATRIX, report, "Confusion matrix"), out / "confusion.svg")
    emit_svg(TableSpec(TableKind.MEAN_YES_CURVES, report, "Mean yes-probability"), out / "mean_yes.svg")
