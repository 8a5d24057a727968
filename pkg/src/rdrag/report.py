"""Result tables and report serialization.

Tables are plain text with columns padded by display width, counting East
Asian wide and fullwidth characters as two cells so CJK headers line up in
a terminal. Scores arrive as raw fractions and are printed as percentages
with two decimals; missing cells print as n/a.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError

COLUMN_GAP = "  "

METHOD_ORDER = ("Base", "COT", "RDRAG")
SCORER_ORDER = ("RDRAG", "LPIPS", "Base")


def display_width(text: str) -> int:
    """Terminal cell count; wide and fullwidth characters take two cells."""
    return sum(2 if unicodedata.east_asian_width(ch) in ("W", "F") else 1 for ch in text)


def pad_cell(text: str, width: int, align: str = "left") -> str:
    fill = width - display_width(text)
    if fill <= 0:
        return text
    if align == "right":
        return " " * fill + text
    return text + " " * fill


def render_table(headers: list[str], rows: list[list[str]], aligns: list[str] | None = None) -> str:
    """Render a monospace table with a dashed rule under the header."""
    if aligns is None:
        aligns = ["left"] * len(headers)
    for row in rows:
        if len(row) != len(headers):
            raise DataError(f"row has {len(row)} cells, expected {len(headers)}")
    widths = [display_width(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], display_width(cell))
    lines = [
        COLUMN_GAP.join(pad_cell(h, widths[i]) for i, h in enumerate(headers)).rstrip(),
        COLUMN_GAP.join("-" * w for w in widths),
    ]
    for row in rows:
        line = COLUMN_GAP.join(pad_cell(c, widths[i], aligns[i]) for i, c in enumerate(row))
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def format_score(value: float | None) -> str:
    """Raw fraction to percent with two decimals; None renders as n/a."""
    if value is None:
        return "n/a"
    return f"{value * 100:.2f}"


@dataclass(frozen=True)
class MethodModelRow:
    """One (prompting method, model) result triple for the main comparison."""

    method: str
    model: str
    accuracy: float | None
    bert: float | None
    tfidf: float | None


@dataclass(frozen=True)
class ScorerRow:
    """One (model, retrieval scorer) result triple for the ablation table."""

    model: str
    scorer: str
    accuracy: float | None
    bert: float | None
    tfidf: float | None


@dataclass(frozen=True)
class CategoryRow:
    """Per-category sample count with Base and RDRAG accuracy."""

    category: str
    count: int
    base_accuracy: float | None
    rdrag_accuracy: float | None


def _order_key(value: str, order: tuple[str, ...]) -> int:
    return order.index(value) if value in order else len(order)


def _appearance(values: list[str]) -> dict[str, int]:
    seen: dict[str, int] = {}
    for v in values:
        seen.setdefault(v, len(seen))
    return seen


def render_method_table(rows: list[MethodModelRow]) -> str:
    """Prompting-method comparison, grouped by method.

    Models keep their first-appearance order within each group so callers
    control row order (the shipped reference tables list GLM-4V first).
    """
    models = _appearance([r.model for r in rows])
    ordered = sorted(rows, key=lambda r: (_order_key(r.method, METHOD_ORDER), models[r.model]))
    headers = ["方法", "模型", "类别准确率(%)", "BERT相似度(%)", "TF-IDF相似度(%)"]
    body = [
        [r.method, r.model, format_score(r.accuracy), format_score(r.bert), format_score(r.tfidf)]
        for r in ordered
    ]
    return render_table(headers, body, ["left", "left", "right", "right", "right"])


def render_scorer_table(rows: list[ScorerRow]) -> str:
    """Retrieval-scorer ablation, grouped by model in first-appearance order."""
    models = _appearance([r.model for r in rows])
    ordered = sorted(rows, key=lambda r: (models[r.model], _order_key(r.scorer, SCORER_ORDER)))
    headers = ["模型", "检索方式", "类别准确率(%)", "BERT相似度(%)", "TF-IDF相似度(%)"]
    body = [
        [r.model, r.scorer, format_score(r.accuracy), format_score(r.bert), format_score(r.tfidf)]
        for r in ordered
    ]
    return render_table(headers, body, ["left", "left", "right", "right", "right"])


def render_category_table(rows: list[CategoryRow]) -> str:
    """Per-category accuracy for Base vs retrieval-augmented prompting."""
    headers = ["序号", "隐患类别", "数量", "Base准确率(%)", "RDRAG准确率(%)"]
    body = [
        [
            str(i + 1),
            r.category,
            str(r.count),
            format_score(r.base_accuracy),
            format_score(r.rdrag_accuracy),
        ]
        for i, r in enumerate(rows)
    ]
    return render_table(headers, body, ["right", "left", "right", "right", "right"])


def canonical_json(obj: object) -> str:
    """Stable serialization for reports: sorted keys, readable CJK, newline."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def without_timing(report: dict) -> dict:
    """Report copy minus the wall-clock block, for determinism comparison."""
    return {k: v for k, v in report.items() if k != "timing"}


def load_published_results(path: str | Path) -> dict:
    """Load the transcribed reference results shipped with the package.

    The JSON stores percentages as published; this loader converts score
    columns back to raw fractions so they feed the same renderers as live
    runs. Sample counts stay as integers.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read published results {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"published results {path} is not valid JSON: {exc}") from exc

    def fraction(value: float | None) -> float | None:
        return None if value is None else value / 100.0

    method_rows = [
        MethodModelRow(
            method=e["method"],
            model=e["model"],
            accuracy=fraction(e["accuracy"]),
            bert=fraction(e["bert"]),
            tfidf=fraction(e["tfidf"]),
        )
        for e in data["method_comparison"]
    ]
    scorer_rows = [
        ScorerRow(
            model=e["model"],
            scorer=e["scorer"],
            accuracy=fraction(e["accuracy"]),
            bert=fraction(e["bert"]),
            tfidf=fraction(e["tfidf"]),
        )
        for e in data["scorer_comparison"]
    ]
    category_rows = [
        CategoryRow(
            category=e["category"],
            count=e["count"],
            base_accuracy=fraction(e["base_accuracy"]),
            rdrag_accuracy=fraction(e["rdrag_accuracy"]),
        )
        for e in data["per_category"]
    ]
    return {
        "method_comparison": method_rows,
        "scorer_comparison": scorer_rows,
        "per_category": category_rows,
        "metadata": data.get("metadata", {}),
    }
