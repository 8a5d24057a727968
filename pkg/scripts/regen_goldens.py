#!/usr/bin/env python3
"""Regenerate golden snapshot files under tests/golden/.

Run from the repository root after a deliberate change to prompt templates
or table rendering, then review the diff:

    python3 scripts/regen_goldens.py
"""

from __future__ import annotations

import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from rdrag.cases import load_taxonomy  # noqa: E402
from rdrag.prompts import PromptKind, render_prompt  # noqa: E402
from rdrag.report import (  # noqa: E402
    load_published_results,
    render_category_table,
    render_method_table,
    render_scorer_table,
)

GOLDEN = REPO / "tests" / "golden"

# Fixed snapshot inputs. Changing these invalidates the prompt goldens.
SNAPSHOT_CATEGORIES = load_taxonomy(REPO / "fixtures" / "taxonomy_11.txt")
SNAPSHOT_SNIPPETS = (
    "配电箱箱门敞开且未上锁，周边无警示标识。",
    "作业人员在临边作业时安全带挂点低于腰部，未高挂低用。",
)

PROMPT_CASES = {
    "type1": (PromptKind("Type1", "none"), ()),
    "type2": (PromptKind("Type2", "none"), ()),
    "type3": (PromptKind("Type3", "none"), ()),
    "type4": (PromptKind("Type4", "none"), ()),
    "type4_cot": (PromptKind("Type4", "cot"), ()),
    "type4_rdrag": (PromptKind("Type4", "rdrag"), SNAPSHOT_SNIPPETS),
}


def write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path.relative_to(REPO)}")


def main() -> None:
    for name, (kind, snippets) in PROMPT_CASES.items():
        prompt = render_prompt(
            kind,
            image_ref="images/sample.png",
            categories=SNAPSHOT_CATEGORIES if kind.wants_categories else (),
            snippets=snippets,
        )
        write(GOLDEN / "prompts" / f"{name}.txt", prompt.instruction_text + "\n")

    published = load_published_results(REPO / "fixtures" / "published_results.json")
    write(GOLDEN / "tables" / "method_table.txt", render_method_table(published["method_comparison"]))
    write(GOLDEN / "tables" / "scorer_table.txt", render_scorer_table(published["scorer_comparison"]))
    write(GOLDEN / "tables" / "category_table.txt", render_category_table(published["per_category"]))


if __name__ == "__main__":
    main()
