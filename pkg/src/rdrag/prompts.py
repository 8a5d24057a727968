"""Prompt assembly for the four base designs and their augmentations.

A prompt is composed from newline-joined sections: the inspector role
sentence, an optional category enumeration (Type2/Type4), an optional
output-format block (Type3/Type4), an optional reasoning directive (cot),
and an optional numbered block of retrieved case descriptions (rdrag).
Section text lives in UTF-8 template files with `{categories}`,
`{category_count}`, `{format_block}` and `{snippets}` placeholders; the
defaults ship as package data. Rendering is a pure function of its inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, ValidationError

BASE_TYPES = ("Type1", "Type2", "Type3", "Type4")
AUGMENTATIONS = ("none", "cot", "rdrag")

FORMAT_BLOCK = "具体格式如下: 隐患类别: <隐患类别>; 隐患描述: <隐患描述>; 整改意见: <整改意见>"

_TEMPLATE_FILES = ("type1", "type2", "type3", "type4", "cot", "snippets")
_DEFAULT_DIR = Path(__file__).parent / "templates"


@dataclass(frozen=True)
class PromptKind:
    base_type: str = "Type4"
    augmentation: str = "none"

    def validate(self) -> None:
        if self.base_type not in BASE_TYPES:
            raise ValidationError(f"unknown base_type {self.base_type!r}; expected one of {BASE_TYPES}")
        if self.augmentation not in AUGMENTATIONS:
            raise ValidationError(
                f"unknown augmentation {self.augmentation!r}; expected one of {AUGMENTATIONS}"
            )

    @property
    def wants_categories(self) -> bool:
        return self.base_type in ("Type2", "Type4")

    @property
    def label(self) -> str:
        return {"none": "Base", "cot": "COT", "rdrag": "RDRAG"}[self.augmentation]


@dataclass(frozen=True)
class SnippetSource:
    """Provenance of one retrieved snippet (used by mock models and audits)."""

    case_id: str
    category: str


@dataclass(frozen=True)
class AssembledPrompt:
    instruction_text: str
    image_ref: str
    retrieved_snippets: tuple[str, ...]
    kind: PromptKind
    category_list: tuple[str, ...]
    snippet_sources: tuple[SnippetSource, ...] = ()


@dataclass(frozen=True)
class PromptTemplates:
    """The six section templates, normalized to '\\n' line endings."""

    type1: str
    type2: str
    type3: str
    type4: str
    cot: str
    snippets: str

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptTemplates":
        directory = Path(directory) if directory is not None else _DEFAULT_DIR
        texts = {}
        for name in _TEMPLATE_FILES:
            path = directory / f"{name}.txt"
            if not path.exists():
                raise ValidationError(f"template file not found: {path}")
            texts[name] = path.read_text(encoding="utf-8").replace("\r\n", "\n").rstrip("\n")
        return cls(**texts)

    def for_base(self, base_type: str) -> str:
        return {"Type1": self.type1, "Type2": self.type2, "Type3": self.type3, "Type4": self.type4}[
            base_type
        ]


def format_category_enumeration(categories: tuple[str, ...]) -> str:
    """Bracketed, quoted list joined with full-width commas."""
    return "[" + "，".join(f"'{c}'" for c in categories) + "]"


def render_prompt(
    kind: PromptKind,
    image_ref: str | Path,
    categories: tuple[str, ...] = (),
    snippets: tuple[str, ...] = (),
    snippet_sources: tuple[SnippetSource, ...] = (),
    templates: PromptTemplates | None = None,
) -> AssembledPrompt:
    """Render the instruction text for a prompt kind.

    Placeholders are substituted literally (no format-string parsing, so
    category text may contain braces). Snippets appear numbered, in the
    order given, which is the retrieval order.
    """
    kind.validate()
    templates = templates or PromptTemplates.load()
    if kind.wants_categories and not categories:
        raise ValidationError(f"{kind.base_type} requires a non-empty category list")
    if kind.augmentation == "rdrag" and not snippets:
        raise ValidationError("rdrag augmentation requires at least one retrieved snippet")
    if snippet_sources and len(snippet_sources) != len(snippets):
        raise ValidationError("snippet_sources must align one-to-one with snippets")

    text = templates.for_base(kind.base_type)
    text = text.replace("{category_count}", str(len(categories)))
    text = text.replace("{categories}", format_category_enumeration(categories))
    text = text.replace("{format_block}", FORMAT_BLOCK)
    if kind.augmentation == "cot":
        text = text + "\n" + templates.cot
    elif kind.augmentation == "rdrag":
        numbered = "\n".join(f"{i}. {s}" for i, s in enumerate(snippets, start=1))
        text = text + "\n" + templates.snippets.replace("{snippets}", numbered)

    return AssembledPrompt(
        instruction_text=text,
        image_ref=str(image_ref),
        retrieved_snippets=tuple(snippets),
        kind=kind,
        category_list=tuple(categories) if kind.wants_categories else (),
        snippet_sources=tuple(snippet_sources),
    )


def prompt_fingerprint(prompt: AssembledPrompt) -> str:
    """64-hex content digest over instruction text, snippets, and image bytes.

    Each part is length-prefixed so distinct inputs cannot collide by
    concatenation. Identifies the exact request for caching and audit.
    """
    try:
        image_bytes = Path(prompt.image_ref).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read image file {prompt.image_ref}: {exc}") from exc
    h = hashlib.sha256()

    def part(data: bytes) -> None:
        h.update(len(data).to_bytes(8, "little"))
        h.update(data)

    part(prompt.instruction_text.encode("utf-8"))
    part(len(prompt.retrieved_snippets).to_bytes(4, "little"))
    for s in prompt.retrieved_snippets:
        part(s.encode("utf-8"))
    part(image_bytes)
    return h.hexdigest()
