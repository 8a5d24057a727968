"""Hazard case corpus: data model, JSONL persistence, validation, splitting.

A corpus is a UTF-8 JSONL file, one case per line, with keys `id`, `image`,
`category`, `description` and optional `remediation` / `split`. Image paths
are kept verbatim for round-tripping and resolved against the corpus file's
directory when a real file is needed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .errors import CorpusError, ValidationError
from .rng import SplitMix64

logger = logging.getLogger(__name__)

SPLIT_LIBRARY = "library"
SPLIT_TEST = "test"
SPLIT_UNASSIGNED = "unassigned"
SPLIT_TAGS = (SPLIT_LIBRARY, SPLIT_TEST, SPLIT_UNASSIGNED)

STRATEGIES = ("stratified", "random")

_KNOWN_KEYS = ("id", "image", "category", "description", "remediation", "split")


@dataclass(frozen=True)
class Case:
    """One hazard record: an image, its category label, and its description."""

    id: str
    image_ref: str
    category: str
    description: str
    remediation: str | None = None
    split: str = SPLIT_UNASSIGNED
    extra: tuple[tuple[str, object], ...] = ()


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable collection of cases.

    `categories` lists category labels in first-appearance order; `base_dir`
    is where relative image paths resolve (not part of the serialized form).
    """

    cases: tuple[Case, ...]
    categories: tuple[str, ...]
    version: int = 1
    base_dir: Path | None = None

    def __len__(self) -> int:
        return len(self.cases)

    def by_id(self, case_id: str) -> Case:
        for case in self.cases:
            if case.id == case_id:
                return case
        raise KeyError(case_id)

    def image_path(self, case: Case) -> Path:
        p = Path(case.image_ref)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p

    def with_split(self, case_ids_library: set[str]) -> "Corpus":
        tagged = tuple(
            replace(c, split=SPLIT_LIBRARY if c.id in case_ids_library else SPLIT_TEST)
            for c in self.cases
        )
        return replace(self, cases=tagged)

    def subset(self, split: str) -> tuple[Case, ...]:
        return tuple(c for c in self.cases if c.split == split)


@dataclass(frozen=True)
class SplitSpec:
    """Parameters for carving a corpus into retrieval library and test set."""

    library_count: int
    seed: int
    strategy: str = "stratified"

    def validate(self) -> None:
        if self.library_count <= 0:
            raise ValidationError(f"library_count must be positive, got {self.library_count}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown split strategy {self.strategy!r}")


@dataclass(frozen=True)
class Finding:
    """One validation problem; findings are data, not failures."""

    case_id: str | None
    kind: str
    message: str

    def __str__(self) -> str:
        who = self.case_id if self.case_id is not None else "<corpus>"
        return f"{who}: {self.message}"


def _derive_categories(cases: Iterable[Case]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for c in cases:
        if c.category not in seen:
            seen[c.category] = None
    return tuple(seen)


def load_corpus(path: str | Path, strict: bool = True) -> Corpus:
    """Load a JSONL corpus file.

    Strict mode rejects unknown keys and unknown split tags; lenient mode
    preserves them (unknown split tags surface later as validation findings).
    Raises CorpusError naming the line number for any malformed line, and
    for duplicate ids names both occurrences.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    cases: list[Case] = []
    id_lines: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: record must be a JSON object")
            cases.append(_parse_record(obj, lineno, strict))
            cid = cases[-1].id
            if cid in id_lines:
                raise CorpusError(f"duplicate id {cid} (lines {id_lines[cid]},{lineno})")
            id_lines[cid] = lineno
    return Corpus(cases=tuple(cases), categories=_derive_categories(cases), base_dir=path.parent)


def _parse_record(obj: dict, lineno: int, strict: bool) -> Case:
    for key in ("id", "image", "category", "description"):
        if key not in obj:
            raise CorpusError(f"line {lineno}: missing field '{key}'")
        if not isinstance(obj[key], str):
            raise CorpusError(f"line {lineno}: field '{key}' must be a string")
    remediation = obj.get("remediation")
    if remediation is not None and not isinstance(remediation, str):
        raise CorpusError(f"line {lineno}: field 'remediation' must be a string")
    split = obj.get("split", SPLIT_UNASSIGNED)
    if not isinstance(split, str):
        raise CorpusError(f"line {lineno}: field 'split' must be a string")
    if strict and split not in (SPLIT_LIBRARY, SPLIT_TEST, SPLIT_UNASSIGNED):
        raise CorpusError(f"line {lineno}: field 'split' must be 'library' or 'test', got {split!r}")
    unknown = [k for k in obj if k not in _KNOWN_KEYS]
    if unknown and strict:
        raise CorpusError(f"line {lineno}: unknown key '{unknown[0]}'")
    extra = tuple(sorted((k, obj[k]) for k in unknown))
    return Case(
        id=obj["id"],
        image_ref=obj["image"],
        category=obj["category"],
        description=obj["description"],
        remediation=remediation,
        split=split,
        extra=extra,
    )


def dumps_corpus(corpus: Corpus) -> str:
    """Canonical JSONL serialization: fixed key order, '\\n' line endings."""
    lines = []
    for c in corpus.cases:
        obj: dict[str, object] = {
            "id": c.id,
            "image": c.image_ref,
            "category": c.category,
            "description": c.description,
        }
        if c.remediation is not None:
            obj["remediation"] = c.remediation
        if c.split != SPLIT_UNASSIGNED:
            obj["split"] = c.split
        for k, v in c.extra:
            obj[k] = v
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the canonical serialization atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_corpus(corpus), encoding="utf-8")
    tmp.replace(path)


def stratified_allocation(counts: dict[str, int], library_count: int) -> dict[str, int]:
    """Per-category library quota: proportional, remainder by largest fraction.

    Floor of the proportional quota first, remaining slots to the largest
    fractional parts (category-name tiebreak). A minimum-one pass then moves
    single slots to non-empty categories that got none, but only from donors
    that stay within one case of their proportional share (remainder winners
    holding >= 2, then integer-quota categories holding >= 2), so the +-1
    proportionality bound holds unconditionally; if no such donor remains the
    category stays at zero.
    """
    total = sum(counts.values())
    if library_count >= total:
        raise ValidationError(
            f"library_count {library_count} must be smaller than corpus size {total}"
        )
    quotas = {c: library_count * n / total for c, n in counts.items()}
    alloc = {c: int(quotas[c]) for c in counts}
    fracs = {c: quotas[c] - alloc[c] for c in counts}
    remainder = library_count - sum(alloc.values())
    ranked = sorted(counts, key=lambda c: (-fracs[c], c))
    winners = ranked[:remainder]
    for c in winners:
        alloc[c] += 1

    zeros = [c for c in sorted(counts) if alloc[c] == 0 and counts[c] >= 1]
    donors = [c for c in sorted(winners, key=lambda c: (fracs[c], c)) if alloc[c] >= 2]
    donors += [
        c
        for c in sorted(counts, key=lambda c: (-alloc[c], c))
        if fracs[c] == 0.0 and alloc[c] >= 2
    ]
    for z in zeros:
        if not donors:
            break
        donor = donors.pop(0)
        alloc[donor] -= 1
        alloc[z] += 1
    return alloc


def split_corpus(corpus: Corpus, spec: SplitSpec) -> Corpus:
    """Assign library/test tags; a pure function of (corpus, spec).

    Stratified strategy allocates per-category counts via
    stratified_allocation and picks members by a per-category seeded shuffle;
    random strategy shuffles the whole id list once. Case ids are sorted
    before shuffling so the outcome does not depend on file order.
    """
    spec.validate()
    if spec.library_count >= len(corpus):
        raise ValidationError(
            f"library_count {spec.library_count} must be smaller than corpus size {len(corpus)}"
        )
    if spec.strategy == "random":
        ids = sorted(c.id for c in corpus.cases)
        rng = SplitMix64.for_key(spec.seed, "random-split")
        rng.shuffle(ids)
        return corpus.with_split(set(ids[: spec.library_count]))

    by_category: dict[str, list[str]] = {}
    for c in corpus.cases:
        by_category.setdefault(c.category, []).append(c.id)
    counts = {cat: len(ids) for cat, ids in by_category.items()}
    alloc = stratified_allocation(counts, spec.library_count)
    library_ids: set[str] = set()
    for cat in sorted(by_category):
        ids = sorted(by_category[cat])
        rng = SplitMix64.for_key(spec.seed, cat)
        rng.shuffle(ids)
        library_ids.update(ids[: alloc[cat]])
    return corpus.with_split(library_ids)


def validate_corpus(corpus: Corpus) -> list[Finding]:
    """Check cases for missing images, empty fields, and unknown split tags."""
    findings: list[Finding] = []
    for c in corpus.cases:
        if not c.id:
            findings.append(Finding(c.id, "empty_field", "empty id"))
        if not c.category:
            findings.append(Finding(c.id, "empty_field", "empty category"))
        if not c.description:
            findings.append(Finding(c.id, "empty_field", "empty description"))
        if c.split not in SPLIT_TAGS:
            findings.append(Finding(c.id, "unknown_split", f"unknown split tag {c.split!r}"))
        image = corpus.image_path(c)
        if not image.is_file():
            findings.append(Finding(c.id, "missing_image", f"image file not found: {image}"))
    return findings


def load_taxonomy(path: str | Path) -> tuple[str, ...]:
    """Read the category taxonomy: one label per line, order significant."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"taxonomy file not found: {path}")
    seen: dict[str, int] = {}
    labels: list[str] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        label = line.strip()
        if not label:
            continue
        if label in seen:
            raise ValidationError(f"duplicate category {label!r} (lines {seen[label]},{lineno})")
        seen[label] = lineno
        labels.append(label)
    if not labels:
        raise ValidationError(f"taxonomy file is empty: {path}")
    return tuple(labels)
