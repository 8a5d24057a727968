"""Text metrics for generated hazard descriptions.

Three scores per sample: category accuracy (exact or lenient label match,
computed upstream), embedding cosine similarity between generated and
reference descriptions, and TF-IDF cosine similarity over a shared
vocabulary. The tokenizer handles mixed Chinese/Latin text: CJK runs
become overlapping character bigrams, Latin and digit runs become
lowercased word tokens, punctuation separates.
"""

from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass

from .embeddings import EmbeddingProvider, embed_text
from .errors import DataError
from .retrieval import cosine_similarity

TOKENIZER_ID = "cjk-bigram-v1"

_CJK_RANGES = (
    (0x4E00, 0x9FFF),
    (0x3400, 0x4DBF),
    (0xF900, 0xFAFF),
)


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """Split text into CJK character bigrams and lowercased word tokens.

    A CJK run of length one yields the single character, so short labels
    still produce a token. Everything that is neither CJK nor alphanumeric
    acts as a separator.
    """
    normalized = unicodedata.normalize("NFKC", text)
    tokens: list[str] = []
    cjk_run: list[str] = []
    word_run: list[str] = []

    def flush_cjk() -> None:
        if len(cjk_run) == 1:
            tokens.append(cjk_run[0])
        else:
            tokens.extend(a + b for a, b in zip(cjk_run, cjk_run[1:]))
        cjk_run.clear()

    def flush_word() -> None:
        if word_run:
            tokens.append("".join(word_run).lower())
            word_run.clear()

    for ch in normalized:
        if _is_cjk(ch):
            flush_word()
            cjk_run.append(ch)
        elif ch.isalnum():
            if cjk_run:
                flush_cjk()
            word_run.append(ch)
        else:
            flush_word()
            if cjk_run:
                flush_cjk()
    flush_word()
    if cjk_run:
        flush_cjk()
    return tokens


@dataclass(frozen=True)
class TfIdfModel:
    """Frozen vocabulary with smoothed inverse document frequencies."""

    idf: dict[str, float]
    document_count: int
    tokenizer_id: str = TOKENIZER_ID

    def vector(self, text: str) -> dict[str, float]:
        """Raw term count times idf, tokens outside the vocabulary dropped."""
        counts = Counter(t for t in tokenize(text) if t in self.idf)
        return {t: c * self.idf[t] for t, c in counts.items()}


def fit_tfidf(texts: list[str]) -> TfIdfModel:
    """Fit document frequencies; idf = ln((1+N)/(1+df)) + 1."""
    if not texts:
        raise DataError("cannot fit tf-idf model on zero documents")
    df: Counter[str] = Counter()
    for text in texts:
        df.update(set(tokenize(text)))
    n = len(texts)
    idf = {t: math.log((1 + n) / (1 + c)) + 1.0 for t, c in df.items()}
    return TfIdfModel(idf=idf, document_count=n)


def tfidf_similarity(model: TfIdfModel, a: str, b: str) -> float:
    """Cosine of the two tf-idf vectors; 0.0 when either side is empty."""
    va = model.vector(a)
    vb = model.vector(b)
    if not va or not vb:
        return 0.0
    dot = sum(w * vb[t] for t, w in va.items() if t in vb)
    norm_a = math.sqrt(sum(w * w for w in va.values()))
    norm_b = math.sqrt(sum(w * w for w in vb.values()))
    return dot / (norm_a * norm_b)


def bert_similarity(provider: EmbeddingProvider, a: str, b: str) -> float:
    """Cosine similarity of the provider's text embeddings; 0.0 on empty text."""
    if not a or not b:
        return 0.0
    return cosine_similarity(embed_text(provider, a), embed_text(provider, b))


@dataclass(frozen=True)
class EvalRecord:
    """One scored test sample."""

    case_id: str
    category: str
    predicted_category: str | None
    parse_status: str
    correct: bool
    bert: float
    tfidf: float


def category_accuracy(records: list[EvalRecord]) -> float:
    if not records:
        raise DataError("no samples")
    return sum(1 for r in records if r.correct) / len(records)


def mean_bert(records: list[EvalRecord]) -> float:
    if not records:
        raise DataError("no samples")
    return sum(r.bert for r in records) / len(records)


def mean_tfidf(records: list[EvalRecord]) -> float:
    if not records:
        raise DataError("no samples")
    return sum(r.tfidf for r in records) / len(records)


def per_category_accuracy(
    records: list[EvalRecord],
    taxonomy: tuple[str, ...] = (),
) -> dict[str, tuple[int, float | None]]:
    """Per-category sample count and accuracy.

    Categories named in `taxonomy` but absent from the records appear with
    count 0 and accuracy None so report rows stay aligned across runs.
    """
    grouped: dict[str, list[EvalRecord]] = {c: [] for c in taxonomy}
    for r in records:
        grouped.setdefault(r.category, []).append(r)
    out: dict[str, tuple[int, float | None]] = {}
    for category, members in grouped.items():
        if members:
            out[category] = (len(members), category_accuracy(members))
        else:
            out[category] = (0, None)
    return out
