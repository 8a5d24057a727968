"""Similarity scoring and exact top-K retrieval over the case library.

Three scorers: cosine over stored embeddings (the default), uniform random
draws (ablation control group), and a model-free perceptual baseline. The
scan is exact brute force; at library scale (~100 cases) nothing fancier
pays for itself.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .cases import Case, Corpus
from .embeddings import EmbeddingProvider, EmbeddingStore, EmbeddingVector, embed_image
from .errors import ConfigurationError, DataError, ValidationError
from .rng import SplitMix64

logger = logging.getLogger(__name__)

SCORERS = ("cosine_embedding", "random", "perceptual_baseline")

PATCH_SIZE = 32


@dataclass(frozen=True)
class RetrievalHit:
    """One scored library case; higher score means more similar."""

    case_id: str
    score: float


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 1
    scorer: str = "cosine_embedding"
    seed: int = 0

    def validate(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.scorer not in SCORERS:
            raise ValidationError(f"unknown scorer {self.scorer!r}; expected one of {SCORERS}")


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Dot product over norms; for unit vectors this is just the dot product."""
    if a.dim != b.dim:
        raise ConfigurationError(f"dimension mismatch: {a.dim} vs {b.dim}")
    av = np.asarray(a.values, dtype=np.float64)
    bv = np.asarray(b.values, dtype=np.float64)
    na = math.sqrt(float(av @ av))
    nb = math.sqrt(float(bv @ bv))
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity undefined for the zero vector")
    return float(av @ bv) / (na * nb)


def _clamped_k(k: int, size: int) -> int:
    if k > size:
        logger.warning("k=%d exceeds library size %d; clamping", k, size)
        return size
    return k


def top_k(query: EmbeddingVector, store: EmbeddingStore, cfg: RetrievalConfig) -> list[RetrievalHit]:
    """The k highest-similarity entries, ties broken by ascending case id."""
    cfg.validate()
    if not store.entries:
        raise DataError("empty retrieval library")
    if query.dim != store.dim:
        raise ConfigurationError(f"query dim {query.dim} does not match store dim {store.dim}")
    k = _clamped_k(cfg.k, len(store.entries))
    ids = sorted(store.entries)
    matrix = np.asarray([store.entries[i].values for i in ids], dtype=np.float64)
    qv = np.asarray(query.values, dtype=np.float64)
    scores = matrix @ qv
    # ids are pre-sorted ascending, and argsort is stable, so equal scores
    # fall out in id order.
    order = np.argsort(-scores, kind="stable")[:k]
    return [RetrievalHit(case_id=ids[i], score=float(scores[i])) for i in order]


def _luminance(path: str | Path) -> np.ndarray:
    """Decode to RGB and return the luminance plane scaled to [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return (0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]) / 255.0


def _downscale_bilinear(plane: np.ndarray, size: int = PATCH_SIZE) -> np.ndarray:
    """Bilinear resample to size x size using half-pixel centers, edges clamped.

    Output pixel (i, j) samples the source at
    ((i + 0.5) * H / size - 0.5, (j + 0.5) * W / size - 0.5) and blends the
    four surrounding texels. The formula is fixed so that two independent
    implementations produce identical values.
    """
    h, w = plane.shape
    out_idx = np.arange(size, dtype=np.float64)
    src_y = (out_idx + 0.5) * (h / size) - 0.5
    src_x = (out_idx + 0.5) * (w / size) - 0.5
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    ty = src_y - y0
    tx = src_x - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = plane[np.ix_(y0c, x0c)] * (1 - tx)[None, :] + plane[np.ix_(y0c, x1c)] * tx[None, :]
    bottom = plane[np.ix_(y1c, x0c)] * (1 - tx)[None, :] + plane[np.ix_(y1c, x1c)] * tx[None, :]
    return top * (1 - ty)[:, None] + bottom * ty[:, None]


def perceptual_distance(image_a: str | Path, image_b: str | Path) -> float:
    """Mean squared difference of 32x32 bilinear-downscaled luminance.

    0.0 for identical pixel data; 1.0 for all-black vs all-white. A cheap,
    fully reproducible stand-in for learned perceptual metrics.
    """
    pa = _downscale_bilinear(_luminance(image_a))
    pb = _downscale_bilinear(_luminance(image_b))
    return float(np.mean((pa - pb) ** 2))


def retrieve_cases(
    query_image: str | Path,
    corpus: Corpus,
    store: EmbeddingStore,
    cfg: RetrievalConfig,
    provider: EmbeddingProvider | None = None,
    query_key: str | None = None,
) -> list[tuple[Case, float]]:
    """Run the configured scorer and join hits back to their cases.

    The returned order is exactly the order snippets will appear in the
    prompt. `query_key` identifies the query for the random scorer's
    per-query stream; it defaults to the image path.
    """
    cfg.validate()
    if not store.entries:
        raise DataError("empty retrieval library")
    known = {c.id for c in corpus.cases}
    missing = sorted(set(store.entries) - known)
    if missing:
        raise ConfigurationError(f"store entries missing from corpus: {', '.join(missing)}")

    if cfg.scorer == "cosine_embedding":
        if provider is None:
            raise ConfigurationError("cosine scorer requires an embedding provider")
        query = embed_image(provider, query_image)
        hits = top_k(query, store, cfg)
    elif cfg.scorer == "random":
        ids = sorted(store.entries)
        k = _clamped_k(cfg.k, len(ids))
        rng = SplitMix64.for_key(cfg.seed, query_key or str(query_image))
        hits = [RetrievalHit(case_id=i, score=0.0) for i in rng.sample_distinct(ids, k)]
    else:
        k = _clamped_k(cfg.k, len(store.entries))
        scored = []
        for case_id in sorted(store.entries):
            case = corpus.by_id(case_id)
            distance = perceptual_distance(query_image, corpus.image_path(case))
            scored.append(RetrievalHit(case_id=case_id, score=-distance))
        scored.sort(key=lambda h: (-h.score, h.case_id))
        hits = scored[:k]

    return [(corpus.by_id(h.case_id), h.score) for h in hits]
