"""Independent brute-force reference implementations.

These exist to cross-check the package, so they deliberately avoid its
code paths: plain Python arithmetic instead of numpy, a regex tokenizer
instead of the character scanner, full sorts instead of partial ones.
Keep them boring and obviously correct.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter

from PIL import Image

_CJK = r"一-鿿㐀-䶿豈-﫿"
_CJK_RUN = re.compile(f"[{_CJK}]+")
# word chars minus underscore minus CJK (CJK runs are handled separately)
_WORD_RUN = re.compile(f"[^\\W_{_CJK}]+", re.UNICODE)


def brute_cosine(a, b) -> float:
    dot = math.fsum(x * y for x, y in zip(a, b))
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    return dot / (na * nb)


def brute_top_k(scores: dict[str, float], k: int) -> list[tuple[str, float]]:
    """Full sort by (-score, id), then take the first k."""
    ranked = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return ranked[: min(k, len(ranked))]


def brute_tokenize(text: str) -> list[str]:
    """Regex-based twin of the package tokenizer."""
    normalized = unicodedata.normalize("NFKC", text)
    tokens: list[str] = []
    pos = 0
    while pos < len(normalized):
        cjk = _CJK_RUN.match(normalized, pos)
        if cjk:
            run = cjk.group(0)
            if len(run) == 1:
                tokens.append(run)
            else:
                tokens.extend(run[i : i + 2] for i in range(len(run) - 1))
            pos = cjk.end()
            continue
        word = _WORD_RUN.match(normalized, pos)
        if word:
            tokens.append(word.group(0).lower())
            pos = word.end()
            continue
        pos += 1
    return tokens


def brute_tfidf_similarity(corpus_texts: list[str], a: str, b: str) -> float:
    """Recomputes df, idf, and the weighted cosine from first principles."""
    n = len(corpus_texts)
    df: Counter[str] = Counter()
    for text in corpus_texts:
        df.update(set(brute_tokenize(text)))

    def vector(text: str) -> dict[str, float]:
        counts = Counter(t for t in brute_tokenize(text) if t in df)
        return {t: c * (math.log((1 + n) / (1 + df[t])) + 1.0) for t, c in counts.items()}

    va, vb = vector(a), vector(b)
    if not va or not vb:
        return 0.0
    dot = math.fsum(w * vb.get(t, 0.0) for t, w in va.items())
    na = math.sqrt(math.fsum(w * w for w in va.values()))
    nb = math.sqrt(math.fsum(w * w for w in vb.values()))
    return dot / (na * nb)


def brute_luminance_patch(path, size: int = 32) -> list[list[float]]:
    """Pure-Python bilinear downscale of Rec.601 luminance to size x size."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        width, height = rgb.size
        px = rgb.load()
    lum = [
        [(0.299 * px[x, y][0] + 0.587 * px[x, y][1] + 0.114 * px[x, y][2]) / 255.0 for x in range(width)]
        for y in range(height)
    ]
    out = []
    for j in range(size):
        sy = (j + 0.5) * height / size - 0.5
        y0 = max(0, min(height - 1, math.floor(sy)))
        y1 = min(height - 1, y0 + 1)
        fy = sy - math.floor(sy)
        if sy < 0:
            y0 = y1 = 0
            fy = 0.0
        row = []
        for i in range(size):
            sx = (i + 0.5) * width / size - 0.5
            x0 = max(0, min(width - 1, math.floor(sx)))
            x1 = min(width - 1, x0 + 1)
            fx = sx - math.floor(sx)
            if sx < 0:
                x0 = x1 = 0
                fx = 0.0
            top = lum[y0][x0] * (1 - fx) + lum[y0][x1] * fx
            bottom = lum[y1][x0] * (1 - fx) + lum[y1][x1] * fx
            row.append(top * (1 - fy) + bottom * fy)
        out.append(row)
    return out


def brute_perceptual_distance(path_a, path_b, size: int = 32) -> float:
    pa = brute_luminance_patch(path_a, size)
    pb = brute_luminance_patch(path_b, size)
    total = math.fsum(
        (pa[j][i] - pb[j][i]) ** 2 for j in range(size) for i in range(size)
    )
    return total / (size * size)
