"""Image and text embeddings behind pluggable providers.

Three providers ship: an HTTP client speaking the JSON wire protocol below,
a reader over precomputed stores, and a deterministic hash-expansion
provider for offline tests and fixtures. The gateway L2-normalizes every
vector once so downstream cosine similarity reduces to a dot product.

Wire protocol (HTTP provider):
    POST <url>  {"model": str, "input": [{"type": "image_b64"|"text", "data": str}]}
    200 -> {"dim": int, "vectors": [[float, ...]]}

Store file format (all integers little-endian):
    magic "RDEM" | format version u16 | dim u32 | count u32
    per entry: id length u16 | UTF-8 id bytes | dim f64 values
"""

from __future__ import annotations

import base64
import logging
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .cases import Corpus
from .errors import ConfigurationError, DataError, TransportError
from .rng import SplitMix64, fnv1a64

logger = logging.getLogger(__name__)

STORE_MAGIC = b"RDEM"
STORE_VERSION = 1

NORM_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-dimension real vector, float64 throughout."""

    dim: int
    values: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise ConfigurationError(f"vector has {len(self.values)} values, declared dim {self.dim}")
        for v in self.values:
            if math.isnan(v) or math.isinf(v):
                raise DataError("vector contains NaN or Inf")
        if self.normalized:
            norm = math.sqrt(sum(v * v for v in self.values))
            if abs(norm - 1.0) > NORM_TOLERANCE:
                raise DataError(f"vector flagged normalized but |norm-1| = {abs(norm - 1.0):.3e}")


def normalize(vector: EmbeddingVector) -> EmbeddingVector:
    """L2-normalize; rejects the zero vector, which has no direction."""
    norm = math.sqrt(sum(v * v for v in vector.values))
    if norm == 0.0:
        raise DataError("zero vector not normalizable")
    return EmbeddingVector(
        dim=vector.dim,
        values=tuple(v / norm for v in vector.values),
        normalized=True,
    )


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable id -> vector map with a single shared dimension."""

    dim: int
    entries: dict[str, EmbeddingVector]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.entries)


class EmbeddingProvider(Protocol):
    provider_id: str
    dim: int

    def embed_image_bytes(self, data: bytes) -> tuple[float, ...]: ...

    def embed_text_raw(self, text: str) -> tuple[float, ...]: ...


class DeterministicProvider:
    """Hash-expansion provider: no model, bit-identical across processes.

    The payload's FNV-1a hash XOR the seed initializes a splitmix64 stream
    that emits `dim` components in [-1, 1); the gateway normalizes the
    result. Identical bytes always give identical vectors.
    """

    def __init__(self, dim: int = 8, seed: int = 0):
        if dim <= 0:
            raise ConfigurationError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.seed = seed
        self.provider_id = f"deterministic(dim={dim},seed={seed})"

    def _expand(self, payload: bytes) -> tuple[float, ...]:
        rng = SplitMix64(fnv1a64(payload) ^ self.seed)
        return tuple(rng.next_float() for _ in range(self.dim))

    def embed_image_bytes(self, data: bytes) -> tuple[float, ...]:
        return self._expand(data)

    def embed_text_raw(self, text: str) -> tuple[float, ...]:
        return self._expand(text.encode("utf-8"))


class HttpEmbeddingProvider:
    """Client for the JSON embedding service protocol documented above."""

    def __init__(
        self,
        url: str,
        model: str,
        dim: int,
        token: str | None = None,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
    ):
        self.url = url
        self.model = model
        self.dim = dim
        self.token = token
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.provider_id = f"http({model}@{url})"

    def _request(self, item: dict) -> tuple[float, ...]:
        import time as _time

        payload = {"model": self.model, "input": [item]}
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                _time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
                logger.warning("embedding request attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code >= 500:
                last_error = TransportError(f"server error {resp.status_code}")
                logger.warning("embedding request attempt %d got %d", attempt + 1, resp.status_code)
                continue
            if resp.status_code != 200:
                raise ConfigurationError(
                    f"embedding service rejected request ({resp.status_code}): {resp.text[:200]}"
                )
            body = resp.json()
            vectors = body.get("vectors")
            if body.get("dim") != self.dim or not vectors:
                raise ConfigurationError(
                    f"embedding service returned dim {body.get('dim')}, configured dim {self.dim}"
                )
            return tuple(float(v) for v in vectors[0])
        raise TransportError(
            f"embedding service unreachable after {self.max_attempts} attempts: {last_error}"
        )

    def embed_image_bytes(self, data: bytes) -> tuple[float, ...]:
        return self._request({"type": "image_b64", "data": base64.b64encode(data).decode("ascii")})

    def embed_text_raw(self, text: str) -> tuple[float, ...]:
        return self._request({"type": "text", "data": text})


class PrecomputedProvider:
    """Serves vectors from an EmbeddingStore; keys are ids, texts, or paths."""

    def __init__(self, store: EmbeddingStore):
        self.store = store
        self.dim = store.dim
        self.provider_id = f"precomputed({store.provenance or 'store'})"

    def _lookup(self, key: str) -> tuple[float, ...]:
        entry = self.store.entries.get(key)
        if entry is None and ("/" in key or "\\" in key):
            entry = self.store.entries.get(Path(key).name)
        if entry is None:
            raise DataError(f"no precomputed embedding for {key!r}")
        return entry.values

    def embed_image_bytes(self, data: bytes) -> tuple[float, ...]:
        raise DataError("precomputed provider resolves by key, not by content; use embed_image")

    def embed_text_raw(self, text: str) -> tuple[float, ...]:
        return self._lookup(text)

    def lookup_path(self, path: str) -> tuple[float, ...]:
        return self._lookup(path)


def _check_dim(provider: EmbeddingProvider, values: tuple[float, ...]) -> None:
    if len(values) != provider.dim:
        raise ConfigurationError(
            f"provider returned dim {len(values)}, advertised dim {provider.dim}"
        )


def embed_image(provider: EmbeddingProvider, image_ref: str | Path) -> EmbeddingVector:
    """Embed an image file; the result is always unit-norm."""
    path = Path(image_ref)
    if isinstance(provider, PrecomputedProvider):
        values = provider.lookup_path(str(image_ref))
    else:
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read image file {path}: {exc}") from exc
        values = provider.embed_image_bytes(data)
    _check_dim(provider, values)
    return normalize(EmbeddingVector(dim=len(values), values=values))


def embed_text(provider: EmbeddingProvider, text: str) -> EmbeddingVector:
    """Embed a text string; the result is always unit-norm."""
    if not text:
        raise DataError("empty text")
    values = provider.embed_text_raw(text)
    _check_dim(provider, values)
    return normalize(EmbeddingVector(dim=len(values), values=values))


def build_store(
    provider: EmbeddingProvider,
    corpus: Corpus,
    split_filter: str,
    out_path: str | Path | None = None,
    strict: bool = True,
    max_inflight: int = 4,
) -> EmbeddingStore:
    """Embed every case in the given split and optionally persist the store.

    Failures are collected per case; strict mode aborts with the full list,
    lenient mode logs and skips. Persisting writes a temp file then renames,
    so readers never observe a partial store.
    """
    selected = [c for c in corpus.cases if c.split == split_filter]
    if not selected:
        logger.warning("no cases with split %r; building empty store", split_filter)
    entries: dict[str, EmbeddingVector] = {}
    failures: list[tuple[str, str]] = []

    def work(case):
        return case.id, embed_image(provider, corpus.image_path(case))

    with ThreadPoolExecutor(max_workers=max(1, max_inflight)) as pool:
        futures = [(case.id, pool.submit(work, case)) for case in selected]
        for case_id, fut in futures:
            try:
                cid, vec = fut.result()
                entries[cid] = vec
            except Exception as exc:  # noqa: BLE001 - per-case failures are data
                failures.append((case_id, str(exc)))
    if failures:
        lines = "; ".join(f"{cid}: {msg}" for cid, msg in failures)
        if strict:
            raise DataError(f"{len(failures)} case(s) failed to embed: {lines}")
        logger.warning("%d case(s) failed to embed: %s", len(failures), lines)
    store = EmbeddingStore(dim=provider.dim, entries=entries, provenance=provider.provider_id)
    if out_path is not None:
        write_store(store, out_path)
    return store


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Persist in the binary RDEM layout, atomically."""
    path = Path(path)
    parts = [STORE_MAGIC, struct.pack("<HII", STORE_VERSION, store.dim, len(store.entries))]
    for case_id in sorted(store.entries):
        vec = store.entries[case_id]
        if vec.dim != store.dim:
            raise ConfigurationError(f"entry {case_id} has dim {vec.dim}, store dim {store.dim}")
        id_bytes = case_id.encode("utf-8")
        parts.append(struct.pack("<H", len(id_bytes)))
        parts.append(id_bytes)
        parts.append(struct.pack(f"<{store.dim}d", *vec.values))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_store(path: str | Path) -> EmbeddingStore:
    """Read a binary RDEM store; round-trips bit-exactly with write_store."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 14 or data[:4] != STORE_MAGIC:
        raise DataError(f"not an embedding store file: {path}")
    version, dim, count = struct.unpack_from("<HII", data, 4)
    if version != STORE_VERSION:
        raise DataError(f"unsupported store format version {version}")
    offset = 14
    entries: dict[str, EmbeddingVector] = {}
    for _ in range(count):
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        case_id = data[offset : offset + id_len].decode("utf-8")
        offset += id_len
        values = struct.unpack_from(f"<{dim}d", data, offset)
        offset += 8 * dim
        norm = math.sqrt(sum(v * v for v in values))
        unit = abs(norm - 1.0) <= NORM_TOLERANCE
        entries[case_id] = EmbeddingVector(dim=dim, values=tuple(values), normalized=unit)
    if offset != len(data):
        raise DataError(f"trailing bytes in store file: {path}")
    return EmbeddingStore(dim=dim, entries=entries)
