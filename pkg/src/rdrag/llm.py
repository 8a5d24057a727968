"""Multimodal LLM gateway: endpoint client, offline mocks, reply parsing.

Replies are parsed by a labeled-section grammar over the three field labels
隐患类别 / 隐患描述 / 整改意见. A section starts at its label (half- or
full-width colon) and runs to the next label or end of text; surrounding
whitespace, list-marker residue, and trailing separators are stripped.
Category values are additionally normalized (NFKC, trim, trailing
punctuation removed) before comparison against the taxonomy.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import time
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import ConfigurationError, RequestError, TransportError, ValidationError
from .prompts import AssembledPrompt, prompt_fingerprint

logger = logging.getLogger(__name__)

PARSE_FULL = "full"
PARSE_PARTIAL = "partial"
PARSE_FAILED = "failed"

MOCK_KINDS = ("echo_top1_category", "fixed_reply", "scripted_by_fingerprint")

_LABEL_RE = re.compile(r"(隐患类别|隐患描述|整改意见)\s*[:：]")
_BULLET_RESIDUE_RE = re.compile(r"\n\s*(?:[-*•·]|\(?\d{1,3}[.、．)）])?\s*$")
_TRAILING_SEPARATORS = "；;。，,.、"
_TRAILING_PUNCT = "。，、；：！？．…～,.;:!?~"

_LABEL_FIELDS = {"隐患类别": "category", "隐患描述": "description", "整改意见": "remediation"}


@dataclass(frozen=True)
class LLMReply:
    raw_text: str
    model_id: str
    latency_ms: int
    request_fingerprint: str


@dataclass(frozen=True)
class ParsedHazard:
    """Structured model output; degradation lives in parse_status, not errors."""

    category: str | None
    description: str | None
    remediation: str | None
    parse_status: str


@dataclass
class MockPolicy:
    """Deterministic stand-in for a remote model.

    echo_top1_category answers with the category attached to the first
    retrieved snippet, giving an analytically predictable pipeline;
    fixed_reply always returns `fixed_text`; scripted_by_fingerprint maps
    prompt fingerprints to canned replies and must cover every fingerprint
    it receives.
    """

    kind: str
    fixed_text: str | None = None
    script: dict[str, str] | None = None
    calls: int = field(default=0, compare=False)

    def validate(self) -> None:
        if self.kind not in MOCK_KINDS:
            raise ValidationError(f"unknown mock kind {self.kind!r}; expected one of {MOCK_KINDS}")
        if self.kind == "fixed_reply" and self.fixed_text is None:
            raise ValidationError("fixed_reply mock requires fixed_text")
        if self.kind == "scripted_by_fingerprint" and not self.script:
            raise ValidationError("scripted_by_fingerprint mock requires a script map")


@dataclass(frozen=True)
class EndpointConfig:
    """One model endpoint: either a remote HTTP service or a local mock."""

    id: str
    kind: str = "mock"
    model: str | None = None
    url: str | None = None
    token_env: str | None = None
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    policy: MockPolicy | None = None

    def validate(self) -> None:
        if self.kind not in ("mock", "http"):
            raise ValidationError(f"endpoint kind must be 'mock' or 'http', got {self.kind!r}")
        if self.kind == "http" and not self.url:
            raise ValidationError(f"http endpoint {self.id!r} needs a url")
        if self.kind == "mock":
            if self.policy is None:
                raise ValidationError(f"mock endpoint {self.id!r} needs a policy")
            self.policy.validate()

    @property
    def model_id(self) -> str:
        return self.model or self.id


def _mock_reply(policy: MockPolicy, prompt: AssembledPrompt, fingerprint: str) -> str:
    policy.calls += 1
    if policy.kind == "fixed_reply":
        return policy.fixed_text or ""
    if policy.kind == "scripted_by_fingerprint":
        assert policy.script is not None
        if fingerprint not in policy.script:
            raise ValidationError(f"scripted mock has no reply for fingerprint {fingerprint}")
        return policy.script[fingerprint]
    if not prompt.snippet_sources:
        raise ValidationError("echo_top1_category mock requires an rdrag prompt with snippet metadata")
    top = prompt.snippet_sources[0]
    snippet = prompt.retrieved_snippets[0]
    return f"隐患类别: {top.category}; 隐患描述: {snippet}; 整改意见: 参照相似案例及时整改。"


def _http_reply(endpoint: EndpointConfig, prompt: AssembledPrompt) -> str:
    try:
        image_b64 = base64.b64encode(Path(prompt.image_ref).read_bytes()).decode("ascii")
    except OSError as exc:
        raise ValidationError(f"cannot read image file {prompt.image_ref}: {exc}") from exc
    payload = {
        "model": endpoint.model_id,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "text", "text": prompt.instruction_text},
                    {"type": "image_b64", "data": image_b64},
                ],
            }
        ],
    }
    headers = {"Content-Type": "application/json"}
    if endpoint.token_env and os.environ.get(endpoint.token_env):
        headers["Authorization"] = f"Bearer {os.environ[endpoint.token_env]}"
    last_error: Exception | None = None
    for attempt in range(endpoint.max_attempts):
        if attempt:
            time.sleep(endpoint.backoff_base * (2 ** (attempt - 1)))
        try:
            resp = requests.post(endpoint.url, json=payload, headers=headers, timeout=endpoint.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            last_error = exc
            logger.warning("model request attempt %d failed: %s", attempt + 1, exc)
            continue
        if resp.status_code >= 500:
            last_error = TransportError(f"server error {resp.status_code}")
            logger.warning("model request attempt %d got %d", attempt + 1, resp.status_code)
            continue
        if resp.status_code != 200:
            raise RequestError(
                f"endpoint {endpoint.id!r} rejected request ({resp.status_code}): {resp.text[:200]}"
            )
        body = resp.json()
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise RequestError(f"endpoint {endpoint.id!r} returned malformed body: {str(body)[:200]}")
        return body["text"]
    raise TransportError(
        f"endpoint {endpoint.id!r} unreachable after {endpoint.max_attempts} attempts: {last_error}"
    )


def complete(
    endpoint: EndpointConfig,
    prompt: AssembledPrompt,
    fingerprint: str | None = None,
) -> LLMReply:
    """Send a prompt and return the raw reply, byte-exact.

    Transport failures retry with exponential backoff; 4xx responses are
    fatal. `fingerprint` may be passed to avoid recomputing it.
    """
    endpoint.validate()
    fingerprint = fingerprint or prompt_fingerprint(prompt)
    started = time.monotonic()
    if endpoint.kind == "mock":
        assert endpoint.policy is not None
        raw = _mock_reply(endpoint.policy, prompt, fingerprint)
        latency = 0
    else:
        raw = _http_reply(endpoint, prompt)
        latency = int((time.monotonic() - started) * 1000)
    return LLMReply(
        raw_text=raw,
        model_id=endpoint.model_id,
        latency_ms=latency,
        request_fingerprint=fingerprint,
    )


def normalize_label(text: str) -> str:
    """NFKC, trim, strip trailing punctuation; used on category labels."""
    out = unicodedata.normalize("NFKC", text).strip()
    return out.rstrip(_TRAILING_PUNCT).rstrip()


def _clean_section(value: str) -> str:
    value = value.strip()
    while True:
        trimmed = _BULLET_RESIDUE_RE.sub("", value)
        trimmed = trimmed.rstrip().rstrip(_TRAILING_SEPARATORS).rstrip()
        if trimmed == value:
            return value.lstrip()
        value = trimmed


def parse_reply(raw_text: str, taxonomy: tuple[str, ...] = ()) -> ParsedHazard:
    """Extract labeled fields from a model reply.

    Unlabeled free text degrades to parse_status='failed' with the raw text
    carried in `description` so text-similarity metrics can still score it.
    The first occurrence of each label wins. `taxonomy` is accepted for
    symmetry with match_category but extraction itself is taxonomy-free.
    """
    matches = list(_LABEL_RE.finditer(raw_text))
    fields: dict[str, str] = {}
    for i, m in enumerate(matches):
        name = _LABEL_FIELDS[m.group(1)]
        if name in fields:
            continue
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw_text)
        value = _clean_section(raw_text[m.end() : end])
        if value:
            fields[name] = value

    category = fields.get("category")
    if category is not None:
        category = normalize_label(category) or None
    description = fields.get("description")
    remediation = fields.get("remediation")

    if category and description:
        status = PARSE_FULL
    elif category or description:
        status = PARSE_PARTIAL
    else:
        status = PARSE_FAILED
        description = raw_text
    return ParsedHazard(
        category=category,
        description=description,
        remediation=remediation,
        parse_status=status,
    )


def match_category(
    parsed: ParsedHazard,
    truth: str,
    taxonomy: tuple[str, ...] = (),
    lenient: bool = False,
) -> bool:
    """Decide whether the predicted category agrees with ground truth.

    Strict mode is normalized string equality. Lenient mode additionally
    accepts the prediction when exactly one taxonomy category is in a
    substring relation with it (either direction) and that category is the
    truth. Failed parses never match.
    """
    if not truth:
        raise ValidationError("truth category must be non-empty")
    if parsed.parse_status == PARSE_FAILED or not parsed.category:
        return False
    predicted = normalize_label(parsed.category)
    expected = normalize_label(truth)
    if predicted == expected:
        return True
    if not lenient:
        return False
    candidates = [
        c for c in taxonomy if normalize_label(c) in predicted or predicted in normalize_label(c)
    ]
    return len(candidates) == 1 and normalize_label(candidates[0]) == expected


class ReplyCache:
    """Disk cache of raw replies keyed by (model id, prompt fingerprint).

    Each entry is a `.reply` file holding the exact reply bytes plus a JSON
    sidecar with request metadata. Writers go through a temp file and an
    atomic rename, so concurrent writers never corrupt an entry.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(model_id: str, fingerprint: str) -> str:
        return hashlib.sha256(f"{model_id}\n{fingerprint}".encode("utf-8")).hexdigest()

    def get(self, model_id: str, fingerprint: str) -> str | None:
        path = self.directory / (self.key(model_id, fingerprint) + ".reply")
        if not path.exists():
            return None
        return path.read_bytes().decode("utf-8")

    def put(self, model_id: str, fingerprint: str, raw_text: str, latency_ms: int = 0) -> None:
        key = self.key(model_id, fingerprint)
        meta = {
            "model_id": model_id,
            "prompt_fingerprint": fingerprint,
            "latency_ms": latency_ms,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        for suffix, data in ((".reply", raw_text.encode("utf-8")), (".meta.json", None)):
            path = self.directory / (key + suffix)
            tmp = path.with_name(path.name + f".tmp{id(self)}")
            if data is None:
                tmp.write_text(json.dumps(meta, ensure_ascii=False, sort_keys=True), encoding="utf-8")
            else:
                tmp.write_bytes(data)
            tmp.replace(path)
