"""Experiment orchestration: prompt, call, parse, score, aggregate, report.

A run walks the test split in ascending case-id order, builds the
configured prompt for each case (optionally with retrieved library
snippets), fetches a model reply (through the reply cache when one is
configured), parses it, scores it, and folds the per-sample records into
aggregates. The report JSON is canonical: two runs with the same config
and deterministic providers are byte-identical except the timing block.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .cases import (
    SPLIT_LIBRARY,
    SPLIT_TEST,
    SPLIT_UNASSIGNED,
    Case,
    Corpus,
    SplitSpec,
    load_corpus,
    load_taxonomy,
    split_corpus,
)
from .embeddings import EmbeddingProvider, EmbeddingStore, read_store
from .errors import ConfigurationError, DataError, RequestError, TransportError, ValidationError
from .llm import (
    PARSE_FAILED,
    EndpointConfig,
    ReplyCache,
    complete,
    match_category,
    parse_reply,
)
from .metrics import (
    TOKENIZER_ID,
    EvalRecord,
    bert_similarity,
    category_accuracy,
    fit_tfidf,
    mean_bert,
    mean_tfidf,
    per_category_accuracy,
    tfidf_similarity,
)
from .prompts import (
    AssembledPrompt,
    PromptKind,
    PromptTemplates,
    SnippetSource,
    prompt_fingerprint,
    render_prompt,
)
from .report import (
    CategoryRow,
    MethodModelRow,
    ScorerRow,
    canonical_json,
    format_score,
    render_category_table,
    render_method_table,
    render_scorer_table,
    render_table,
)
from .retrieval import RetrievalConfig, retrieve_cases

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SNIPPET_FIELD_CHOICES = ("description", "description+remediation")

# Ablation row labels: embedding retrieval is the headline method, the
# perceptual scorer stands in for a learned image metric, and random
# retrieval is the control group.
SCORER_LABELS = {
    "cosine_embedding": "RDRAG",
    "perceptual_baseline": "LPIPS",
    "random": "Base",
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, mirrored one-to-one by the TOML config file."""

    corpus_path: str
    output_dir: str
    run_id: str = ""
    taxonomy_path: str | None = None
    base_type: str = "Type4"
    cot: bool = False
    rdrag: bool = False
    snippet_fields: str = "description"
    k: int = 1
    scorer: str = "cosine_embedding"
    retrieval_seed: int = 0
    store_path: str | None = None
    library_count: int | None = None
    split_seed: int = 0
    split_strategy: str = "stratified"
    lenient_match: bool = False
    cache_dir: str | None = None
    max_inflight: int = 4
    failure_threshold: float = 0.05
    templates_dir: str | None = None

    def prompt_kind(self) -> PromptKind:
        if self.cot and self.rdrag:
            raise ValidationError("cot and rdrag augmentations are mutually exclusive")
        augmentation = "rdrag" if self.rdrag else ("cot" if self.cot else "none")
        return PromptKind(base_type=self.base_type, augmentation=augmentation)

    def validate(self) -> None:
        self.prompt_kind().validate()
        RetrievalConfig(k=self.k, scorer=self.scorer, seed=self.retrieval_seed).validate()
        if self.snippet_fields not in SNIPPET_FIELD_CHOICES:
            raise ValidationError(
                f"snippet_fields must be one of {SNIPPET_FIELD_CHOICES}, got {self.snippet_fields!r}"
            )
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ValidationError(f"failure_threshold must be in [0, 1], got {self.failure_threshold}")
        if self.max_inflight < 1:
            raise ValidationError(f"max_inflight must be >= 1, got {self.max_inflight}")
        if not Path(self.corpus_path).exists():
            raise ConfigurationError(f"corpus file not found: {self.corpus_path}")
        if self.taxonomy_path is not None and not Path(self.taxonomy_path).exists():
            raise ConfigurationError(f"taxonomy file not found: {self.taxonomy_path}")
        if self.rdrag:
            if not self.store_path:
                raise ConfigurationError("retrieval-augmented run requires an embedding store")
            if not Path(self.store_path).exists():
                raise ConfigurationError(f"embedding store not found: {self.store_path}")
        if self.templates_dir is not None and not Path(self.templates_dir).is_dir():
            raise ConfigurationError(f"templates directory not found: {self.templates_dir}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunReport:
    """Everything a run produced; aggregates recompute from the records."""

    run_id: str
    schema_version: int
    method: str
    model_id: str
    config: dict
    taxonomy: tuple[str, ...]
    taxonomy_fingerprint: str
    split_fingerprint: str
    library_size: int
    sample_count: int
    category_accuracy: float
    mean_bert: float
    mean_tfidf: float
    per_category: dict[str, tuple[int, float | None]]
    records: tuple[EvalRecord, ...]
    failures: tuple[dict, ...]
    status: str
    tokenizer_id: str
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "schema_version": self.schema_version,
            "method": self.method,
            "model_id": self.model_id,
            "config": self.config,
            "taxonomy": list(self.taxonomy),
            "taxonomy_fingerprint": self.taxonomy_fingerprint,
            "split_fingerprint": self.split_fingerprint,
            "library_size": self.library_size,
            "sample_count": self.sample_count,
            "aggregates": {
                "category_accuracy": self.category_accuracy,
                "mean_bert": self.mean_bert,
                "mean_tfidf": self.mean_tfidf,
            },
            "per_category": {
                c: {"count": n, "accuracy": acc} for c, (n, acc) in self.per_category.items()
            },
            "records": [asdict(r) for r in self.records],
            "failures": list(self.failures),
            "status": self.status,
            "tokenizer_id": self.tokenizer_id,
            "timing": self.timing,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        records = tuple(EvalRecord(**r) for r in data["records"])
        per_category = {
            c: (v["count"], v["accuracy"]) for c, v in data["per_category"].items()
        }
        agg = data["aggregates"]
        return cls(
            run_id=data["run_id"],
            schema_version=data["schema_version"],
            method=data["method"],
            model_id=data["model_id"],
            config=data["config"],
            taxonomy=tuple(data["taxonomy"]),
            taxonomy_fingerprint=data["taxonomy_fingerprint"],
            split_fingerprint=data["split_fingerprint"],
            library_size=data["library_size"],
            sample_count=data["sample_count"],
            category_accuracy=agg["category_accuracy"],
            mean_bert=agg["mean_bert"],
            mean_tfidf=agg["mean_tfidf"],
            per_category=per_category,
            records=records,
            failures=tuple(data["failures"]),
            status=data["status"],
            tokenizer_id=data["tokenizer_id"],
            timing=data.get("timing", {}),
        )


def load_report(path: str | Path) -> RunReport:
    path = Path(path)
    try:
        return RunReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"report {path} is malformed: {exc}") from exc


def fingerprint_ids(ids: list[str]) -> str:
    return hashlib.sha256("\n".join(sorted(ids)).encode("utf-8")).hexdigest()


def fingerprint_taxonomy(taxonomy: tuple[str, ...]) -> str:
    return hashlib.sha256("\n".join(taxonomy).encode("utf-8")).hexdigest()


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-") or "model"


def derive_run_id(cfg: RunConfig, endpoint: EndpointConfig) -> str:
    if cfg.run_id:
        return cfg.run_id
    digest = hashlib.sha256(
        canonical_json({"config": cfg.to_dict(), "model": endpoint.model_id}).encode("utf-8")
    ).hexdigest()[:8]
    label = cfg.prompt_kind().label.lower()
    return f"{label}-{_slug(endpoint.model_id)}-{digest}"


def _resolve_split(cfg: RunConfig, corpus: Corpus) -> Corpus:
    if cfg.library_count is not None:
        spec = SplitSpec(
            library_count=cfg.library_count, seed=cfg.split_seed, strategy=cfg.split_strategy
        )
        return split_corpus(corpus, spec)
    untagged = [c.id for c in corpus.cases if c.split == SPLIT_UNASSIGNED]
    if untagged:
        raise ConfigurationError(
            f"corpus has {len(untagged)} cases without split tags and no split spec was given"
        )
    return corpus


def _snippet_text(case: Case, snippet_fields: str) -> str:
    if snippet_fields == "description+remediation" and case.remediation:
        return f"{case.description}；整改意见：{case.remediation}"
    return case.description


def _check_store_matches_library(store: EmbeddingStore, library: tuple[Case, ...]) -> None:
    store_ids = set(store.entries)
    library_ids = {c.id for c in library}
    missing = sorted(library_ids - store_ids)
    extra = sorted(store_ids - library_ids)
    if missing:
        raise ConfigurationError(
            f"embedding store is missing {len(missing)} library cases: {missing[:5]}"
        )
    if extra:
        raise ConfigurationError(
            f"embedding store has {len(extra)} entries outside the library split: {extra[:5]}"
        )


@dataclass
class _Pending:
    case: Case
    prompt: AssembledPrompt
    fingerprint: str
    reply_text: str | None = None
    cache_hit: bool = False
    latency_ms: int = 0
    error: str | None = None


def _fetch_replies(
    pending: list[_Pending],
    endpoint: EndpointConfig,
    cache: ReplyCache | None,
    max_inflight: int,
) -> tuple[int, int]:
    """Fill reply_text on each pending sample; returns (llm_calls, cache_hits)."""
    misses: list[_Pending] = []
    cache_hits = 0
    for item in pending:
        if cache is not None:
            hit = cache.get(endpoint.model_id, item.fingerprint)
            if hit is not None:
                item.reply_text = hit
                item.cache_hit = True
                cache_hits += 1
                continue
        misses.append(item)

    def fetch(item: _Pending) -> None:
        try:
            reply = complete(endpoint, item.prompt, fingerprint=item.fingerprint)
        except (TransportError, RequestError) as exc:
            item.error = f"{type(exc).__name__}: {exc}"
            logger.warning("sample %s failed: %s", item.case.id, item.error)
            return
        item.reply_text = reply.raw_text
        item.latency_ms = reply.latency_ms
        if cache is not None:
            cache.put(endpoint.model_id, item.fingerprint, reply.raw_text, reply.latency_ms)

    # Mock policies mutate a call counter, so they stay single-threaded.
    workers = 1 if endpoint.kind == "mock" else max_inflight
    if workers == 1:
        for item in misses:
            fetch(item)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fetch, misses))
    return len(misses), cache_hits


def run_experiment(
    cfg: RunConfig,
    endpoint: EndpointConfig,
    retrieval_provider: EmbeddingProvider | None = None,
    metric_provider: EmbeddingProvider | None = None,
    write_artifacts: bool = True,
) -> RunReport:
    """Run one full experiment and (by default) write its report artifacts.

    Per-sample transport failures degrade that sample to incorrect with
    zero similarities; the run is marked failed when the failure fraction
    exceeds cfg.failure_threshold. Validation problems abort instead.
    """
    started = time.time()
    started_clock = time.monotonic()
    cfg.validate()
    endpoint.validate()
    if metric_provider is None:
        raise ConfigurationError("a text embedding provider is required for metrics")

    corpus = load_corpus(cfg.corpus_path)
    taxonomy = (
        load_taxonomy(cfg.taxonomy_path) if cfg.taxonomy_path is not None else corpus.categories
    )
    corpus = _resolve_split(cfg, corpus)
    library = corpus.subset(SPLIT_LIBRARY)
    test_cases = sorted(corpus.subset(SPLIT_TEST), key=lambda c: c.id)
    if not test_cases:
        raise DataError("test split is empty")

    kind = cfg.prompt_kind()
    templates = PromptTemplates.load(cfg.templates_dir)

    store: EmbeddingStore | None = None
    if cfg.rdrag:
        if not library:
            raise DataError("library split is empty")
        store = read_store(cfg.store_path)
        _check_store_matches_library(store, library)

    retrieval_cfg = RetrievalConfig(k=cfg.k, scorer=cfg.scorer, seed=cfg.retrieval_seed)
    pending: list[_Pending] = []
    for case in test_cases:
        snippets: tuple[str, ...] = ()
        sources: tuple[SnippetSource, ...] = ()
        if cfg.rdrag:
            assert store is not None
            retrieved = retrieve_cases(
                corpus.image_path(case),
                corpus,
                store,
                retrieval_cfg,
                provider=retrieval_provider,
                query_key=case.id,
            )
            snippets = tuple(_snippet_text(c, cfg.snippet_fields) for c, _ in retrieved)
            sources = tuple(SnippetSource(case_id=c.id, category=c.category) for c, _ in retrieved)
        prompt = render_prompt(
            kind,
            image_ref=str(corpus.image_path(case)),
            categories=taxonomy if kind.wants_categories else (),
            snippets=snippets,
            snippet_sources=sources,
            templates=templates,
        )
        pending.append(_Pending(case=case, prompt=prompt, fingerprint=prompt_fingerprint(prompt)))

    cache = ReplyCache(cfg.cache_dir) if cfg.cache_dir else None
    llm_calls, cache_hits = _fetch_replies(pending, endpoint, cache, cfg.max_inflight)

    references = [item.case.description for item in pending]
    generated: list[str] = []
    parsed_list = []
    for item in pending:
        if item.error is not None:
            parsed_list.append(None)
            generated.append("")
            continue
        parsed = parse_reply(item.reply_text or "")
        parsed_list.append(parsed)
        generated.append(parsed.description or "")
    tfidf_model = fit_tfidf(references + generated)

    records: list[EvalRecord] = []
    failures: list[dict] = []
    for item, parsed, text in zip(pending, parsed_list, generated):
        if parsed is None:
            records.append(
                EvalRecord(
                    case_id=item.case.id,
                    category=item.case.category,
                    predicted_category=None,
                    parse_status=PARSE_FAILED,
                    correct=False,
                    bert=0.0,
                    tfidf=0.0,
                )
            )
            failures.append({"case_id": item.case.id, "error": item.error})
            continue
        correct = match_category(parsed, item.case.category, taxonomy, lenient=cfg.lenient_match)
        records.append(
            EvalRecord(
                case_id=item.case.id,
                category=item.case.category,
                predicted_category=parsed.category,
                parse_status=parsed.parse_status,
                correct=correct,
                bert=bert_similarity(metric_provider, text, item.case.description),
                tfidf=tfidf_similarity(tfidf_model, text, item.case.description),
            )
        )

    failure_fraction = len(failures) / len(records)
    status = "failed" if failure_fraction > cfg.failure_threshold else "completed"
    if failures:
        logger.warning(
            "%d/%d samples failed (threshold %.0f%%), run status: %s",
            len(failures),
            len(records),
            cfg.failure_threshold * 100,
            status,
        )

    report = RunReport(
        run_id=derive_run_id(cfg, endpoint),
        schema_version=SCHEMA_VERSION,
        method=kind.label,
        model_id=endpoint.model_id,
        config=cfg.to_dict(),
        taxonomy=taxonomy,
        taxonomy_fingerprint=fingerprint_taxonomy(taxonomy),
        split_fingerprint=fingerprint_ids([c.id for c in test_cases]),
        library_size=len(library),
        sample_count=len(records),
        category_accuracy=category_accuracy(records),
        mean_bert=mean_bert(records),
        mean_tfidf=mean_tfidf(records),
        per_category=per_category_accuracy(records, taxonomy),
        records=tuple(records),
        failures=tuple(failures),
        status=status,
        tokenizer_id=TOKENIZER_ID,
        timing={
            "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "wall_ms": int((time.monotonic() - started_clock) * 1000),
            "llm_calls": llm_calls,
            "cache_hits": cache_hits,
        },
    )
    if write_artifacts:
        _write_run_artifacts(report, pending, Path(cfg.output_dir))
    return report


def render_run_summary(report: RunReport) -> str:
    """One-row method table plus the per-category breakdown."""
    row = MethodModelRow(
        method=report.method,
        model=report.model_id,
        accuracy=report.category_accuracy,
        bert=report.mean_bert,
        tfidf=report.mean_tfidf,
    )
    category_rows = [
        CategoryRow(category=c, count=n, base_accuracy=None, rdrag_accuracy=acc)
        for c, (n, acc) in sorted(report.per_category.items())
    ]
    # Single-run category table reuses the comparison shape with one column
    # filled; the header names the method.
    lines = [render_method_table([row])]
    if category_rows:
        lines.append("")
        lines.append(render_category_table(category_rows))
    return "\n".join(lines)


def _write_run_artifacts(report: RunReport, pending: list[_Pending], output_dir: Path) -> None:
    run_dir = output_dir / report.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    report_path = run_dir / "report.json"
    tmp = report_path.with_name(report_path.name + ".tmp")
    tmp.write_text(canonical_json(report.to_dict()), encoding="utf-8")
    tmp.replace(report_path)
    (run_dir / "summary.txt").write_text(render_run_summary(report), encoding="utf-8")

    ledger_path = output_dir / "run_ledger.jsonl"
    with ledger_path.open("a", encoding="utf-8") as fh:
        for item in pending:
            reply_fp = (
                hashlib.sha256(item.reply_text.encode("utf-8")).hexdigest()
                if item.reply_text is not None
                else ""
            )
            entry = {
                "run_id": report.run_id,
                "case_id": item.case.id,
                "prompt_fingerprint": item.fingerprint,
                "reply_fingerprint": reply_fp,
                "cache_hit": item.cache_hit,
                "latency_ms": item.latency_ms,
            }
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
    logger.info("run %s: %s", report.run_id, report_path)


def compare_runs(reports: list[RunReport]) -> dict:
    """Cross-run comparison tables; refuses to mix splits or taxonomies.

    Always renders the (method, model) score table. When the inputs
    include runs differing only by retrieval scorer, a scorer ablation
    table is added; when a Base run and an RDRAG run are both present, a
    per-category Base-vs-RDRAG table is added.
    """
    if not reports:
        raise DataError("no reports to compare")
    first = reports[0]
    for other in reports[1:]:
        if other.split_fingerprint != first.split_fingerprint:
            raise ConfigurationError(
                "reports use different test splits: "
                f"{first.split_fingerprint} vs {other.split_fingerprint}"
            )
        if other.taxonomy_fingerprint != first.taxonomy_fingerprint:
            raise ConfigurationError(
                "reports use different taxonomies: "
                f"{first.taxonomy_fingerprint} vs {other.taxonomy_fingerprint}"
            )

    method_rows = [
        MethodModelRow(
            method=r.method,
            model=r.model_id,
            accuracy=r.category_accuracy,
            bert=r.mean_bert,
            tfidf=r.mean_tfidf,
        )
        for r in reports
    ]
    out: dict = {"method_table": render_method_table(method_rows)}

    rdrag_reports = [r for r in reports if r.method == "RDRAG"]
    scorers = {r.config.get("scorer") for r in rdrag_reports}
    if len(rdrag_reports) >= 2 and len(scorers) >= 2:
        scorer_rows = [
            ScorerRow(
                model=r.model_id,
                scorer=SCORER_LABELS.get(r.config.get("scorer", ""), r.config.get("scorer", "?")),
                accuracy=r.category_accuracy,
                bert=r.mean_bert,
                tfidf=r.mean_tfidf,
            )
            for r in rdrag_reports
        ]
        out["scorer_table"] = render_scorer_table(scorer_rows)

    base_runs = [r for r in reports if r.method == "Base"]
    if len(base_runs) == 1 and len(rdrag_reports) == 1:
        base, aug = base_runs[0], rdrag_reports[0]
        category_rows = []
        for category in first.taxonomy:
            count, base_acc = base.per_category.get(category, (0, None))
            _, rdrag_acc = aug.per_category.get(category, (0, None))
            category_rows.append(
                CategoryRow(
                    category=category,
                    count=count,
                    base_accuracy=base_acc,
                    rdrag_accuracy=rdrag_acc,
                )
            )
        out["category_table"] = render_category_table(category_rows)
    return out


def prompt_ablation(
    cfg: RunConfig,
    endpoint: EndpointConfig,
    kinds: list[PromptKind],
    retrieval_provider: EmbeddingProvider | None = None,
    metric_provider: EmbeddingProvider | None = None,
    write_artifacts: bool = True,
) -> dict:
    """Run the same experiment under several prompt kinds and tabulate.

    Rows report the text-similarity means per kind, the protocol used to
    pick a base prompt before the method comparison.
    """
    if not kinds:
        raise ValidationError("prompt ablation needs at least one prompt kind")
    reports: list[RunReport] = []
    for kind in kinds:
        kind.validate()
        suffix = kind.base_type.lower() + (
            f"-{kind.augmentation}" if kind.augmentation != "none" else ""
        )
        sub_cfg = replace(
            cfg,
            run_id=f"{cfg.run_id}-{suffix}" if cfg.run_id else "",
            base_type=kind.base_type,
            cot=kind.augmentation == "cot",
            rdrag=kind.augmentation == "rdrag",
        )
        reports.append(
            run_experiment(
                sub_cfg,
                endpoint,
                retrieval_provider=retrieval_provider,
                metric_provider=metric_provider,
                write_artifacts=write_artifacts,
            )
        )

    headers = ["提示词", "BERT相似度(%)", "TF-IDF相似度(%)"]
    rows = []
    for kind, report in zip(kinds, reports):
        label = kind.base_type + (f"+{kind.label}" if kind.augmentation != "none" else "")
        rows.append([label, format_score(report.mean_bert), format_score(report.mean_tfidf)])
    table = render_table(headers, rows, ["left", "right", "right"])
    return {"reports": reports, "table": table}


def scorer_ablation(
    cfg: RunConfig,
    endpoint: EndpointConfig,
    scorers: list[str],
    retrieval_provider: EmbeddingProvider | None = None,
    metric_provider: EmbeddingProvider | None = None,
    write_artifacts: bool = True,
) -> dict:
    """Run retrieval-augmented experiments under several scorers and compare."""
    if not scorers:
        raise ValidationError("scorer ablation needs at least one scorer")
    reports: list[RunReport] = []
    for scorer in scorers:
        sub_cfg = replace(
            cfg,
            run_id=f"{cfg.run_id}-{scorer}" if cfg.run_id else "",
            cot=False,
            rdrag=True,
            scorer=scorer,
        )
        reports.append(
            run_experiment(
                sub_cfg,
                endpoint,
                retrieval_provider=retrieval_provider,
                metric_provider=metric_provider,
                write_artifacts=write_artifacts,
            )
        )
    comparison = compare_runs(reports)
    return {"reports": reports, "table": comparison.get("scorer_table", comparison["method_table"])}
