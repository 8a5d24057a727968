"""Command-line entry point.

Subcommands cover the pipeline end to end: ingest and validate a corpus,
carve the library/test split, build an embedding store, inspect
retrievals, run experiments, run ablations, render the shipped reference
tables, and compare finished runs. Exit codes: 0 success, 1 validation
or configuration error, 2 runtime/transport error.

Experiment settings live in a TOML file (see --config): a [run] table
mirroring RunConfig, an [endpoint] table for the model, and optional
[retrieval_provider] / [metric_provider] tables for embeddings. Flags
override file values. Credentials are never written in config files;
token_env names an environment variable (defaults RDRAG_LLM_TOKEN and
RDRAG_EMBED_TOKEN).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .cases import (
    SPLIT_LIBRARY,
    SplitSpec,
    load_corpus,
    save_corpus,
    split_corpus,
    validate_corpus,
)
from .embeddings import (
    DeterministicProvider,
    EmbeddingProvider,
    HttpEmbeddingProvider,
    PrecomputedProvider,
    build_store,
    read_store,
)
from .errors import ConfigurationError, RequestError, TransportError, ValidationError
from .llm import EndpointConfig, MockPolicy
from .prompts import AUGMENTATIONS, BASE_TYPES, PromptKind
from .report import load_published_results, render_category_table, render_method_table, render_scorer_table
from .retrieval import SCORERS, RetrievalConfig, retrieve_cases
from .runner import (
    RunConfig,
    compare_runs,
    load_report,
    prompt_ablation,
    render_run_summary,
    run_experiment,
    scorer_ablation,
)

logger = logging.getLogger(__name__)

DEFAULT_EMBED_TOKEN_ENV = "RDRAG_EMBED_TOKEN"
DEFAULT_LLM_TOKEN_ENV = "RDRAG_LLM_TOKEN"

_RUN_FIELDS = {f.name for f in dataclass_fields(RunConfig)}


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}") from exc


def build_provider(section: dict, default_dim: int = 8) -> EmbeddingProvider:
    """Construct an embedding provider from a config table."""
    kind = section.get("kind", "deterministic")
    if kind == "deterministic":
        return DeterministicProvider(dim=section.get("dim", default_dim), seed=section.get("seed", 0))
    if kind == "http":
        for key in ("url", "model", "dim"):
            if key not in section:
                raise ConfigurationError(f"http embedding provider needs {key!r}")
        token_env = section.get("token_env", DEFAULT_EMBED_TOKEN_ENV)
        return HttpEmbeddingProvider(
            url=section["url"],
            model=section["model"],
            dim=section["dim"],
            token=os.environ.get(token_env) if token_env else None,
            timeout=section.get("timeout", 30.0),
            max_attempts=section.get("max_attempts", 3),
        )
    if kind == "precomputed":
        if "store" not in section:
            raise ConfigurationError("precomputed embedding provider needs 'store'")
        return PrecomputedProvider(read_store(section["store"]))
    raise ConfigurationError(f"unknown embedding provider kind {kind!r}")


def build_endpoint(section: dict) -> EndpointConfig:
    """Construct a model endpoint from a config table."""
    kind = section.get("kind", "mock")
    if kind == "mock":
        policy = MockPolicy(
            kind=section.get("policy", "echo_top1_category"),
            fixed_text=section.get("fixed_text"),
            script=section.get("script"),
        )
        endpoint = EndpointConfig(
            id=section.get("id", "mock"),
            kind="mock",
            model=section.get("model"),
            policy=policy,
        )
    else:
        endpoint = EndpointConfig(
            id=section.get("id", "model"),
            kind=kind,
            model=section.get("model"),
            url=section.get("url"),
            token_env=section.get("token_env", DEFAULT_LLM_TOKEN_ENV),
            timeout=section.get("timeout", 60.0),
            max_attempts=section.get("max_attempts", 3),
            backoff_base=section.get("backoff_base", 0.5),
        )
    endpoint.validate()
    return endpoint


def _normalize_base_type(value: str) -> str:
    if value in BASE_TYPES:
        return value
    if value in ("1", "2", "3", "4"):
        return f"Type{value}"
    raise ValidationError(f"unknown base type {value!r}; expected one of {BASE_TYPES}")


def _parse_kinds(text: str) -> list[PromptKind]:
    """Parse 'Type1,Type4+cot,Type4+rdrag' into prompt kinds."""
    kinds = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        base, _, aug = token.partition("+")
        augmentation = aug.lower() if aug else "none"
        if augmentation not in AUGMENTATIONS:
            raise ValidationError(f"unknown augmentation {aug!r} in {token!r}")
        kinds.append(PromptKind(base_type=_normalize_base_type(base), augmentation=augmentation))
    return kinds


def _assemble_run(args: argparse.Namespace) -> tuple[RunConfig, EndpointConfig, EmbeddingProvider, EmbeddingProvider]:
    raw: dict = {}
    if args.config:
        raw = _load_toml(args.config)
        known = {"run", "endpoint", "retrieval_provider", "metric_provider"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    run_section = dict(raw.get("run", {}))
    bad_keys = set(run_section) - _RUN_FIELDS
    if bad_keys:
        raise ConfigurationError(f"unknown config keys: {sorted('run.' + k for k in bad_keys)}")

    overrides = {
        "corpus_path": args.corpus,
        "taxonomy_path": args.taxonomy,
        "output_dir": args.output_dir,
        "run_id": args.run_id,
        "base_type": _normalize_base_type(args.base_type) if args.base_type else None,
        "cot": args.cot,
        "rdrag": args.rdrag,
        "k": args.k,
        "scorer": args.scorer,
        "store_path": args.store,
        "library_count": args.library_count,
        "cache_dir": args.cache_dir,
        "lenient_match": args.lenient,
        "templates_dir": args.templates_dir,
        "snippet_fields": args.snippet_fields,
    }
    if args.seed is not None:
        overrides["split_seed"] = args.seed
        overrides["retrieval_seed"] = args.seed
    run_section.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**run_section)
    except TypeError as exc:
        raise ConfigurationError(f"incomplete run configuration: {exc}") from exc

    if "endpoint" not in raw:
        raise ConfigurationError("config needs an [endpoint] section (see --help for the schema)")
    endpoint = build_endpoint(raw["endpoint"])

    default_dim = 8
    if cfg.store_path and Path(cfg.store_path).exists():
        default_dim = read_store(cfg.store_path).dim
    retrieval_provider = build_provider(raw.get("retrieval_provider", {}), default_dim=default_dim)
    metric_provider = build_provider(raw.get("metric_provider", {}))
    return cfg, endpoint, retrieval_provider, metric_provider


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, strict=not args.lax)
    findings = validate_corpus(corpus)
    print(f"{len(corpus)} cases, {len(corpus.categories)} categories")
    for finding in findings:
        print(finding)
    if args.out:
        save_corpus(corpus, args.out)
        print(f"wrote normalized corpus to {args.out}")
    return 1 if findings else 0


def cmd_split(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    spec = SplitSpec(library_count=args.library_count, seed=args.seed, strategy=args.strategy)
    tagged = split_corpus(corpus, spec)
    save_corpus(tagged, args.out)
    library = tagged.subset(SPLIT_LIBRARY)
    per_category: dict[str, int] = {c: 0 for c in tagged.categories}
    for case in library:
        per_category[case.category] += 1
    totals = {c: 0 for c in tagged.categories}
    for case in tagged.cases:
        totals[case.category] += 1
    for category in tagged.categories:
        print(f"{category}\t{per_category[category]}/{totals[category]}")
    print(f"library {len(library)}, test {len(tagged) - len(library)} -> {args.out}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    section: dict = {"kind": args.provider}
    if args.provider == "deterministic":
        section.update({"dim": args.dim, "seed": args.seed})
    elif args.provider == "http":
        if not args.url or not args.model:
            raise ConfigurationError("http provider needs --url and --model")
        section.update({"url": args.url, "model": args.model, "dim": args.dim})
    elif args.provider == "precomputed":
        if not args.from_store:
            raise ConfigurationError("precomputed provider needs --from-store")
        section.update({"store": args.from_store})
    provider = build_provider(section)
    store = build_store(
        provider,
        corpus,
        split_filter=args.split,
        out_path=args.store,
        strict=not args.skip_failures,
        max_inflight=args.max_inflight,
    )
    print(f"wrote {len(store)} embeddings (dim {store.dim}) to {args.store}")
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    store = read_store(args.store)
    cfg = RetrievalConfig(k=args.k, scorer=args.scorer, seed=args.seed)
    provider: EmbeddingProvider | None = None
    if args.scorer == "cosine_embedding":
        provider = DeterministicProvider(dim=store.dim, seed=args.provider_seed)
    results = retrieve_cases(args.query, corpus, store, cfg, provider=provider)
    for case, score in results:
        print(f"{case.id}\t{score:.6f}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg, endpoint, retrieval_provider, metric_provider = _assemble_run(args)
    report = run_experiment(
        cfg,
        endpoint,
        retrieval_provider=retrieval_provider,
        metric_provider=metric_provider,
    )
    print(render_run_summary(report))
    print(f"report: {Path(cfg.output_dir) / report.run_id / 'report.json'}")
    if report.status != "completed":
        logger.error("run %s exceeded the failure threshold", report.run_id)
        return 2
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg, endpoint, retrieval_provider, metric_provider = _assemble_run(args)
    if args.scorers:
        scorers = [s.strip() for s in args.scorers.split(",") if s.strip()]
        result = scorer_ablation(
            cfg,
            endpoint,
            scorers,
            retrieval_provider=retrieval_provider,
            metric_provider=metric_provider,
        )
    else:
        kinds = _parse_kinds(args.kinds)
        result = prompt_ablation(
            cfg,
            endpoint,
            kinds,
            retrieval_provider=retrieval_provider,
            metric_provider=metric_provider,
        )
    print(result["table"], end="")
    failed = [r.run_id for r in result["reports"] if r.status != "completed"]
    if failed:
        logger.error("runs exceeded the failure threshold: %s", ", ".join(failed))
        return 2
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    data = load_published_results(args.published)
    sections = []
    if args.table in ("method", "all"):
        sections.append(render_method_table(data["method_comparison"]))
    if args.table in ("scorer", "all"):
        sections.append(render_scorer_table(data["scorer_comparison"]))
    if args.table in ("category", "all"):
        sections.append(render_category_table(data["per_category"]))
    print("\n".join(sections), end="")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    reports = [load_report(p) for p in args.reports]
    out = compare_runs(reports)
    sections = [out["method_table"]]
    if "scorer_table" in out:
        sections.append(out["scorer_table"])
    if "category_table" in out:
        sections.append(out["category_table"])
    print("\n".join(sections), end="")
    return 0


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="TOML config file ([run], [endpoint], provider tables)")
    sub.add_argument("--corpus", help="corpus JSONL path (overrides config)")
    sub.add_argument("--taxonomy", help="taxonomy file, one category per line")
    sub.add_argument("--output-dir", help="directory for run artifacts")
    sub.add_argument("--run-id", help="explicit run id (default: derived from config)")
    sub.add_argument("--base-type", help="prompt base type: Type1..Type4 or 1..4")
    sub.add_argument("--cot", action=argparse.BooleanOptionalAction, default=None,
                     help="append the chain-of-thought directive")
    sub.add_argument("--rdrag", action=argparse.BooleanOptionalAction, default=None,
                     help="append retrieved similar-case snippets")
    sub.add_argument("--k", type=int, help="retrieved cases per query")
    sub.add_argument("--scorer", choices=SCORERS, help="retrieval scorer")
    sub.add_argument("--store", help="embedding store path (required for rdrag)")
    sub.add_argument("--library-count", type=int, help="split the corpus now with this library size")
    sub.add_argument("--seed", type=int, help="sets both split and retrieval seeds")
    sub.add_argument("--cache-dir", help="reply cache directory (enables resumability)")
    sub.add_argument("--lenient", action=argparse.BooleanOptionalAction, default=None,
                     help="lenient category matching")
    sub.add_argument("--templates-dir", help="override the built-in prompt templates")
    sub.add_argument("--snippet-fields", choices=("description", "description+remediation"),
                     help="which case fields go into snippets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdrag",
        description="Retrieval-augmented construction-hazard identification pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("ingest", help="load, validate, and normalize a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", help="write the normalized corpus here")
    p.add_argument("--lax", action="store_true", help="tolerate unknown record keys")
    p.set_defaults(func=cmd_ingest)

    p = commands.add_parser("split", help="carve a corpus into library and test splits")
    p.add_argument("--corpus", required=True)
    p.add_argument("--library-count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=("stratified", "random"), default="stratified")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = commands.add_parser("embed", help="build an embedding store for a split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default=SPLIT_LIBRARY, choices=("library", "test", "unassigned"))
    p.add_argument("--store", required=True, help="output store path")
    p.add_argument("--provider", default="deterministic", choices=("deterministic", "http", "precomputed"))
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--url", help="http provider endpoint")
    p.add_argument("--model", help="http provider model name")
    p.add_argument("--from-store", help="precomputed provider source store")
    p.add_argument("--skip-failures", action="store_true", help="skip cases that fail to embed")
    p.add_argument("--max-inflight", type=int, default=4)
    p.set_defaults(func=cmd_embed)

    p = commands.add_parser("retrieve", help="show the top-k cases for a query image")
    p.add_argument("--query", required=True, help="query image path")
    p.add_argument("--corpus", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--scorer", choices=SCORERS, default="cosine_embedding")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--provider-seed", type=int, default=0, help="deterministic provider seed")
    p.set_defaults(func=cmd_retrieve)

    p = commands.add_parser("run", help="run one experiment and write its report")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = commands.add_parser("ablate", help="prompt-kind or scorer ablation")
    _add_run_flags(p)
    p.add_argument("--kinds", default="Type1,Type2,Type3,Type4",
                   help="comma list like Type1,Type4+cot,Type4+rdrag")
    p.add_argument("--scorers", help="comma list of scorers; runs the retrieval ablation instead")
    p.set_defaults(func=cmd_ablate)

    p = commands.add_parser("report", help="render the shipped reference result tables")
    p.add_argument("--published", required=True, help="reference results JSON")
    p.add_argument("--table", choices=("method", "scorer", "category", "all"), default="all")
    p.set_defaults(func=cmd_report)

    p = commands.add_parser("compare", help="compare finished runs (same split required)")
    p.add_argument("reports", nargs="+", help="report.json paths")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract reserves 2 for
        # runtime failures, so usage problems map to 1.
        return 0 if exc.code == 0 else 1
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TransportError, RequestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
