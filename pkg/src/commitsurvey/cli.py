"""Command-line front end: ``commitsurvey ingest|survey|validate|analyze|report``.

Exit codes: 0 success, 1 validation check failed, 2 usage or configuration
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from datetime import date
from pathlib import Path
from typing import Any, Sequence

import tomli

from . import agent, dataset as dsmod, ingest, products, report, validation
from .survey_schema import SchemaError, default_schema, load_survey_schema

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
CHECKPOINT_EVERY = 100

log = logging.getLogger("commitsurvey")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# configuration


def load_config(path: str | None) -> dict[str, dict[str, Any]]:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"config file {path}: {exc}") from None
    for section, values in doc.items():
        if not isinstance(values, dict):
            raise UsageError(f"config file {path}: [{section}] must be a table")
        if "api_key" in values:
            raise UsageError("API keys are read from the environment only, never from config")
    return doc


def _opt(args: argparse.Namespace, cfg: dict, section: str, name: str, default=None):
    """Flag value if given, else config value, else ``default``."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(section, {}).get(name, default)


def _schema(args, cfg):
    path = _opt(args, cfg, "paths", "schema")
    if path is None:
        return default_schema()
    if not Path(path).exists():
        raise UsageError(f"survey schema not found: {path}")
    return load_survey_schema(path)


def _date(s: str | None) -> date | None:
    if s is None or isinstance(s, date):
        return s
    try:
        return date.fromisoformat(s)
    except ValueError:
        raise UsageError(f"invalid date {s!r}, expected YYYY-MM-DD") from None


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args, cfg) -> int:
    repo = _opt(args, cfg, "paths", "repo")
    if repo is None or not Path(repo).is_dir():
        raise UsageError(f"repository path not found: {repo}")
    out = _opt(args, cfg, "paths", "corpus", "commits.jsonl")
    commits = ingest.extract_commits(
        repo, _opt(args, cfg, "ingest", "grep", "bpf"),
        _date(_opt(args, cfg, "ingest", "since")), _date(_opt(args, cfg, "ingest", "until")))
    n = ingest.write_corpus(commits, out)
    print(f"{n} commits")
    return EXIT_OK


_BACKEND_KEYS = {f.name for f in fields(agent.BackendConfig)}


def backend_config(args, cfg) -> agent.BackendConfig:
    values = {k: v for k, v in cfg.get("backend", {}).items() if k in _BACKEND_KEYS}
    unknown = set(cfg.get("backend", {})) - _BACKEND_KEYS - {"workers"}
    if unknown:
        raise UsageError(f"unknown [backend] keys: {sorted(unknown)}")
    for name in ("kind", "model", "base_url", "api_key_env", "temperature", "timeout",
                 "max_retries", "requests_per_minute", "rules"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    kind = values.get("kind", "scripted")
    if kind == "scripted":
        values.setdefault("rules", "builtin:ebpf")
        values.setdefault("requests_per_minute", 1_000_000)
    elif kind == "http_chat":
        values.setdefault("model", "gpt-4o")
    return agent.BackendConfig(**values)


def cmd_survey(args, cfg) -> int:
    corpus = _opt(args, cfg, "paths", "corpus")
    repo = _opt(args, cfg, "paths", "repo")
    if (corpus is None) == (repo is None):
        raise UsageError("give exactly one of --corpus or --repo")
    schema = _schema(args, cfg)
    config = backend_config(args, cfg)
    config.check()
    workers = int(_opt(args, cfg, "backend", "workers", 1))
    if corpus is not None:
        commits = ingest.read_corpus(_existing(corpus, "corpus file"))
    else:
        commits = list(ingest.extract_commits(repo, _opt(args, cfg, "ingest", "grep", "bpf"),
                                              _date(_opt(args, cfg, "ingest", "since")),
                                              _date(_opt(args, cfg, "ingest", "until"))))
    if args.limit is not None:
        commits = commits[: args.limit]
    out = Path(_opt(args, cfg, "paths", "dataset", "commit_survey.csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    base = dsmod.Dataset(schema)
    if args.resume and out.exists():
        base = dsmod.read_csv(out, schema)
    opts = agent.RunOptions(workers=workers,
                            skip_hashes=frozenset(r.hash for r in base.rows))
    dsmod.write_codebook(schema, out.with_name("codebook.csv"))
    log_path = Path(args.log) if args.log else out.with_name("run_log.jsonl")
    append = bool(args.resume)
    merged = base
    surveyed = failed = skipped = 0
    # Checkpoint after every chunk so an interrupted run can be resumed.
    step = max(CHECKPOINT_EVERY, workers)
    for i in range(0, max(len(commits), 1), step):
        result = agent.run_survey(config, schema, commits[i:i + step], opts)
        delta = dsmod.build_dataset(schema, result.commits, result.responses)
        merged = dsmod.merge_datasets(merged, delta)
        dsmod.write_csv(merged, out)
        agent.write_run_log(result.log, log_path, append=append)
        append = True
        surveyed += len(result.responses)
        failed += result.failed
        skipped += result.skipped
    print(f"{surveyed} surveyed, {failed} failed, {skipped} skipped; "
          f"{len(merged.rows)} rows in {out}")
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    schema = _schema(args, cfg)
    data = dsmod.read_csv(_existing(_opt(args, cfg, "paths", "dataset"), "dataset"), schema)
    threshold = float(_opt(args, cfg, "validation", "threshold", validation.DEFAULT_THRESHOLD))
    out = Path(_opt(args, cfg, "paths", "output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    rep = validation.run_checks(data, threshold)
    k = _opt(args, cfg, "validation", "sample")
    k = min(20, len(data.rows)) if k is None else int(k)
    if k > len(data.rows):
        raise UsageError(f"--sample {k} exceeds dataset size {len(data.rows)}")
    seed = int(_opt(args, cfg, "validation", "seed", 0))
    rep["review_sample"] = {"k": k, "seed": seed}
    validation.write_report(rep, out / "validation_report.json")
    validation.write_review_sample(data, validation.sample_for_review(data, k, seed),
                                   out / "review_sample.csv")
    for c in rep["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['check_name']}: {c['count_a']} vs {c['count_b']} of {c['total']} "
              f"(rate {c['discrepancy_rate']:.6f}, threshold {c['threshold']})")
    print(f"{len(rep['row_flags'])} flagged rows, {len(rep['failed_rows'])} failed rows")
    return EXIT_OK if rep["passed"] else EXIT_CHECK_FAILED


def cmd_analyze(args, cfg) -> int:
    schema = _schema(args, cfg)
    data = dsmod.read_csv(_existing(_opt(args, cfg, "paths", "dataset"), "dataset"), schema)
    only = args.only or cfg.get("analysis", {}).get("only")
    selected = [products.parse_selector(s) for s in only] if only else []
    wants_features = not only or any(k == "cumulative_features" for k, _ in selected)
    fpath = _opt(args, cfg, "paths", "features")
    features = None
    if fpath is not None:
        features = ingest.load_feature_table(_existing(fpath, "feature table"))
    elif only and wants_features:
        raise UsageError("cumulative_features requested but no --features file given")
    keywords = _opt(args, cfg, "analysis", "keywords")
    if isinstance(keywords, str):
        keywords = [k for k in keywords.split(",") if k]
    opts = products.AnalysisOptions(
        window=int(_opt(args, cfg, "analysis", "window", 3)),
        top_n=int(_opt(args, cfg, "analysis", "top_n", 10)),
        keywords=tuple(keywords) if keywords else products.DEFAULT_KEYWORDS,
        component=_opt(args, cfg, "analysis", "component", products.DEFAULT_COMPONENT),
        include_security=bool(_opt(args, cfg, "analysis", "include_security", False)),
    )
    if opts.window < 1 or opts.top_n < 1:
        raise UsageError("--window and --top-n must be >= 1")
    out = Path(_opt(args, cfg, "paths", "output_dir", "analysis"))
    manifest = products.run_analyses(data, out, features, only, opts)
    print(f"{len(manifest['products'])} products written to {out}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    out = Path(_opt(args, cfg, "paths", "output_dir", "analysis"))
    if not out.is_dir():
        raise UsageError(f"output directory not found: {out}")
    path = report.build_report(out)
    print(f"report written to {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="commitsurvey",
                                description="Survey commits with an LLM agent and analyse "
                                            "the answers.")
    p.add_argument("--config", help="TOML config file; flags override it")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="extract matching commits to commits.jsonl")
    s.add_argument("--repo")
    s.add_argument("--grep")
    s.add_argument("--since", help="YYYY-MM-DD, inclusive")
    s.add_argument("--until", help="YYYY-MM-DD, inclusive")
    s.add_argument("--out", dest="corpus", help="output corpus (default commits.jsonl)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("survey", help="administer the survey to every commit")
    src = s.add_argument_group("input")
    src.add_argument("--corpus", help="commits.jsonl from `ingest`")
    src.add_argument("--repo", help="survey a repository directly")
    src.add_argument("--grep")
    src.add_argument("--since")
    src.add_argument("--until")
    s.add_argument("--schema", help="survey schema file (default: bundled survey)")
    s.add_argument("--out", dest="dataset", help="dataset CSV (default commit_survey.csv)")
    s.add_argument("--log", help="run log JSONL (default run_log.jsonl beside the dataset)")
    s.add_argument("--resume", action="store_true",
                   help="skip commits already in the output dataset and merge")
    s.add_argument("--limit", type=int, help="survey only the first N commits")
    b = s.add_argument_group("backend")
    b.add_argument("--backend", dest="kind", choices=["scripted", "http_chat"])
    b.add_argument("--rules", help="scripted rules file (default: builtin:ebpf)")
    b.add_argument("--base-url", dest="base_url")
    b.add_argument("--model")
    b.add_argument("--api-key-env", dest="api_key_env",
                   help="environment variable holding the API key (default OPENAI_API_KEY)")
    b.add_argument("--temperature", type=float)
    b.add_argument("--timeout", type=float)
    b.add_argument("--max-retries", dest="max_retries", type=int)
    b.add_argument("--rpm", dest="requests_per_minute", type=int)
    b.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_survey)

    s = sub.add_parser("validate", help="consistency checks and review sample")
    s.add_argument("--dataset")
    s.add_argument("--schema")
    s.add_argument("--threshold", type=float)
    s.add_argument("--sample", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", dest="output_dir")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("analyze", help="write analysis data files, charts and manifest")
    s.add_argument("--dataset")
    s.add_argument("--schema")
    s.add_argument("--features", help="feature table CSV for cumulative timelines")
    s.add_argument("--only", action="append",
                   help="product id, e.g. distribution:commit_classification (repeatable)")
    s.add_argument("--window", type=int)
    s.add_argument("--top-n", dest="top_n", type=int)
    s.add_argument("--keywords", help="comma-separated feature keywords")
    s.add_argument("--component", help="implementation component for the lifecycle view")
    s.add_argument("--include-security", dest="include_security", action="store_true",
                   default=None)
    s.add_argument("--out-dir", dest="output_dir")
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("report", help="render report.html from an analysis directory")
    s.add_argument("--out-dir", dest="output_dir")
    s.set_defaults(func=cmd_report)
    return p


_USAGE_ERRORS = (UsageError, agent.ConfigError, SchemaError, ingest.FeatureTableError,
                 ingest.RepositoryNotFoundError, ingest.ToolNotFoundError,
                 products.ProductError, dsmod.DatasetError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ingest.IngestError, agent.BackendError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
