"""Per-commit survey administration: prompts, completion backends, feedback loop."""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from typing import Any, Callable, Iterable, Sequence

import httpx
import tomli

from .ingest import CommitRecord, FileChange, format_utc
from .survey_schema import (
    UNSURE_LABEL,
    Answer,
    QuestionKind,
    SurveySchema,
    UnmappableAnswerError,
    answer_to_json,
    canonicalize_answer,
    contract_json,
    validate_answer,
)

log = logging.getLogger(__name__)

DEFAULT_BODY_BUDGET = 32 * 1024
TRUNCATION_MARKER = "\n[... commit text truncated ...]"
BODY_HEADER = "Message body:"
FILES_HEADER = "Changed files (insertions, deletions, path):"


class ConfigError(ValueError):
    """Fatal configuration problem; aborts a run before any commit is processed."""


class BackendError(RuntimeError):
    """A completion request failed (transport, HTTP status, timeout)."""


# --------------------------------------------------------------------------
# prompts


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str
    # feedback turns appended after the first exchange: (role, content) pairs
    turns: tuple[tuple[str, str], ...] = ()

    def messages(self) -> list[dict[str, str]]:
        msgs = [{"role": "system", "content": self.system_text},
                {"role": "user", "content": self.user_text}]
        msgs.extend({"role": r, "content": c} for r, c in self.turns)
        return msgs

    def with_correction(self, raw_response: str, correction: str) -> Prompt:
        return replace(self, turns=self.turns + (("assistant", raw_response), ("user", correction)))

    @property
    def attempt(self) -> int:
        return 1 + len(self.turns) // 2


def _kind_phrase(kind: QuestionKind) -> str:
    return {
        QuestionKind.SUMMARY_TEXT: "free text",
        QuestionKind.KEYWORD_LIST: "list of keywords",
        QuestionKind.SINGLE_CHOICE: "single choice",
        QuestionKind.MULTI_CHOICE: "multiple choice",
    }[kind]


def render_system_text(schema: SurveySchema) -> str:
    lines = [f"Survey: {schema.title}", ""]
    if schema.description.strip():
        lines += [schema.description.strip(), ""]
    lines.append("Questions:")
    for i, q in enumerate(schema.questions, 1):
        title = f"{q.title} " if q.title else ""
        lines.append(f"{i}. {title}[{q.id}] ({_kind_phrase(q.kind)}): {q.prompt}")
        for c in q.choices:
            lines.append(f"   ({c.code}) {c.label}")
    lines += [
        "",
        "Answering rules:",
        "- Answer every question using only the commit shown.",
        "- For a single-choice question give exactly one option letter.",
        "- For a multiple-choice question give a JSON array of option letters.",
        f"- If the commit does not give enough information, answer \"{UNSURE_LABEL}\" "
        "rather than guess.",
    ]
    for q in schema.questions:
        if q.max_words is not None:
            lines.append(f"- {q.id}: at most {q.max_words} words.")
        if q.max_items is not None:
            lines.append(f"- {q.id}: at most {q.max_items} items.")
    lines += [
        "",
        "Response format: return exactly one JSON object, with no other text, matching "
        "this description:",
        contract_json(schema),
    ]
    return "\n".join(lines) + "\n"


def _numstat_line(f: FileChange) -> str:
    if f.binary:
        return f"-\t-\t{f.path}"
    return f"{f.insertions}\t{f.deletions}\t{f.path}"


def render_user_text(commit: CommitRecord, body_budget: int = DEFAULT_BODY_BUDGET) -> str:
    head = [
        f"Commit: {commit.hash}",
        f"Author: {commit.author_name} <{commit.author_email}>",
        f"Author date: {format_utc(commit.author_date)}",
        f"Commit date: {format_utc(commit.commit_date)}",
        f"Parents: {commit.parent_count}",
        f"Subject: {commit.subject}",
        "",
        FILES_HEADER,
        *(_numstat_line(f) for f in commit.files),
        "",
        BODY_HEADER,
    ]
    text = "\n".join(head) + "\n" + commit.body
    data = text.encode("utf-8")
    if len(data) > body_budget:
        text = data[:body_budget].decode("utf-8", errors="ignore") + TRUNCATION_MARKER
    return text


def build_prompt(schema: SurveySchema, commit: CommitRecord,
                 body_budget: int = DEFAULT_BODY_BUDGET) -> Prompt:
    return Prompt(render_system_text(schema), render_user_text(commit, body_budget))


def correction_message(schema: SurveySchema, violations: Sequence[str]) -> str:
    lines = ["Your previous answer could not be accepted:"]
    lines += [f"{i}. {v}" for i, v in enumerate(violations, 1)]
    lines += ["", "Return one corrected JSON object, with no other text, matching:",
              contract_json(schema)]
    return "\n".join(lines)


# --------------------------------------------------------------------------
# backend configuration


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "scripted"  # "http_chat" | "scripted"
    model: str = "scripted"
    base_url: str | None = None
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    timeout: float = 60.0
    max_retries: int = 3
    requests_per_minute: int = 60
    rules: str | None = None  # rules file path for the scripted backend
    rules_text: str | None = None  # inline rules, overrides ``rules``
    backoff_base: float = 1.0
    backoff_cap: float = 30.0

    def check(self) -> None:
        if self.kind not in ("http_chat", "scripted"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if not 0.0 <= self.temperature <= 1.0:
            raise ConfigError("temperature must be in [0, 1]")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >= 1")
        if self.requests_per_minute < 1:
            raise ConfigError("requests_per_minute must be >= 1")
        if self.kind == "http_chat":
            if not self.base_url:
                raise ConfigError("http_chat backend requires base_url")
            if not self.api_key_env:
                raise ConfigError("http_chat backend requires api_key_env")
            if not os.environ.get(self.api_key_env):
                raise ConfigError(f"API key environment variable {self.api_key_env} is not set")
        elif self.rules is None and self.rules_text is None:
            raise ConfigError("scripted backend requires a rules file")


# --------------------------------------------------------------------------
# scripted backend


_CONDITION_KEYS = {"min_parents", "max_parents", "subject_regex", "subject_prefix",
                   "message_contains", "path_prefix", "all_paths_prefix", "min_lines",
                   "max_lines", "min_files", "max_files"}
_FAULTS = {"malformed_once", "always_malformed", "missing_key_once"}


@dataclass(frozen=True)
class PromptFacts:
    """Commit facts recovered from a rendered prompt's user text."""

    hash: str
    parents: int
    subject: str
    body: str
    files: tuple[FileChange, ...]

    @property
    def lines_changed(self) -> int:
        return sum(f.insertions + f.deletions for f in self.files)


def prompt_facts(user_text: str) -> PromptFacts:
    head, _, body = user_text.partition("\n" + BODY_HEADER + "\n")
    fields: dict[str, str] = {}
    files: list[FileChange] = []
    in_files = False
    for line in head.split("\n"):
        if line == FILES_HEADER:
            in_files = True
            continue
        if in_files:
            if not line:
                in_files = False
                continue
            ins, dels, path = line.split("\t", 2)
            if ins == "-":
                files.append(FileChange(path, 0, 0, True))
            else:
                files.append(FileChange(path, int(ins), int(dels)))
            continue
        key, sep, value = line.partition(": ")
        if sep and key not in fields:
            fields[key] = value
    if body.endswith(TRUNCATION_MARKER):
        body = body[: -len(TRUNCATION_MARKER)]
    return PromptFacts(fields.get("Commit", ""), int(fields.get("Parents", "0") or 0),
                       fields.get("Subject", ""), body, tuple(files))


def _as_list(v: Any) -> list:
    return v if isinstance(v, list) else [v]


@dataclass(frozen=True)
class Rule:
    name: str
    conditions: dict[str, Any]
    answers: dict[str, Any]
    fault: str | None = None

    def matches(self, f: PromptFacts) -> bool:
        c = self.conditions
        if "min_parents" in c and f.parents < c["min_parents"]:
            return False
        if "max_parents" in c and f.parents > c["max_parents"]:
            return False
        if "subject_regex" in c and not re.search(c["subject_regex"], f.subject, re.I):
            return False
        if "subject_prefix" in c:
            s = f.subject.casefold()
            if not any(s.startswith(p.casefold()) for p in _as_list(c["subject_prefix"])):
                return False
        if "message_contains" in c:
            text = (f.subject + "\n" + f.body).casefold()
            if not any(n.casefold() in text for n in _as_list(c["message_contains"])):
                return False
        if "path_prefix" in c:
            prefixes = tuple(_as_list(c["path_prefix"]))
            if not any(x.path.startswith(prefixes) for x in f.files):
                return False
        if "all_paths_prefix" in c:
            prefixes = tuple(_as_list(c["all_paths_prefix"]))
            if not f.files or not all(x.path.startswith(prefixes) for x in f.files):
                return False
        if "min_lines" in c and f.lines_changed < c["min_lines"]:
            return False
        if "max_lines" in c and f.lines_changed > c["max_lines"]:
            return False
        if "min_files" in c and len(f.files) < c["min_files"]:
            return False
        if "max_files" in c and len(f.files) > c["max_files"]:
            return False
        return True


_WORD_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]{2,}")
_STOP = {"the", "and", "for", "with", "from", "into", "that", "this", "when", "add", "fix",
         "use", "remove", "update", "support", "merge", "branch"}


def _derive_keywords(subject: str, limit: int) -> list[str]:
    out: list[str] = []
    for w in _WORD_RE.findall(subject):
        lw = w.lower()
        if lw in _STOP or lw in out:
            continue
        out.append(lw)
        if len(out) == limit:
            break
    return out or ["commit"]


def _resolve_value(spec: Any, f: PromptFacts) -> Any:
    if isinstance(spec, dict):
        if "template" in spec:
            words = spec["template"].format(subject=f.subject, parents=f.parents).split()
            limit = spec.get("max_words", 30)
            return " ".join(words[:limit]) or "No summary available"
        if spec.get("derive") == "subject":
            return _derive_keywords(f.subject, spec.get("max_items", 3))
        raise ConfigError(f"unknown answer directive {spec!r}")
    return spec


@dataclass(frozen=True)
class ScriptedRules:
    id: str
    rules: tuple[Rule, ...]

    @property
    def question_ids(self) -> list[str]:
        seen: list[str] = []
        for r in self.rules:
            for k in r.answers:
                if k not in seen:
                    seen.append(k)
        return seen

    def answer(self, f: PromptFacts) -> tuple[dict[str, Any], str | None]:
        fault = next((r.fault for r in self.rules if r.fault and r.matches(f)), None)
        out: dict[str, Any] = {}
        for qid in self.question_ids:
            for r in self.rules:
                if qid in r.answers and r.matches(f):
                    out[qid] = _resolve_value(r.answers[qid], f)
                    break
        return out, fault


def parse_rules(text: str) -> ScriptedRules:
    """Parse a scripted-backend rules file (TOML, ``[[rule]]`` entries)."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"rules parse error: {exc}") from exc
    raw = doc.get("rule")
    if not isinstance(raw, list) or not raw:
        raise ConfigError("rules file must contain at least one [[rule]]")
    rules = []
    for i, r in enumerate(raw):
        name = r.get("name", f"rule{i + 1}")
        unknown = set(r) - _CONDITION_KEYS - {"name", "answers", "fault"}
        if unknown:
            raise ConfigError(f"rule {name!r}: unknown keys {sorted(unknown)}")
        fault = r.get("fault")
        if fault is not None and fault not in _FAULTS:
            raise ConfigError(f"rule {name!r}: unknown fault {fault!r}")
        if "subject_regex" in r:
            try:
                re.compile(r["subject_regex"])
            except re.error as exc:
                raise ConfigError(f"rule {name!r}: bad subject_regex: {exc}") from exc
        conds = {k: r[k] for k in _CONDITION_KEYS if k in r}
        rules.append(Rule(name, conds, dict(r.get("answers", {})), fault))
    last = rules[-1]
    if last.conditions or last.fault or not last.answers:
        raise ConfigError(f"final rule {last.name!r} must be an unconditional default "
                          "with answers")
    return ScriptedRules(doc.get("id", "rules"), tuple(rules))


def default_rules_text() -> str:
    return (resources.files("commitsurvey") / "data" / "rules" /
            "ebpf_rules.toml").read_text(encoding="utf-8")


def with_fault(fault: str, rules_text: str | None = None) -> str:
    """Rules text with an unconditional ``fault`` rule ahead of every other rule."""
    if fault not in _FAULTS:
        raise ConfigError(f"unknown fault {fault!r}")
    text = default_rules_text() if rules_text is None else rules_text
    at = text.find("[[rule]]")
    if at == -1:
        raise ConfigError("rules text has no [[rule]] entries")
    return f'{text[:at]}[[rule]]\nname = "injected-{fault}"\nfault = "{fault}"\n\n{text[at:]}'


_rules_cache: dict[str, ScriptedRules] = {}
_rules_lock = threading.Lock()


def _load_rules(config: BackendConfig) -> ScriptedRules:
    if config.rules_text is not None:
        text = config.rules_text
    elif config.rules == "builtin:ebpf":
        text = default_rules_text()
    else:
        with open(config.rules, encoding="utf-8") as fh:
            text = fh.read()
    with _rules_lock:
        if text not in _rules_cache:
            _rules_cache[text] = parse_rules(text)
        return _rules_cache[text]


def scripted_complete(rules: ScriptedRules, prompt: Prompt) -> str:
    facts = prompt_facts(prompt.user_text)
    answers, fault = rules.answer(facts)
    retry = bool(prompt.turns)
    if fault == "always_malformed" or (fault == "malformed_once" and not retry):
        return "Sure! Here is my answer: {\"summary\": \"unterminated"
    if fault == "missing_key_once" and not retry and answers:
        answers.pop(next(reversed(answers)))
    return json.dumps(answers, ensure_ascii=False)


# --------------------------------------------------------------------------
# HTTP chat backend


class RateLimiter:
    """Token bucket shared by all workers: ``rate`` tokens per minute, burst ``rate``."""

    def __init__(self, requests_per_minute: int, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.capacity = float(requests_per_minute)
        self.tokens = self.capacity
        self.rate = requests_per_minute / 60.0
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self._last) * self.rate)
                self._last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


@dataclass
class Completion:
    text: str
    usage: dict[str, Any] | None = None


def http_complete(config: BackendConfig, prompt: Prompt,
                  sleep: Callable[[float], None] = time.sleep) -> Completion:
    """POST an OpenAI-compatible chat completion; retry 429/5xx/timeouts with backoff."""
    key = os.environ.get(config.api_key_env or "", "")
    if not key:
        raise ConfigError(f"API key environment variable {config.api_key_env} is not set")
    url = config.base_url.rstrip("/") + "/chat/completions"
    body = {"model": config.model, "temperature": config.temperature,
            "messages": prompt.messages()}
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
    last_error = "no attempt made"
    for attempt in range(config.max_retries):
        delay = min(config.backoff_cap, config.backoff_base * (2 ** attempt))
        try:
            resp = httpx.post(url, json=body, headers=headers, timeout=config.timeout)
        except httpx.TimeoutException as exc:
            last_error = f"timeout: {exc}"
        except httpx.TransportError as exc:
            last_error = f"transport error: {exc}"
        else:
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}: {resp.text[:500]}"
                retry_after = resp.headers.get("retry-after", "")
                if retry_after.replace(".", "", 1).isdigit():
                    delay = min(config.backoff_cap, float(retry_after))
            elif not 200 <= resp.status_code < 300:
                raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
            else:
                try:
                    data = resp.json()
                    text = data["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise BackendError(f"unexpected response shape: {exc}") from exc
                return Completion(text if isinstance(text, str) else "", data.get("usage"))
        if attempt + 1 < config.max_retries:
            log.info("completion retry %d/%d after %.1fs: %s", attempt + 1, config.max_retries,
                     delay, last_error)
            sleep(delay)
    raise BackendError(last_error)


def complete_with_usage(config: BackendConfig, prompt: Prompt) -> Completion:
    if config.kind == "scripted":
        return Completion(scripted_complete(_load_rules(config), prompt))
    if config.kind == "http_chat":
        return http_complete(config, prompt)
    raise ConfigError(f"unknown backend kind {config.kind!r}")


def complete(config: BackendConfig, prompt: Prompt) -> str:
    """Return the backend's raw text for ``prompt``."""
    return complete_with_usage(config, prompt).text


# --------------------------------------------------------------------------
# response parsing


@dataclass
class ParsedResponse:
    answers: tuple[Answer, ...] | None
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.answers is not None


_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*\n?(.*?)```", re.S)


def extract_json_object(raw: str) -> dict | None:
    """Return the first JSON object embedded in ``raw`` (code fences tolerated)."""
    candidates = [m.group(1) for m in _FENCE_RE.finditer(raw)] + [raw]
    decoder = json.JSONDecoder()
    for text in candidates:
        start = text.find("{")
        while start != -1:
            try:
                obj, _ = decoder.raw_decode(text, start)
            except json.JSONDecodeError:
                start = text.find("{", start + 1)
                continue
            if isinstance(obj, dict):
                return obj
            start = text.find("{", start + 1)
    return None


def parse_response(schema: SurveySchema, raw: str) -> ParsedResponse:
    obj = extract_json_object(raw)
    if obj is None:
        return ParsedResponse(None, ["malformed response: no JSON object found"])
    violations: list[str] = []
    answers: list[Answer] = []
    for q in schema.questions:
        if q.id not in obj:
            violations.append(f"missing answer: {q.id}")
            continue
        try:
            a = canonicalize_answer(q, obj[q.id])
        except UnmappableAnswerError as exc:
            violations.append(f"{q.id}: value {exc.raw!r} is not an allowed option")
            continue
        violations.extend(validate_answer(q, a).violations)
        answers.append(a)
    extra = sorted(set(obj) - set(schema.question_ids))
    notes = [f"ignored unknown key {k!r}" for k in extra]
    if violations:
        return ParsedResponse(None, violations, notes)
    return ParsedResponse(tuple(answers), [], notes)


# --------------------------------------------------------------------------
# survey runs


@dataclass(frozen=True)
class SurveyResponse:
    commit_hash: str
    answers: tuple[Answer, ...]
    attempts: int
    model: str
    completed_at: datetime
    status: str  # "ok" | "failed"
    failure_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def answer_json(self, schema: SurveySchema) -> dict[str, Any]:
        by_id = {a.question_id: a for a in self.answers}
        return {q.id: answer_to_json(q, by_id[q.id]) for q in schema.questions if q.id in by_id}


@dataclass
class RunOptions:
    workers: int = 1
    body_budget: int = DEFAULT_BODY_BUDGET
    skip_hashes: frozenset[str] = frozenset()
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)
    completer: Callable[[BackendConfig, Prompt], Completion] | None = None


@dataclass
class RunResult:
    responses: list[SurveyResponse]
    commits: list[CommitRecord]
    log: list[dict[str, Any]]
    skipped: int = 0

    @property
    def failed(self) -> int:
        return sum(1 for r in self.responses if not r.ok)


def survey_commit(config: BackendConfig, schema: SurveySchema, commit: CommitRecord,
                  limiter: RateLimiter, opts: RunOptions) -> tuple[SurveyResponse, list[dict]]:
    completer = opts.completer or complete_with_usage
    prompt = build_prompt(schema, commit, opts.body_budget)
    entries: list[dict] = []
    violations: list[str] = []
    for attempt in range(1, config.max_retries + 1):
        limiter.acquire()
        t0 = time.perf_counter()
        try:
            comp = completer(config, prompt)
        except BackendError as exc:
            raw, usage = "", None
            violations = [f"backend error: {exc}"]
            parsed = None
        else:
            raw, usage = comp.text, comp.usage
            parsed = parse_response(schema, raw)
            violations = parsed.violations
        latency_ms = round((time.perf_counter() - t0) * 1000, 3)
        entry = {"hash": commit.hash, "attempt": attempt,
                 "status": "ok" if parsed is not None and parsed.ok else "invalid",
                 "violations": list(violations), "latency_ms": latency_ms,
                 "prompt_chars": sum(len(m["content"]) for m in prompt.messages()),
                 "response_chars": len(raw)}
        if usage:
            entry["usage"] = usage
        if parsed is not None and parsed.notes:
            entry["notes"] = parsed.notes
            for n in parsed.notes:
                log.info("%s: %s", commit.hash[:12], n)
        entries.append(entry)
        if parsed is not None and parsed.ok:
            return SurveyResponse(commit.hash, parsed.answers, attempt, config.model,
                                  opts.clock(), "ok"), entries
        if attempt < config.max_retries:
            prompt = prompt.with_correction(raw, correction_message(schema, violations))
    reason = "; ".join(violations) or "no valid response"
    return SurveyResponse(commit.hash, (), config.max_retries, config.model, opts.clock(),
                          "failed", reason), entries


def run_survey(config: BackendConfig, schema: SurveySchema, commits: Iterable[CommitRecord],
               opts: RunOptions | None = None) -> RunResult:
    """Survey every commit; output order follows input order for any worker count."""
    opts = opts or RunOptions()
    config.check()
    if config.kind == "scripted" and opts.completer is None:
        _load_rules(config)  # surface rules-file errors before any work starts
    if opts.workers < 1:
        raise ConfigError("workers must be >= 1")
    todo = []
    skipped = 0
    for c in commits:
        if c.hash in opts.skip_hashes:
            skipped += 1
        else:
            todo.append(c)
    limiter = RateLimiter(config.requests_per_minute)

    def one(c: CommitRecord):
        return survey_commit(config, schema, c, limiter, opts)

    if opts.workers == 1:
        results = [one(c) for c in todo]
    else:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            results = list(pool.map(one, todo))
    responses = [r for r, _ in results]
    entries = [e for _, es in results for e in es]
    return RunResult(responses, todo, entries, skipped)


def write_run_log(entries: Iterable[dict], path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e, ensure_ascii=False) + "\n")
