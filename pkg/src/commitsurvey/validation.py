"""Post-survey consistency checks and expert-review sampling."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterator

from .dataset import Dataset, DatasetRow
from .ingest import format_utc
from .survey_schema import Question, SurveySchema

DEFAULT_THRESHOLD = 0.0005

CLASSIFICATION = "commit_classification"
COMPLEXITY = "commit_complexity"
IMPLEMENTATION = "major_related_implementation_component"
LOGIC = "major_related_logic_component"
USECASES = "usecases_or_submodule_events"

MERGE_COMMIT = "Merge commit"
MERGE_LIKE = "Merge-like (merges multiple branches or features)"
UNRELATED = "Unrelated to eBPF subsystem"

MASK64 = (1 << 64) - 1


@dataclass
class ValidationReport:
    check_name: str
    count_a: int
    count_b: int
    total: int
    threshold: float
    flagged_hashes: list[str] = field(default_factory=list)

    @property
    def discrepancy(self) -> int:
        return abs(self.count_a - self.count_b)

    @property
    def discrepancy_rate(self) -> float:
        return self.discrepancy / self.total if self.total else 0.0

    @property
    def passed(self) -> bool:
        return self.discrepancy_rate <= self.threshold

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(discrepancy=self.discrepancy, discrepancy_rate=self.discrepancy_rate,
                 passed=self.passed)
        return d


def label_code(schema: SurveySchema, question_id: str, label: str) -> str:
    return schema.question(question_id).code_for(label)


def _has(row: DatasetRow, question_id: str, code: str) -> bool:
    return code in row.codes(question_id)


def _pair_check(dataset: Dataset, name: str, qa: str, qb: str, label: str,
                threshold: float) -> ValidationReport:
    ca = label_code(dataset.schema, qa, label)
    cb_label = MERGE_LIKE if qb == COMPLEXITY else label
    cb = label_code(dataset.schema, qb, cb_label)
    rows = dataset.ok_rows
    a = b = 0
    flagged = []
    for r in rows:
        ha, hb = _has(r, qa, ca), _has(r, qb, cb)
        a += ha
        b += hb
        if ha != hb:
            flagged.append(r.hash)
    return ValidationReport(name, a, b, len(rows), threshold, sorted(flagged))


def check_merge_consistency(dataset: Dataset,
                            threshold: float = DEFAULT_THRESHOLD) -> ValidationReport:
    """Compare "Merge commit" classifications against "Merge-like" complexity answers."""
    return _pair_check(dataset, "merge_consistency", CLASSIFICATION, COMPLEXITY, MERGE_COMMIT,
                       threshold)


def check_unrelated_consistency(dataset: Dataset,
                                threshold: float = DEFAULT_THRESHOLD) -> ValidationReport:
    return _pair_check(dataset, "unrelated_consistency", IMPLEMENTATION, LOGIC, UNRELATED,
                       threshold)


@dataclass(frozen=True)
class FlaggedRow:
    hash: str
    reasons: tuple[str, ...]


def row_logic_checks(dataset: Dataset) -> list[FlaggedRow]:
    """Per-row contradictions among ok rows, sorted by hash. Nothing is removed."""
    s = dataset.schema
    merge_cls = label_code(s, CLASSIFICATION, MERGE_COMMIT)
    merge_cx = label_code(s, COMPLEXITY, MERGE_LIKE)
    unrel_impl = label_code(s, IMPLEMENTATION, UNRELATED)
    unrel_logic = label_code(s, LOGIC, UNRELATED)
    out = []
    for r in dataset.ok_rows:
        reasons = []
        is_cls = _has(r, CLASSIFICATION, merge_cls)
        if is_cls != _has(r, COMPLEXITY, merge_cx):
            reasons.append("merge classification disagrees with merge-like complexity")
        if r.is_merge and not is_cls:
            reasons.append("structural merge, non-merge classification")
        if is_cls and not r.is_merge:
            reasons.append("merge classification on a single-parent commit")
        if _has(r, IMPLEMENTATION, unrel_impl) != _has(r, LOGIC, unrel_logic):
            reasons.append("unrelated implementation component disagrees with logic component")
        if reasons:
            out.append(FlaggedRow(r.hash, tuple(reasons)))
    return sorted(out, key=lambda f: f.hash)


# --------------------------------------------------------------------------
# sampling


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood). Reference outputs for seed
    1234567: 6457827717110365317, 3203168211198807973, 9817491932198370423."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next()
            if x < limit:
                return x % n

    def __iter__(self) -> Iterator[int]:
        while True:
            yield self.next()


def sample_indices(n: int, k: int, seed: int) -> list[int]:
    """Partial Fisher-Yates: the first ``k`` positions of a seeded shuffle of range(n)."""
    if k > n:
        raise ValueError(f"sample size {k} exceeds dataset size {n}")
    if k < 0:
        raise ValueError("sample size must be non-negative")
    rng = SplitMix64(seed)
    idx = list(range(n))
    for i in range(k):
        j = i + rng.below(n - i)
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def sample_for_review(dataset: Dataset, k: int, seed: int) -> list[DatasetRow]:
    """Uniform sample without replacement, in draw order, deterministic for ``seed``."""
    return [dataset.rows[i] for i in sample_indices(len(dataset.rows), k, seed)]


def _render(question: Question, row: DatasetRow) -> str:
    v = row.answers.get(question.id)
    if v is None:
        return ""
    if question.kind.is_choice:
        return "; ".join(question.choice(c).label if c in question.codes else c
                         for c in row.codes(question.id))
    return v if isinstance(v, str) else "; ".join(v)


def review_header(schema: SurveySchema) -> list[str]:
    return (["hash", "commit_date", "message", "files"] + list(schema.question_ids)
            + ["status", "expert_rating"])


def write_review_sample(dataset: Dataset, rows: list[DatasetRow], path) -> None:
    schema = dataset.schema
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(review_header(schema))
        for r in rows:
            message = f"{r.subject}\n\n{r.body}" if r.body else r.subject
            w.writerow([r.hash, format_utc(r.commit_date), message, "\n".join(r.files)]
                       + [_render(q, r) for q in schema.questions] + [r.status, ""])


def run_checks(dataset: Dataset, threshold: float = DEFAULT_THRESHOLD) -> dict:
    reports = [check_merge_consistency(dataset, threshold),
               check_unrelated_consistency(dataset, threshold)]
    flagged = row_logic_checks(dataset)
    failed = [r.hash for r in dataset.rows if not r.ok]
    return {
        "schema_id": dataset.schema_id,
        "rows": len(dataset.rows),
        "ok_rows": len(dataset.ok_rows),
        "failed_rows": sorted(failed),
        "checks": [r.to_json() for r in reports],
        "row_flags": [{"hash": f.hash, "reasons": list(f.reasons)} for f in flagged],
        "passed": all(r.passed for r in reports),
    }


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")
