"""Quantitative analyses over a surveyed dataset.

Months are ``"YYYY-MM"`` strings of the UTC commit date. Every series is
gap-free: months without data carry 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Iterable, Sequence

from .dataset import Dataset, DatasetRow
from .ingest import FeatureRecord, FeatureType
from .survey_schema import UNSURE_LABEL, Question
from .validation import (
    CLASSIFICATION,
    IMPLEMENTATION,
    LOGIC,
    MERGE_COMMIT,
    UNRELATED,
    USECASES,
    label_code,
)

BUG_FIX = "Bug fix"
SECURITY_FIX = "Security fix"
VERIFIER = "eBPF verifier"
JIT = "eBPF JIT compiler"
INSTRUCTION_LOGIC = "eBPF instruction logic"

HELPER_TYPES = frozenset({FeatureType.HELPER, FeatureType.KFUNC})
CUMULATIVE_MODES = ("all", "helpers_kfuncs", "excluding_helpers_kfuncs")


@dataclass
class TimelineSeries:
    label: str
    points: list[tuple[str, float]] = field(default_factory=list)
    smoothed: bool = False
    window_months: int | None = None

    @property
    def months(self) -> list[str]:
        return [m for m, _ in self.points]

    @property
    def values(self) -> list[float]:
        return [v for _, v in self.points]


@dataclass(frozen=True)
class RankedCount:
    key: str
    count: int
    share: float


@dataclass
class FeatureComponentMatrix:
    feature_keywords: list[str]
    components: list[str]
    cells: list[list[int]]


# --------------------------------------------------------------------------
# months


def month_of(d: date | datetime) -> str:
    return f"{d.year:04d}-{d.month:02d}"


def _month_index(m: str) -> int:
    y, mo = m.split("-")
    return int(y) * 12 + int(mo) - 1


def _index_month(i: int) -> str:
    return f"{i // 12:04d}-{i % 12 + 1:02d}"


def month_range(first: str, last: str) -> list[str]:
    return [_index_month(i) for i in range(_month_index(first), _month_index(last) + 1)]


def dataset_months(rows: Iterable[DatasetRow]) -> list[str]:
    months = [month_of(r.commit_date) for r in rows]
    if not months:
        return []
    return month_range(min(months), max(months))


# --------------------------------------------------------------------------
# distributions


def _choice_question(dataset: Dataset, question_id: str) -> Question:
    try:
        q = dataset.schema.question(question_id)
    except KeyError:
        raise ValueError(f"unknown question id {question_id!r}") from None
    if not q.kind.is_choice:
        raise ValueError(f"question {question_id!r} is not a choice question")
    return q


def distribution(dataset: Dataset, question_id: str) -> list[tuple[str, int, float]]:
    """(label, count, share) per selected option over ok rows, most frequent first."""
    q = _choice_question(dataset, question_id)
    counts: Counter[str] = Counter()
    for r in dataset.ok_rows:
        counts.update(r.codes(question_id))
    total = sum(counts.values())
    out = [(q.choice(c).label, n, n / total) for c, n in counts.items()]
    out.sort(key=lambda t: (-t[1], t[0]))
    return out


# --------------------------------------------------------------------------
# timelines


def _substantive_usecases(dataset: Dataset) -> set[str]:
    q = dataset.schema.question(USECASES)
    ignored = {MERGE_COMMIT, UNSURE_LABEL}
    return {c.code for c in q.choices if c.label not in ignored}


def clean_for_timeline(dataset: Dataset) -> Dataset:
    """Drop failed rows, rows unrelated to the subsystem, and multi-component merges.

    A row is a merge when it has two or more parents or is classified
    "Merge commit". A merge is multi-component when its use-case answer
    selects more than one option other than "Merge commit"/"I'm not sure";
    single-component merges are kept and counted like regular commits.
    """
    s = dataset.schema
    unrel_impl = label_code(s, IMPLEMENTATION, UNRELATED)
    unrel_logic = label_code(s, LOGIC, UNRELATED)
    merge_cls = label_code(s, CLASSIFICATION, MERGE_COMMIT)
    substantive = _substantive_usecases(dataset)
    kept = []
    for r in dataset.rows:
        if not r.ok:
            continue
        if unrel_impl in r.codes(IMPLEMENTATION) or unrel_logic in r.codes(LOGIC):
            continue
        if r.is_merge or merge_cls in r.codes(CLASSIFICATION):
            if len(substantive.intersection(r.codes(USECASES))) > 1:
                continue
        kept.append(r)
    return dataset.replace_rows(kept)


def _bucket(rows: Iterable[DatasetRow], months: Sequence[str], question_id: str,
            codes: Sequence[str]) -> dict[str, list[float]]:
    pos = {m: i for i, m in enumerate(months)}
    out = {c: [0.0] * len(months) for c in codes}
    for r in rows:
        i = pos.get(month_of(r.commit_date))
        if i is None:
            continue
        for c in r.codes(question_id):
            if c in out:
                out[c][i] += 1
    return out


def monthly_series(dataset: Dataset, question_id: str,
                   months: Sequence[str] | None = None) -> list[TimelineSeries]:
    """One zero-filled monthly count series per option of ``question_id``.

    ``months`` defaults to the dataset's first-to-last month range.
    """
    q = _choice_question(dataset, question_id)
    rows = dataset.ok_rows
    months = list(months) if months is not None else dataset_months(rows)
    counts = _bucket(rows, months, question_id, q.codes)
    return [TimelineSeries(c.label, list(zip(months, counts[c.code]))) for c in q.choices]


def smooth(series: TimelineSeries, window_months: int = 3) -> TimelineSeries:
    """Centered moving average; edge windows shrink to the months available."""
    if window_months < 1:
        raise ValueError("window must be >= 1")
    vals = series.values
    n = len(vals)
    left = (window_months - 1) // 2
    right = window_months // 2
    out = []
    for i in range(n):
        lo, hi = max(0, i - left), min(n, i + right + 1)
        out.append(math.fsum(vals[lo:hi]) / (hi - lo))
    return TimelineSeries(series.label, list(zip(series.months, out)), True, window_months)


def cumulative_features(features: Iterable[FeatureRecord],
                        mode: str = "all") -> list[TimelineSeries]:
    """Per feature type, the running count of features introduced by each month."""
    if mode not in CUMULATIVE_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    feats = list(features)
    if mode == "helpers_kfuncs":
        feats = [f for f in feats if f.feature_type in HELPER_TYPES]
    elif mode == "excluding_helpers_kfuncs":
        feats = [f for f in feats if f.feature_type not in HELPER_TYPES]
    if not feats:
        return []
    months = month_range(min(month_of(f.introduced_date) for f in feats),
                         max(month_of(f.introduced_date) for f in feats))
    pos = {m: i for i, m in enumerate(months)}
    out = []
    for ftype in FeatureType:
        per_month = [0] * len(months)
        for f in feats:
            if f.feature_type is ftype:
                per_month[pos[month_of(f.introduced_date)]] += 1
        if not any(per_month):
            continue
        running, pts = 0, []
        for m, n in zip(months, per_month):
            running += n
            pts.append((m, float(running)))
        out.append(TimelineSeries(ftype.value, pts))
    return out


# --------------------------------------------------------------------------
# bug rankings


def bug_rows(dataset: Dataset, include_security: bool = False) -> list[DatasetRow]:
    s = dataset.schema
    codes = {label_code(s, CLASSIFICATION, BUG_FIX)}
    if include_security:
        codes.add(label_code(s, CLASSIFICATION, SECURITY_FIX))
    return [r for r in dataset.ok_rows if codes.intersection(r.codes(CLASSIFICATION))]


def top_buggy(dataset: Dataset, group_by: str = "file", n: int = 10,
              include_security: bool = False) -> list[RankedCount]:
    """Bug-fix counts per changed file or per implementation component.

    Shares are relative to all bug contributions (every file touched by every
    bug-fix row, or every bug-fix row's component), before truncation to ``n``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if group_by not in ("file", "implementation_component"):
        raise ValueError(f"unknown group_by {group_by!r}")
    counts: Counter[str] = Counter()
    q = dataset.schema.question(IMPLEMENTATION)
    for r in bug_rows(dataset, include_security):
        if group_by == "file":
            counts.update(set(r.files))
        else:
            counts.update(q.choice(c).label for c in r.codes(IMPLEMENTATION))
    total = sum(counts.values())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:n]
    return [RankedCount(k, c, c / total) for k, c in ranked]


def verifier_jit_bug_share(dataset: Dataset, include_security: bool = False) -> float | None:
    """Fraction of bug-fix rows whose implementation component is the verifier or JIT."""
    rows = bug_rows(dataset, include_security)
    if not rows:
        return None
    s = dataset.schema
    target = {label_code(s, IMPLEMENTATION, VERIFIER), label_code(s, IMPLEMENTATION, JIT)}
    hits = sum(1 for r in rows if target.intersection(r.codes(IMPLEMENTATION)))
    return hits / len(rows)


# --------------------------------------------------------------------------
# correlation


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Pearson correlation; None for fewer than two points or zero variance."""
    if len(xs) != len(ys):
        raise ValueError("series lengths differ")
    n = len(xs)
    if n < 2:
        return None
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        return None
    r = math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def _monthly_count(rows: Iterable[DatasetRow], months: Sequence[str], pred) -> list[float]:
    pos = {m: i for i, m in enumerate(months)}
    out = [0.0] * len(months)
    for r in rows:
        i = pos.get(month_of(r.commit_date))
        if i is not None and pred(r):
            out[i] += 1
    return out


def verifier_instruction_correlation(
        dataset: Dataset, window_months: int = 3,
) -> tuple[TimelineSeries, TimelineSeries, float | None]:
    """Smoothed verifier instruction-change and verifier bug-fix series, and their Pearson r."""
    s = dataset.schema
    ver = label_code(s, IMPLEMENTATION, VERIFIER)
    insn = label_code(s, LOGIC, INSTRUCTION_LOGIC)
    bug = label_code(s, CLASSIFICATION, BUG_FIX)
    rows = dataset.ok_rows
    months = dataset_months(rows)
    a = _monthly_count(rows, months,
                       lambda r: ver in r.codes(IMPLEMENTATION) and insn in r.codes(LOGIC))
    b = _monthly_count(rows, months,
                       lambda r: ver in r.codes(IMPLEMENTATION) and bug in r.codes(CLASSIFICATION))
    sa = smooth(TimelineSeries("verifier instruction changes", list(zip(months, a))),
                window_months)
    sb = smooth(TimelineSeries("verifier bug fixes", list(zip(months, b))), window_months)
    return sa, sb, pearson(sa.values, sb.values)


# --------------------------------------------------------------------------
# component views


def component_lifecycle(dataset: Dataset, component_label: str,
                        window_months: int = 3) -> list[TimelineSeries]:
    """Smoothed classification timeline restricted to one implementation component.

    Uses the cleaned dataset's month range, so lifecycles of all components
    sum to the cleaned classification timeline.
    """
    q = dataset.schema.question(IMPLEMENTATION)
    try:
        code = q.code_for(component_label)
    except KeyError:
        raise ValueError(f"unknown implementation component {component_label!r}") from None
    cleaned = clean_for_timeline(dataset)
    months = dataset_months(cleaned.rows)
    subset = cleaned.replace_rows(r for r in cleaned.rows if code in r.codes(IMPLEMENTATION))
    return [smooth(s, window_months) for s in monthly_series(subset, CLASSIFICATION, months)]


def feature_component_matrix(dataset: Dataset,
                             feature_keywords: Sequence[str]) -> FeatureComponentMatrix:
    """Rows mentioning each keyword (subject or body, case-insensitive), by component."""
    if not feature_keywords:
        raise ValueError("feature_keywords must not be empty")
    q = dataset.schema.question(IMPLEMENTATION)
    col = {c.code: j for j, c in enumerate(q.choices)}
    needles = [k.casefold() for k in feature_keywords]
    cells = [[0] * len(q.choices) for _ in feature_keywords]
    for r in dataset.ok_rows:
        text = (r.subject + "\n" + r.body).casefold()
        hits = [i for i, k in enumerate(needles) if k in text]
        if not hits:
            continue
        for c in r.codes(IMPLEMENTATION):
            for i in hits:
                cells[i][col[c]] += 1
    return FeatureComponentMatrix(list(feature_keywords), [c.label for c in q.choices], cells)
