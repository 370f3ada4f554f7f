from __future__ import annotations

import os
import random
import subprocess
from datetime import datetime, timezone

import pytest

from commitsurvey.dataset import Dataset, DatasetRow
from commitsurvey.ingest import CommitRecord, FileChange
from commitsurvey.survey_schema import QuestionKind, default_schema
from commitsurvey.synthetic import load_bundled_corpus

SCHEMA = default_schema()

FILE_POOL = ["kernel/bpf/verifier.c", "net/core/filter.c", "kernel/bpf/syscall.c",
             "include/linux/bpf.h", "kernel/bpf/core.c", "tools/lib/bpf/libbpf.c",
             "kernel/bpf/btf.c", "a;b.c", "100%.c"]
KEYWORD_POOL = ["bpf_link", "bpf_iter", "token", "spin_lock", "xdp", "nothing"]


@pytest.fixture(scope="session")
def schema():
    return SCHEMA


@pytest.fixture(scope="session")
def corpus():
    return load_bundled_corpus()


def utc(y, m, d=1, hh=12, mm=0, ss=0):
    return datetime(y, m, d, hh, mm, ss, tzinfo=timezone.utc)


def h(n: int) -> str:
    return f"{n:040x}"


def code(qid: str, label: str) -> str:
    return SCHEMA.question(qid).code_for(label)


def make_row(n: int, *, when=None, parents=1, files=("kernel/bpf/verifier.c",),
             subject="bpf: change", body="", status="ok", **answers) -> DatasetRow:
    """A dataset row for the default schema; answers default to a plain bug fix."""
    base = {
        "summary": "A summary",
        "keywords": ("bpf",),
        "commit_classification": "a",
        "commit_complexity": "a",
        "major_related_implementation_component": "a",
        "major_related_logic_component": "a",
        "usecases_or_submodule_events": ("n",),
    }
    base.update(answers)
    if status != "ok":
        base = {}
    return DatasetRow(
        hash=h(n), author_name="A", author_email="a@example.org",
        author_date=when or utc(2020, 1), commit_date=when or utc(2020, 1),
        subject=subject, body=body, parent_count=parents, files=tuple(files),
        insertions=3 * len(files), deletions=len(files), answers=base,
        attempts=1, model="scripted", status=status,
        failure_reason="" if status == "ok" else "gave up",
    )


def make_commit(n: int, subject="bpf: thing", body="", parents=1, files=(), when=None):
    when = when or utc(2021, 3, 4)
    return CommitRecord(h(n), "Dev", "dev@example.org", when, when, subject, body,
                        tuple(h(10_000 + n + i) for i in range(parents)),
                        tuple(FileChange(p, i, d) for p, i, d in files))


def random_dataset(rng: random.Random, n: int, failed_rate: float = 0.05) -> Dataset:
    """Randomised rows over the default schema, for oracle comparisons."""
    rows = []
    for i in range(n):
        answers = {}
        for q in SCHEMA.questions:
            if q.kind is QuestionKind.SUMMARY_TEXT:
                answers[q.id] = "summary text"
            elif q.kind is QuestionKind.KEYWORD_LIST:
                answers[q.id] = ("kw",)
            elif q.kind is QuestionKind.SINGLE_CHOICE:
                answers[q.id] = rng.choice(q.codes)
            else:
                answers[q.id] = tuple(sorted(rng.sample(q.codes, rng.randint(1, 4))))
        when = utc(rng.randint(2017, 2019), rng.randint(1, 12), rng.randint(1, 28),
                   rng.randint(0, 23))
        files = tuple(sorted(set(rng.choice(FILE_POOL) for _ in range(rng.randint(0, 4)))))
        kws = [k for k in KEYWORD_POOL if rng.random() < 0.2]
        subject = "bpf: " + " ".join(kws[:1]) + " update"
        body = " ".join(k.upper() for k in kws[1:])
        status = "failed" if rng.random() < failed_rate else "ok"
        rows.append(make_row(i, when=when, parents=rng.choice([1, 1, 1, 2]), files=files,
                             subject=subject, body=body, status=status, **answers))
    rng.shuffle(rows)
    return Dataset(SCHEMA, rows)


# -- git fixture repository ----------------------------------------------------

# (subject, body, day) for the 12 fixture commits; three mention bpf.
FIXTURE_COMMITS = [
    ("Initial import", "", 1),
    ("bpf: add verifier check", "Adds a bound check.", 2),
    ("net: tidy up", "", 3),
    ("docs: spelling", "", 4),
    ("mm: fix leak", "Unrelated to anything.", 5),
    ("tracing: refactor", "Prepares for BPF use later.", 6),
    ("fs: cleanup", "", 7),
    ("Add selftest", "tools/testing/selftests/Bpf fixes", 8),
    ("sched: tweak", "", 9),
    ("crypto: update", "", 10),
    ("drivers: quirk", "", 11),
    ("final: release", "", 12),
]


def git_run(repo, *args, env=None):
    subprocess.run(["git", "-C", str(repo), *args], check=True, capture_output=True, env=env)


def git_init(repo):
    repo.mkdir(exist_ok=True)
    git_run(repo, "init", "-q")
    git_run(repo, "config", "user.name", "Fixture Dev")
    git_run(repo, "config", "user.email", "dev@example.org")
    git_run(repo, "config", "commit.gpgsign", "false")


def build_fixture_repo(repo) -> list[str]:
    """Create the 12-commit fixture repository; returns hashes oldest first."""
    git_init(repo)
    hashes = []
    for i, (subject, body, day) in enumerate(FIXTURE_COMMITS):
        f = repo / f"file{i}.c"
        f.write_text("x\n" * (i + 1))
        git_run(repo, "add", f.name)
        stamp = f"2021-06-{day:02d}T10:00:00+02:00"
        env = dict(os.environ, GIT_AUTHOR_DATE=stamp, GIT_COMMITTER_DATE=stamp)
        msg = subject + ("\n\n" + body if body else "")
        git_run(repo, "commit", "-q", "-m", msg, env=env)
        out = subprocess.run(["git", "-C", str(repo), "rev-parse", "HEAD"],
                             capture_output=True, text=True, check=True)
        hashes.append(out.stdout.strip())
    return hashes
