"""Commit history extraction and feature-table loading.

Commits are read by shelling out to ``git log`` with unit-separator bytes
between fields (0x1F) and a record-separator byte (0x1E) before each commit,
followed by ``--numstat`` lines. The exact format string is
:data:`GIT_LOG_FORMAT`.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import subprocess
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

log = logging.getLogger(__name__)

RS = "\x1e"
US = "\x1f"
# hash, parents, author name, author email, author date, committer date, raw message
GIT_LOG_FORMAT = "%x1e%H%x1f%P%x1f%an%x1f%ae%x1f%aI%x1f%cI%x1f%B%x1f"

FEATURE_HEADER = ["name", "feature_type", "introduced_date", "introduced_commit"]


class IngestError(RuntimeError):
    pass


class ToolNotFoundError(IngestError):
    pass


class RepositoryNotFoundError(IngestError):
    pass


class GitCommandError(IngestError):
    def __init__(self, args: list[str], returncode: int, stderr: str):
        super().__init__(f"git exited {returncode}: {stderr.strip()}")
        self.args_ = args
        self.returncode = returncode
        self.stderr = stderr


class MalformedRecordError(IngestError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class FeatureTableError(ValueError):
    pass


@dataclass(frozen=True)
class FileChange:
    path: str
    insertions: int = 0
    deletions: int = 0
    binary: bool = False


@dataclass(frozen=True)
class CommitRecord:
    hash: str
    author_name: str
    author_email: str
    author_date: datetime
    commit_date: datetime
    subject: str
    body: str
    parents: tuple[str, ...] = ()
    files: tuple[FileChange, ...] = ()

    @property
    def parent_count(self) -> int:
        return len(self.parents)

    @property
    def is_merge(self) -> bool:
        return self.parent_count >= 2

    @property
    def message(self) -> str:
        return f"{self.subject}\n\n{self.body}" if self.body else self.subject


class FeatureType(str, Enum):
    HELPER = "helper"
    KFUNC = "kfunc"
    MAP_TYPE = "map_type"
    PROG_TYPE = "prog_type"
    ATTACH_TYPE = "attach_type"
    LINK_TYPE = "link_type"
    EVENT = "event"
    FLAG = "flag"
    OTHER = "other"


@dataclass(frozen=True)
class FeatureRecord:
    name: str
    feature_type: FeatureType
    introduced_date: date
    introduced_commit: str | None = None


# --------------------------------------------------------------------------
# timestamps


def to_utc(ts: str) -> datetime:
    """Parse an ISO-8601/RFC 3339 timestamp and normalise it to UTC."""
    if ts.endswith("Z"):
        ts = ts[:-1] + "+00:00"
    dt = datetime.fromisoformat(ts)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_utc(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# record parsing


def split_message(message: str) -> tuple[str, str]:
    """Split a raw commit message into (subject, body) at the first blank line."""
    message = message.rstrip("\n")
    head, sep, body = message.partition("\n\n")
    subject = " ".join(line.strip() for line in head.splitlines()) if "\n" in head else head
    return subject, body


def _parse_numstat(lines: Iterable[str], offset: int) -> tuple[FileChange, ...]:
    out = []
    for line in lines:
        if not line.strip():
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3 or not parts[2]:
            raise MalformedRecordError(f"bad numstat line {line!r}", offset)
        ins, dels, path = parts
        if ins == "-" and dels == "-":
            out.append(FileChange(path, 0, 0, True))
            continue
        try:
            out.append(FileChange(path, int(ins), int(dels)))
        except ValueError:
            raise MalformedRecordError(f"bad numstat counts {line!r}", offset) from None
    return tuple(out)


def parse_commit_record(raw_record: str, offset: int = 0) -> CommitRecord:
    """Parse one git-log record (text after the 0x1E separator)."""
    fields = raw_record.split(US)
    if len(fields) != 8:
        raise MalformedRecordError(f"expected 8 fields, found {len(fields)}", offset)
    h, parents, an, ae, adate, cdate, message, numstat = fields
    h = h.strip()
    if len(h) != 40 or any(c not in "0123456789abcdef" for c in h):
        raise MalformedRecordError(f"bad commit hash {h!r}", offset)
    try:
        author_date, commit_date = to_utc(adate), to_utc(cdate)
    except ValueError:
        raise MalformedRecordError(f"bad date in record {h}", offset) from None
    subject, body = split_message(message)
    return CommitRecord(
        hash=h,
        author_name=an,
        author_email=ae,
        author_date=author_date,
        commit_date=commit_date,
        subject=subject,
        body=body,
        parents=tuple(parents.split()),
        files=_parse_numstat(numstat.split("\n"), offset),
    )


def parse_git_log(output: str) -> Iterator[CommitRecord]:
    offset = 0
    for chunk in output.split(RS):
        if chunk.strip():
            yield parse_commit_record(chunk, offset)
        offset += len(chunk) + 1


# --------------------------------------------------------------------------
# git


def _git(repo: Path, *args: str) -> subprocess.CompletedProcess:
    git = shutil.which("git")
    if git is None:
        raise ToolNotFoundError("git executable not found on PATH")
    cmd = [git, "-C", str(repo), *args]
    env = dict(os.environ, LC_ALL="C", GIT_PAGER="cat")
    return subprocess.run(cmd, capture_output=True, env=env)


def _matches(commit: CommitRecord, needle: str) -> bool:
    n = needle.casefold()
    return n in commit.subject.casefold() or n in commit.body.casefold()


def _day_start(d: date) -> datetime:
    return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)


def extract_commits(repo_path, grep_pattern: str = "bpf", since: date | None = None,
                    until: date | None = None) -> Iterator[CommitRecord]:
    """Yield commits whose message contains ``grep_pattern`` (case-insensitive).

    ``since`` and ``until`` are inclusive calendar dates on the UTC commit date.
    Order is git's reverse-chronological log order.
    """
    repo = Path(repo_path)
    if not repo.is_dir():
        raise RepositoryNotFoundError(f"{repo} is not a directory")
    probe = _git(repo, "rev-parse", "--git-dir")
    if probe.returncode != 0:
        raise RepositoryNotFoundError(f"{repo} is not a git repository: "
                                      f"{probe.stderr.decode(errors='replace').strip()}")
    head = _git(repo, "rev-parse", "--verify", "--quiet", "HEAD")
    if head.returncode != 0:
        return iter(())

    args = ["log", "--no-color", "--no-renames", "--numstat", f"--format={GIT_LOG_FORMAT}",
            "--regexp-ignore-case", "--fixed-strings", f"--grep={grep_pattern}"]
    lo = hi = None
    if since is not None:
        lo = _day_start(since)
        args.append(f"--since={lo.isoformat()}")
    if until is not None:
        hi = _day_start(until).replace(hour=23, minute=59, second=59)
        args.append(f"--until={hi.isoformat()}")
    proc = _git(repo, *args)
    if proc.returncode != 0:
        raise GitCommandError(args, proc.returncode, proc.stderr.decode(errors="replace"))
    text = proc.stdout.decode("utf-8", errors="replace")

    def gen() -> Iterator[CommitRecord]:
        seen: set[str] = set()
        for c in parse_git_log(text):
            if c.hash in seen or not _matches(c, grep_pattern):
                continue
            if lo is not None and c.commit_date < lo:
                continue
            if hi is not None and c.commit_date > hi:
                continue
            seen.add(c.hash)
            yield c

    return gen()


# --------------------------------------------------------------------------
# commits.jsonl


def commit_to_json(c: CommitRecord) -> dict:
    return {
        "hash": c.hash,
        "author_name": c.author_name,
        "author_email": c.author_email,
        "author_date": format_utc(c.author_date),
        "commit_date": format_utc(c.commit_date),
        "subject": c.subject,
        "body": c.body,
        "parents": list(c.parents),
        "files": [{"path": f.path, "insertions": f.insertions, "deletions": f.deletions,
                   "binary": f.binary} for f in c.files],
    }


def commit_from_json(d: dict) -> CommitRecord:
    return CommitRecord(
        hash=d["hash"],
        author_name=d["author_name"],
        author_email=d["author_email"],
        author_date=to_utc(d["author_date"]),
        commit_date=to_utc(d["commit_date"]),
        subject=d["subject"],
        body=d["body"],
        parents=tuple(d.get("parents", ())),
        files=tuple(FileChange(f["path"], int(f["insertions"]), int(f["deletions"]),
                               bool(f.get("binary", False))) for f in d.get("files", ())),
    )


def write_corpus(commits: Iterable[CommitRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in commits:
            fh.write(json.dumps(commit_to_json(c), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_corpus(path) -> list[CommitRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(commit_from_json(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise IngestError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# feature tables


def load_feature_table(source) -> list[FeatureRecord]:
    """Load a feature-introduction CSV, sorted by introduction date."""
    with open(source, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FEATURE_HEADER:
            raise FeatureTableError(f"feature table header must be {','.join(FEATURE_HEADER)}, "
                                    f"got {header}")
        out: list[FeatureRecord] = []
        seen: set[tuple[str, FeatureType]] = set()
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 4:
                raise FeatureTableError(f"line {lineno}: expected 4 columns, got {len(row)}")
            name, ftype, introduced, commit = row
            if not name:
                raise FeatureTableError(f"line {lineno}: empty feature name")
            try:
                kind = FeatureType(ftype)
            except ValueError:
                raise FeatureTableError(f"line {lineno}: unknown feature_type {ftype!r}") from None
            try:
                day = date.fromisoformat(introduced)
            except ValueError:
                raise FeatureTableError(f"line {lineno}: unparseable date {introduced!r}") from None
            key = (name, kind)
            if key in seen:
                raise FeatureTableError(f"line {lineno}: duplicate feature ({name}, {ftype})")
            seen.add(key)
            out.append(FeatureRecord(name, kind, day, commit or None))
    out.sort(key=lambda f: (f.introduced_date, f.feature_type.value, f.name))
    return out


def write_feature_table(features: Iterable[FeatureRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEATURE_HEADER)
        for f in features:
            w.writerow([f.name, f.feature_type.value, f.introduced_date.isoformat(),
                        f.introduced_commit or ""])
