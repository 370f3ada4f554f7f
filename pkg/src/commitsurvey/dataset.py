"""The ``commit_survey.csv`` dataset: rows, CSV persistence, merging.

Question columns hold option codes, never labels. Multi-choice codes and
keyword lists are joined with ``;`` in one cell; ``%`` and ``;`` inside
list items are percent-escaped so the encoding is lossless. The sidecar
``codebook.csv`` maps (question_id, code) to the option label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping

from .agent import SurveyResponse
from .ingest import CommitRecord, format_utc, to_utc
from .survey_schema import Answer, QuestionKind, SurveySchema

META_COLUMNS = ["hash", "author_name", "author_email", "author_date", "commit_date",
                "subject", "body", "parent_count", "file_count", "insertions", "deletions",
                "files"]
RUN_COLUMNS = ["attempts", "model", "status", "failure_reason"]
CODEBOOK_HEADER = ["question_id", "code", "label"]


class DatasetError(ValueError):
    pass


def header_for(schema: SurveySchema) -> list[str]:
    return META_COLUMNS + list(schema.question_ids) + RUN_COLUMNS


@dataclass(frozen=True)
class DatasetRow:
    hash: str
    author_name: str
    author_email: str
    author_date: datetime
    commit_date: datetime
    subject: str
    body: str
    parent_count: int
    files: tuple[str, ...]
    insertions: int
    deletions: int
    answers: Mapping[str, str | tuple[str, ...]] = field(default_factory=dict)
    attempts: int = 1
    model: str = ""
    status: str = "ok"
    failure_reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def file_count(self) -> int:
        return len(self.files)

    @property
    def is_merge(self) -> bool:
        return self.parent_count >= 2

    def codes(self, question_id: str) -> tuple[str, ...]:
        """Selected codes for a choice question (empty when unanswered)."""
        v = self.answers.get(question_id)
        if v is None or v == "":
            return ()
        return (v,) if isinstance(v, str) else tuple(v)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetRow):
            return NotImplemented
        return _row_key(self) == _row_key(other)

    def __hash__(self) -> int:
        return hash(self.hash)


def _row_key(r: DatasetRow) -> tuple:
    return (r.hash, r.author_name, r.author_email, r.author_date, r.commit_date, r.subject,
            r.body, r.parent_count, r.files, r.insertions, r.deletions,
            tuple(sorted(r.answers.items())), r.attempts, r.model, r.status, r.failure_reason)


@dataclass
class Dataset:
    schema: SurveySchema
    rows: list[DatasetRow] = field(default_factory=list)

    @property
    def schema_id(self) -> str:
        return self.schema.id

    @property
    def ok_rows(self) -> list[DatasetRow]:
        return [r for r in self.rows if r.ok]

    def __len__(self) -> int:
        return len(self.rows)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.schema_id == other.schema_id and self.rows == other.rows

    def replace_rows(self, rows: Iterable[DatasetRow]) -> Dataset:
        return Dataset(self.schema, list(rows))


def _answer_value(kind: QuestionKind, a: Answer) -> str | tuple[str, ...]:
    if kind is QuestionKind.SUMMARY_TEXT:
        return a.text or ""
    if kind is QuestionKind.KEYWORD_LIST:
        return tuple(a.items or ())
    if kind is QuestionKind.SINGLE_CHOICE:
        return (a.codes or ("",))[0]
    return tuple(a.codes or ())


def row_from_response(schema: SurveySchema, commit: CommitRecord,
                      response: SurveyResponse) -> DatasetRow:
    if commit.hash != response.commit_hash:
        raise DatasetError(f"response for {response.commit_hash} paired with {commit.hash}")
    by_id = {a.question_id: a for a in response.answers}
    answers = {q.id: _answer_value(q.kind, by_id[q.id]) for q in schema.questions
               if q.id in by_id}
    return DatasetRow(
        hash=commit.hash,
        author_name=commit.author_name,
        author_email=commit.author_email,
        author_date=commit.author_date,
        commit_date=commit.commit_date,
        subject=commit.subject,
        body=commit.body,
        parent_count=commit.parent_count,
        files=tuple(f.path for f in commit.files),
        insertions=sum(f.insertions for f in commit.files),
        deletions=sum(f.deletions for f in commit.files),
        answers=answers,
        attempts=response.attempts,
        model=response.model,
        status=response.status,
        failure_reason=response.failure_reason or "",
    )


def build_dataset(schema: SurveySchema, commits: Iterable[CommitRecord],
                  responses: Iterable[SurveyResponse]) -> Dataset:
    return Dataset(schema, [row_from_response(schema, c, r) for c, r in zip(commits, responses)])


# --------------------------------------------------------------------------
# cell encoding


def _escape(item: str) -> str:
    return item.replace("%", "%25").replace(";", "%3B")


def _unescape(item: str) -> str:
    return item.replace("%3B", ";").replace("%25", "%")


def join_list(items: Iterable[str]) -> str:
    return ";".join(_escape(i) for i in items)


def split_list(cell: str) -> tuple[str, ...]:
    if cell == "":
        return ()
    return tuple(_unescape(p) for p in cell.split(";"))


def _encode_row(schema: SurveySchema, r: DatasetRow) -> list[str]:
    cells = [r.hash, r.author_name, r.author_email, format_utc(r.author_date),
             format_utc(r.commit_date), r.subject, r.body, str(r.parent_count),
             str(r.file_count), str(r.insertions), str(r.deletions), join_list(r.files)]
    for q in schema.questions:
        v = r.answers.get(q.id)
        if v is None:
            cells.append("")
        elif isinstance(v, str):
            cells.append(v)
        else:
            cells.append(join_list(v))
    cells += [str(r.attempts), r.model, r.status, r.failure_reason]
    return cells


def _decode_row(schema: SurveySchema, cells: list[str], lineno: int) -> DatasetRow:
    meta = dict(zip(META_COLUMNS, cells))
    qcells = cells[len(META_COLUMNS):len(META_COLUMNS) + len(schema.questions)]
    run = dict(zip(RUN_COLUMNS, cells[len(META_COLUMNS) + len(schema.questions):]))
    answers: dict[str, str | tuple[str, ...]] = {}
    for q, cell in zip(schema.questions, qcells):
        if cell == "":
            continue
        if q.kind in (QuestionKind.SUMMARY_TEXT, QuestionKind.SINGLE_CHOICE):
            answers[q.id] = cell
        else:
            answers[q.id] = split_list(cell)
    try:
        files = split_list(meta["files"])
        if int(meta["file_count"]) != len(files):
            raise DatasetError(f"line {lineno}: file_count does not match files column")
        return DatasetRow(
            hash=meta["hash"],
            author_name=meta["author_name"],
            author_email=meta["author_email"],
            author_date=to_utc(meta["author_date"]),
            commit_date=to_utc(meta["commit_date"]),
            subject=meta["subject"],
            body=meta["body"],
            parent_count=int(meta["parent_count"]),
            files=files,
            insertions=int(meta["insertions"]),
            deletions=int(meta["deletions"]),
            answers=answers,
            attempts=int(run["attempts"]),
            model=run["model"],
            status=run["status"],
            failure_reason=run["failure_reason"],
        )
    except ValueError as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"line {lineno}: {exc}") from exc


# --------------------------------------------------------------------------
# files


def check_rows(dataset: Dataset) -> None:
    seen: set[str] = set()
    for r in dataset.rows:
        if r.hash in seen:
            raise DatasetError(f"duplicate hash {r.hash}")
        seen.add(r.hash)
        if r.ok:
            missing = [q for q in dataset.schema.question_ids if r.answers.get(q) in (None, "", ())]
            if missing:
                raise DatasetError(f"ok row {r.hash} has empty answers for {missing}")


def write_csv(dataset: Dataset, path) -> None:
    check_rows(dataset)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header_for(dataset.schema))
        for r in dataset.rows:
            w.writerow(_encode_row(dataset.schema, r))


def read_csv(path, schema: SurveySchema) -> Dataset:
    expected = header_for(schema)
    rows: list[DatasetRow] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, expected header") from None
        except csv.Error as exc:
            raise DatasetError(f"{path}: {exc}") from exc
        if header != expected:
            extra = [c for c in header if c not in expected]
            missing = [c for c in expected if c not in header]
            detail = []
            if extra:
                detail.append(f"unknown column(s) {extra}")
            if missing:
                detail.append(f"missing column(s) {missing}")
            if not detail:
                detail.append("columns out of order")
            raise DatasetError(f"{path}: header mismatch: {'; '.join(detail)}")
        while True:
            try:
                cells = next(reader)
            except StopIteration:
                break
            except csv.Error as exc:
                raise DatasetError(f"{path}: line {reader.line_num}: {exc}") from exc
            if len(cells) != len(expected):
                raise DatasetError(f"{path}: line {reader.line_num}: expected {len(expected)} "
                                   f"fields, found {len(cells)}")
            rows.append(_decode_row(schema, cells, reader.line_num))
    ds = Dataset(schema, rows)
    check_rows(ds)
    return ds


def write_codebook(schema: SurveySchema, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(CODEBOOK_HEADER)
        for q in schema.questions:
            for c in q.choices:
                w.writerow([q.id, c.code, c.label])


def sort_rows(rows: Iterable[DatasetRow]) -> list[DatasetRow]:
    return sorted(rows, key=lambda r: (r.commit_date, r.hash))


def merge_datasets(base: Dataset, delta: Dataset) -> Dataset:
    """Union keyed by hash, delta winning; sorted by commit_date then hash."""
    if base.schema_id != delta.schema_id:
        raise DatasetError(f"schema mismatch: {base.schema_id!r} vs {delta.schema_id!r}")
    by_hash = {r.hash: r for r in base.rows}
    by_hash.update((r.hash, r) for r in delta.rows)
    return Dataset(delta.schema, sort_rows(by_hash.values()))
