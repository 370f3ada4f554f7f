import random
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from commitsurvey.dataset import (
    Dataset,
    DatasetError,
    DatasetRow,
    join_list,
    merge_datasets,
    read_csv,
    sort_rows,
    split_list,
    write_codebook,
    write_csv,
)

from .conftest import SCHEMA, make_row, random_dataset, utc

GOLDEN_HEADER = (
    b"hash,author_name,author_email,author_date,commit_date,subject,body,parent_count,"
    b"file_count,insertions,deletions,files,summary,keywords,commit_classification,"
    b"commit_complexity,major_related_implementation_component,major_related_logic_component,"
    b"usecases_or_submodule_events,attempts,model,status,failure_reason\r\n"
)


def _round_trip(ds, tmp_path, name="d.csv"):
    path = tmp_path / name
    write_csv(ds, path)
    return read_csv(path, SCHEMA)


def test_golden_header(tmp_path):
    path = tmp_path / "e.csv"
    write_csv(Dataset(SCHEMA), path)
    assert path.read_bytes() == GOLDEN_HEADER


def test_usecase_cell_encoding(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(Dataset(SCHEMA, [make_row(1, usecases_or_submodule_events=("a", "e"))]), path)
    assert ",a;e," in path.read_text()


def test_summary_with_comma_and_newline(tmp_path):
    ds = Dataset(SCHEMA, [make_row(1, summary="one, two\nthree")])
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    assert b'"one, two\nthree"' in path.read_bytes()
    assert read_csv(path, SCHEMA) == ds


def test_hundred_row_round_trip(tmp_path):
    ds = random_dataset(random.Random(5), 100)
    assert _round_trip(ds, tmp_path) == ds


@pytest.mark.parametrize("items", [(), ("a",), ("a;b", "c%d", "%3B", ";", "%")])
def test_list_encoding(items):
    assert split_list(join_list(items)) == items


def test_extra_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_bytes(GOLDEN_HEADER.replace(b"\r\n", b",bonus\r\n"))
    with pytest.raises(DatasetError, match="bonus"):
        read_csv(path, SCHEMA)


def test_truncated_final_row(tmp_path):
    path = tmp_path / "d.csv"
    write_csv(Dataset(SCHEMA, [make_row(1), make_row(2, when=utc(2021, 1))]), path)
    data = path.read_bytes().rstrip(b"\r\n")
    path.write_bytes(data[: data.rindex(b",")])
    with pytest.raises(DatasetError, match="line 3"):
        read_csv(path, SCHEMA)


def test_duplicate_hash_rejected(tmp_path):
    with pytest.raises(DatasetError, match="duplicate"):
        write_csv(Dataset(SCHEMA, [make_row(1), make_row(1)]), tmp_path / "d.csv")


def test_failed_rows_round_trip(tmp_path):
    ds = Dataset(SCHEMA, [make_row(1, status="failed")])
    back = _round_trip(ds, tmp_path)
    assert back == ds and back.rows[0].answers == {}


def test_codebook(tmp_path):
    path = tmp_path / "codebook.csv"
    write_codebook(SCHEMA, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "question_id,code,label"
    assert "commit_classification,i,Merge commit" in lines
    assert len(lines) == 1 + 11 + 6 + 13 + 11 + 18


# -- merging -------------------------------------------------------------------

def test_merge_disjoint():
    a = Dataset(SCHEMA, [make_row(i) for i in range(3)])
    b = Dataset(SCHEMA, [make_row(i) for i in range(3, 5)])
    assert len(merge_datasets(a, b).rows) == 5


def test_merge_delta_wins():
    a = Dataset(SCHEMA, [make_row(1, commit_classification="a")])
    b = Dataset(SCHEMA, [make_row(1, commit_classification="b")])
    [row] = merge_datasets(a, b).rows
    assert row.answers["commit_classification"] == "b"


def test_merge_with_empty_resorts():
    rows = [make_row(1, when=utc(2022, 1)), make_row(2, when=utc(2020, 1))]
    d = Dataset(SCHEMA, rows)
    assert merge_datasets(d, Dataset(SCHEMA)).rows == sort_rows(rows)


def test_merge_idempotent():
    d = random_dataset(random.Random(9), 50)
    once = merge_datasets(d, d)
    assert merge_datasets(once, d) == once


def test_merge_schema_mismatch():
    from commitsurvey.survey_schema import parse_survey_schema, serialize_survey_schema
    other = parse_survey_schema(serialize_survey_schema(SCHEMA).replace(
        'id = "commit_survey_v1"', 'id = "other"'))
    with pytest.raises(DatasetError, match="schema mismatch"):
        merge_datasets(Dataset(SCHEMA), Dataset(other))


# -- property: adversarial round trip -----------------------------------------------

_text = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\x00"),
                max_size=40)
_item = _text.filter(lambda s: s != "")


@st.composite
def rows(draw, n):
    ts = st.datetimes(min_value=datetime(1990, 1, 1), max_value=datetime(2099, 1, 1)).map(
        lambda d: d.replace(microsecond=0, tzinfo=timezone.utc))
    answers = {}
    for q in SCHEMA.questions:
        if q.kind.value == "summary_text":
            answers[q.id] = draw(_item)
        elif q.kind.value == "keyword_list":
            answers[q.id] = tuple(draw(st.lists(_item, min_size=1, max_size=3)))
        elif q.kind.value == "single_choice":
            answers[q.id] = draw(st.sampled_from(q.codes))
        else:
            answers[q.id] = tuple(draw(st.lists(st.sampled_from(q.codes), min_size=1,
                                                max_size=4, unique=True)))
    status = draw(st.sampled_from(["ok", "ok", "failed"]))
    return DatasetRow(
        hash=f"{n:040x}", author_name=draw(_text), author_email=draw(_text),
        author_date=draw(ts), commit_date=draw(ts), subject=draw(_text), body=draw(_text),
        parent_count=draw(st.integers(0, 5)), files=tuple(draw(st.lists(_item, max_size=4))),
        insertions=draw(st.integers(0, 10**6)), deletions=draw(st.integers(0, 10**6)),
        answers=answers if status == "ok" else {}, attempts=draw(st.integers(1, 5)),
        model=draw(_text), status=status,
        failure_reason="" if status == "ok" else draw(_item))


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_adversarial_round_trip(tmp_path_factory, data):
    n = data.draw(st.integers(0, 40))
    ds = Dataset(SCHEMA, [data.draw(rows(i)) for i in range(n)])
    assert _round_trip(ds, tmp_path_factory.mktemp("rt")) == ds
