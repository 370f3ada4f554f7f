import os
import shutil
from datetime import date

import pytest

from commitsurvey.ingest import (
    US,
    FeatureTableError,
    FeatureType,
    MalformedRecordError,
    RepositoryNotFoundError,
    extract_commits,
    load_feature_table,
    parse_commit_record,
    parse_git_log,
    read_corpus,
    write_corpus,
)

from .conftest import build_fixture_repo, h, make_commit, utc
from .conftest import git_init as _init
from .conftest import git_run as _run

pytestmark = pytest.mark.skipif(shutil.which("git") is None, reason="git not installed")


@pytest.fixture(scope="module")
def fixture_repo(tmp_path_factory):
    repo = tmp_path_factory.mktemp("repo")
    return repo, build_fixture_repo(repo)


def test_fixture_repo_matches_hand_oracle(fixture_repo):
    repo, hashes = fixture_repo
    got = [c.hash for c in extract_commits(repo, "bpf")]
    # hand-listed: commits 2, 6 and 8 (1-based) mention bpf, newest first
    assert got == [hashes[7], hashes[5], hashes[1]]


def test_fixture_commit_fields(fixture_repo):
    repo, hashes = fixture_repo
    c = next(c for c in extract_commits(repo, "bpf") if c.hash == hashes[1])
    assert c.subject == "bpf: add verifier check"
    assert c.body == "Adds a bound check."
    assert c.commit_date == utc(2021, 6, 2, 8)
    assert c.parent_count == 1
    assert [(f.path, f.insertions, f.deletions) for f in c.files] == [("file1.c", 2, 0)]


def test_date_window_inclusive(fixture_repo):
    repo, hashes = fixture_repo
    got = [c.hash for c in extract_commits(repo, "bpf", since=date(2021, 6, 6),
                                           until=date(2021, 6, 6))]
    assert got == [hashes[5]]
    assert list(extract_commits(repo, "bpf", since=date(2022, 1, 1))) == []


def test_empty_repository(tmp_path):
    _init(tmp_path / "empty")
    assert list(extract_commits(tmp_path / "empty")) == []


def test_missing_repository(tmp_path):
    with pytest.raises(RepositoryNotFoundError):
        extract_commits(tmp_path / "nope")
    (tmp_path / "plain").mkdir()
    with pytest.raises(RepositoryNotFoundError):
        extract_commits(tmp_path / "plain")


def test_merge_commit_parents(tmp_path):
    repo = tmp_path / "m"
    _init(repo)
    env = dict(os.environ, GIT_AUTHOR_DATE="2020-01-01T00:00:00Z",
               GIT_COMMITTER_DATE="2020-01-01T00:00:00Z")
    (repo / "a").write_text("a")
    _run(repo, "add", "a")
    _run(repo, "commit", "-q", "-m", "base", env=env)
    _run(repo, "checkout", "-q", "-b", "side")
    (repo / "b").write_text("b")
    _run(repo, "add", "b")
    _run(repo, "commit", "-q", "-m", "side change", env=env)
    _run(repo, "checkout", "-q", "-")
    (repo / "c").write_text("c")
    _run(repo, "add", "c")
    _run(repo, "commit", "-q", "-m", "main change", env=env)
    _run(repo, "merge", "-q", "--no-ff", "-m", "Merge branch 'bpf-fixes'", "side", env=env)
    [c] = list(extract_commits(repo, "bpf"))
    assert c.parent_count == 2 and c.is_merge


# -- record parsing -----------------------------------------------------------

def _record(parents=h(2), message="bpf: subject", numstat=""):
    return US.join([h(1), parents, "Dev", "d@x", "2020-01-02T03:04:05+01:00",
                    "2020-01-02T03:04:05+01:00", message, numstat])


def test_record_two_parents():
    assert parse_commit_record(_record(parents=f"{h(2)} {h(3)}")).parent_count == 2


def test_record_body_preserved():
    c = parse_commit_record(_record(message="Subj\n\nLine1\n\nLine3\n"))
    assert c.subject == "Subj"
    assert c.body == "Line1\n\nLine3"


def test_record_numstat():
    c = parse_commit_record(_record(numstat="\n3\t1\tkernel/bpf/verifier.c\n-\t-\tfw.bin\n"))
    assert c.files[0].path == "kernel/bpf/verifier.c"
    assert (c.files[0].insertions, c.files[0].deletions) == (3, 1)
    assert c.files[1].binary and c.files[1].insertions == 0


def test_record_dates_normalised():
    assert parse_commit_record(_record()).commit_date == utc(2020, 1, 2, 2, 4, 5)


@pytest.mark.parametrize("raw", [
    US.join(["x"] * 3),
    _record().replace(h(1), "nothex"),
    _record().replace("2020-01-02T03:04:05+01:00", "yesterday"),
    _record(numstat="\nthree\t1\tfile.c"),
])
def test_malformed_records(raw):
    with pytest.raises(MalformedRecordError):
        parse_commit_record(raw)


def test_parse_git_log_offsets():
    good = _record()
    with pytest.raises(MalformedRecordError) as exc:
        list(parse_git_log("\x1e" + good + "\x1ebroken"))
    assert exc.value.offset == len(good) + 2  # start of the bad record


# -- corpus jsonl ------------------------------------------------------------------

def test_corpus_round_trip(tmp_path):
    commits = [make_commit(1, body="multi\nline \"quoted\" ünïcode", parents=2,
                           files=[("a.c", 1, 2), ("b/c.h", 0, 5)]),
               make_commit(2)]
    path = tmp_path / "c.jsonl"
    assert write_corpus(commits, path) == 2
    assert read_corpus(path) == commits


# -- feature tables ------------------------------------------------------------------

HEADER = "name,feature_type,introduced_date,introduced_commit\n"


def test_feature_row_without_commit(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + "bpf_link,link_type,2020-03-02,\n")
    [f] = load_feature_table(p)
    assert f.name == "bpf_link" and f.feature_type is FeatureType.LINK_TYPE
    assert f.introduced_date == date(2020, 3, 2) and f.introduced_commit is None


def test_feature_header_only(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(HEADER)
    assert load_feature_table(p) == []


def test_feature_duplicate(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + "x,helper,2020-01-01,\nx,helper,2021-01-01,\n")
    with pytest.raises(FeatureTableError, match=r"duplicate feature \(x, helper\)"):
        load_feature_table(p)


@pytest.mark.parametrize("body, msg", [
    ("x,gizmo,2020-01-01,\n", "unknown feature_type"),
    ("x,helper,2020-13-01,\n", "unparseable date"),
    ("x,helper\n", "expected 4 columns"),
])
def test_feature_bad_rows(tmp_path, body, msg):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + body)
    with pytest.raises(FeatureTableError, match=msg):
        load_feature_table(p)


def test_feature_bad_header(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("name,type\n")
    with pytest.raises(FeatureTableError):
        load_feature_table(p)


def test_feature_sorted(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(HEADER + "b,helper,2021-01-01,\na,kfunc,2019-01-01,abc\n")
    assert [f.name for f in load_feature_table(p)] == ["a", "b"]
