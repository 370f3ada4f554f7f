from commitsurvey.ingest import load_feature_table, write_corpus, write_feature_table
from commitsurvey.synthetic import (
    bundled_corpus_path,
    bundled_features_path,
    generate_commits,
    generate_features,
)


def test_bundled_corpus_is_regenerable(tmp_path):
    write_corpus(generate_commits(), tmp_path / "c.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() == bundled_corpus_path().read_bytes()


def test_bundled_features_are_regenerable(tmp_path):
    write_feature_table(generate_features(), tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_bytes() == bundled_features_path().read_bytes()


def test_corpus_shape(corpus):
    assert len(corpus) == 500
    assert len({c.hash for c in corpus}) == 500
    merges = [c for c in corpus if c.is_merge]
    assert 0 < len(merges) < 100
    assert all("bpf" in c.message.lower() for c in corpus)


def test_feature_table_loads():
    assert len(load_feature_table(bundled_features_path())) == 120
