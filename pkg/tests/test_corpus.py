import pytest

from longformer_engine.corpus import corpus_from_bytes, load_corpus, periodic_corpus
from longformer_engine.errors import CorpusError


def test_split_by_byte_count(tmp_path):
    path = tmp_path / "c.bin"
    path.write_bytes(bytes(range(256)) * 4)
    corpus = load_corpus(path)
    assert corpus.length == 1024
    assert (len(corpus.train()), len(corpus.dev()), len(corpus.test())) == (921, 51, 52)
    assert corpus.train() + corpus.dev() + corpus.test() == corpus.data
    assert corpus.distinct_bytes == 256
    assert corpus.stats()["sha256"] == corpus.sha256


def test_bytes_are_not_transcoded(tmp_path):
    raw = "naïve café".encode("utf-8") + b"\xff\x00"
    path = tmp_path / "u.txt"
    path.write_bytes(raw)
    assert load_corpus(path).data == raw


def test_missing_and_empty(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "nope.txt")
    (tmp_path / "empty.txt").write_bytes(b"")
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "empty.txt")
    with pytest.raises(CorpusError):
        corpus_from_bytes(b"")


def test_periodic_corpus():
    data = periodic_corpus(b"abc", 10)
    assert data == b"abcabcabca"
    with pytest.raises(CorpusError):
        periodic_corpus(b"", 5)
