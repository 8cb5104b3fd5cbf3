"""
Byte corpora: loaded as-is, no transcoding, split 90/5/5 by byte count.
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import CorpusError

logger = logging.getLogger(__name__)

TRAIN_PERCENT = 90
DEV_PERCENT = 5


@dataclass(frozen=True)
class Corpus:
    data: bytes
    train_end: int
    dev_end: int

    @property
    def length(self) -> int:
        return len(self.data)

    @property
    def distinct_bytes(self) -> int:
        return int(np.unique(self.ids()).size)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def ids(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8)

    def train(self) -> bytes:
        return self.data[: self.train_end]

    def dev(self) -> bytes:
        return self.data[self.train_end : self.dev_end]

    def test(self) -> bytes:
        return self.data[self.dev_end :]

    def stats(self) -> dict:
        return {
            "length": self.length,
            "distinct_bytes": self.distinct_bytes,
            "train_end": self.train_end,
            "dev_end": self.dev_end,
            "sha256": self.sha256,
        }


def corpus_from_bytes(data: bytes) -> Corpus:
    if not data:
        raise CorpusError("corpus is empty")
    n = len(data)
    return Corpus(data, n * TRAIN_PERCENT // 100, n * (TRAIN_PERCENT + DEV_PERCENT) // 100)


def load_corpus(path: Union[str, Path]) -> Corpus:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus '{path}': {exc}") from exc
    if not data:
        raise CorpusError(f"corpus '{path}' is empty")
    corpus = corpus_from_bytes(data)
    logger.info("Loaded corpus %s: %d bytes, %d distinct", path, corpus.length, corpus.distinct_bytes)
    return corpus


def periodic_corpus(pattern: bytes = b"abc", length: int = 100_000) -> bytes:
    """`pattern` repeated up to `length` bytes: a corpus with zero entropy rate"""
    if not pattern:
        raise CorpusError("periodic corpus needs a non-empty pattern")
    return (pattern * (length // len(pattern) + 1))[:length]
