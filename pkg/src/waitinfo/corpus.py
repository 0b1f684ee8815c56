"""Synthetic parallel corpora, JSON-lines IO and padded batches."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .vocab import BOS, EOS, FIRST_FREE, PAD

TASKS = ("copy", "reverse", "skewed-copy")
CONTENT_SYMBOLS = 30
FILLER_SYMBOLS = 4
FILLER_BASE = FIRST_FREE + CONTENT_SYMBOLS
VOCAB_SIZE = 40
MIN_LEN, MAX_LEN = 4, 16
CONTENT_PER_FILLER = 2


@dataclass
class SentencePair:
    src: list[int]
    tgt: list[int]
    cls: list[str] | None = None

    def __post_init__(self):
        if not self.src or not self.tgt:
            raise ValueError("sentence pair sides must be nonempty")
        if self.cls is not None and len(self.cls) != len(self.src):
            raise ValueError("class labels must align with source tokens")

    def to_json(self) -> str:
        obj = {"src": self.src, "tgt": self.tgt}
        if self.cls is not None:
            obj["cls"] = self.cls
        return json.dumps(obj, separators=(",", ":"))


def _skewed(content: list[int]) -> tuple[list[int], list[str]]:
    # a filler opens every chunk of CONTENT_PER_FILLER content tokens
    src, cls = [], []
    for chunk, start in enumerate(range(0, len(content), CONTENT_PER_FILLER)):
        src.append(FILLER_BASE + chunk % FILLER_SYMBOLS)
        cls.append("F")
        for tok in content[start:start + CONTENT_PER_FILLER]:
            src.append(tok)
            cls.append("C")
    return src, cls


def generate_corpus(task: str, count: int, seed: int,
                    min_len: int = MIN_LEN, max_len: int = MAX_LEN) -> list[SentencePair]:
    """Deterministic synthetic pairs.

    ``skewed-copy`` draws the content length so that the filler-augmented
    source still fits within ``max_len``.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    rng = np.random.default_rng(seed)
    pairs = []
    if task == "skewed-copy":
        hi = max(l for l in range(min_len, max_len + 1) if l + -(-l // CONTENT_PER_FILLER) <= max_len)
    else:
        hi = max_len
    for _ in range(count):
        length = int(rng.integers(min_len, hi + 1))
        content = [int(t) for t in rng.integers(FIRST_FREE, FIRST_FREE + CONTENT_SYMBOLS, size=length)]
        if task == "copy":
            pairs.append(SentencePair(content, list(content)))
        elif task == "reverse":
            pairs.append(SentencePair(content, content[::-1]))
        else:
            src, cls = _skewed(content)
            pairs.append(SentencePair(src, list(content), cls))
    return pairs


def write_corpus(path, pairs: Iterable[SentencePair]) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(p.to_json() + "\n")


def read_corpus(path) -> list[SentencePair]:
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(SentencePair(list(map(int, obj["src"])), list(map(int, obj["tgt"])), obj.get("cls")))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed corpus line ({exc})") from None
    if not pairs:
        raise ValueError(f"{path}: empty corpus")
    return pairs


def token_counts(sequences: Iterable[Sequence[int]], add_eos: bool = True) -> dict[int, int]:
    counts: dict[int, int] = {}
    for seq in sequences:
        for t in list(seq) + ([EOS] if add_eos else []):
            counts[int(t)] = counts.get(int(t), 0) + 1
    return counts


@dataclass
class Batch:
    """Padded arrays.  Lengths count EOS; ``tgt_in`` starts with BOS."""

    src: np.ndarray
    src_len: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_len: np.ndarray

    @property
    def src_pad(self) -> np.ndarray:
        return self.src == PAD

    @property
    def tgt_pad(self) -> np.ndarray:
        return np.arange(self.tgt_in.shape[1])[None, :] >= self.tgt_len[:, None]

    @property
    def src_content(self) -> np.ndarray:
        """Real source tokens excluding EOS (the tokens entering the info sums)."""
        return np.arange(self.src.shape[1])[None, :] < (self.src_len - 1)[:, None]

    @property
    def tgt_content(self) -> np.ndarray:
        """Decoder inputs excluding BOS: these carry the target tokens' infos."""
        pos = np.arange(self.tgt_in.shape[1])[None, :]
        return (pos >= 1) & (pos < self.tgt_len[:, None])

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(pairs: Sequence[SentencePair]) -> Batch:
    B = len(pairs)
    n = max(len(p.src) for p in pairs) + 1
    m = max(len(p.tgt) for p in pairs) + 1
    src = np.full((B, n), PAD, dtype=np.int64)
    tgt_in = np.full((B, m), PAD, dtype=np.int64)
    tgt_out = np.full((B, m), PAD, dtype=np.int64)
    for b, p in enumerate(pairs):
        src[b, : len(p.src) + 1] = p.src + [EOS]
        tgt_in[b, : len(p.tgt) + 1] = [BOS] + p.tgt
        tgt_out[b, : len(p.tgt) + 1] = p.tgt + [EOS]
    src_len = np.array([len(p.src) + 1 for p in pairs])
    tgt_len = np.array([len(p.tgt) + 1 for p in pairs])
    return Batch(src, src_len, tgt_in, tgt_out, tgt_len)
