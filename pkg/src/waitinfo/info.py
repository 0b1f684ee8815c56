"""Per-token info: the learned quantizer, the info-sum loss and heuristic providers."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from . import tensor as T
from .tensor import Tensor

EPS = 1e-6
DEFAULT_LAMBDA = 0.3


@dataclass
class InfoQuantizerParams:
    """Weights of the 3-layer FFN ``d -> hidden -> hidden -> 1``."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    def __post_init__(self):
        if self.w3.shape[-1] != 1:
            raise ValueError(f"quantizer output width must be 1, got {self.w3.shape}")

    @classmethod
    def init(cls, d: int, hidden: int, rng: np.random.Generator) -> "InfoQuantizerParams":
        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return T.parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)))

        return cls(
            glorot(d, hidden), T.parameter(np.zeros(hidden)),
            glorot(hidden, hidden), T.parameter(np.zeros(hidden)),
            glorot(hidden, 1), T.parameter(np.zeros(1)),
        )

    @property
    def input_dim(self) -> int:
        return self.w1.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def quantizer_logits(embeddings: Tensor, params: InfoQuantizerParams) -> Tensor:
    if embeddings.shape[-1] != params.input_dim:
        raise T.ShapeError("quantize_info", embeddings.shape, params.w1.shape)
    h = T.relu(embeddings @ params.w1 + params.b1)
    h = T.relu(h @ params.w2 + params.b2)
    out = h @ params.w3 + params.b3
    return out.reshape(out.shape[:-1])


def quantize_info(embeddings: Tensor, params: InfoQuantizerParams) -> Tensor:
    """Map ``[..., L, d]`` token embeddings to ``[..., L]`` infos in (0, 2)."""
    if embeddings.ndim < 2 or embeddings.shape[-2] < 1:
        raise T.ShapeError("quantize_info", embeddings.shape, params.w1.shape)
    return T.sigmoid(quantizer_logits(embeddings, params)) * 2.0


def default_zeta(n: int, m: int) -> float:
    return (n + m) / 2.0


def info_sum_loss(src_info, tgt_info, zeta, src_mask=None, tgt_mask=None) -> Tensor:
    """``|sum(I_src) - zeta| + |sum(I_tgt) - zeta|``, averaged over a batch.

    Inputs are ``[L]`` vectors or ``[B, L]`` batches.  ``zeta`` is a scalar or
    one value per sentence; the optional 0/1 masks drop padding and markers
    from the sums.
    """
    src_info, tgt_info = T.as_tensor(src_info), T.as_tensor(tgt_info)
    if src_info.size == 0 or tgt_info.size == 0:
        raise ValueError("info_sum_loss: empty info vector")
    zeta = np.asarray(zeta, dtype=np.float64)
    if np.any(zeta <= 0):
        raise ValueError("info_sum_loss: zeta must be positive")
    if src_mask is not None:
        src_info = src_info * np.asarray(src_mask, dtype=np.float64)
    if tgt_mask is not None:
        tgt_info = tgt_info * np.asarray(tgt_mask, dtype=np.float64)
    src_total = src_info.sum(axis=-1)
    tgt_total = tgt_info.sum(axis=-1)
    per_sentence = T.abs_(src_total - zeta) + T.abs_(tgt_total - zeta)
    if per_sentence.ndim == 0:
        return per_sentence
    return per_sentence.mean()


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    sum: float
    total: float
    lam: float
    zeta: float | None = None


def total_loss(ce, info_sum, lam: float = DEFAULT_LAMBDA):
    """Combine cross-entropy and info-sum loss.

    With tensors this returns the differentiable total; with plain numbers a
    :class:`LossBreakdown`.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if isinstance(ce, Tensor) or isinstance(info_sum, Tensor):
        if lam == 0:
            return T.as_tensor(ce)
        return T.as_tensor(ce) + T.as_tensor(info_sum) * lam
    ce, info_sum = float(ce), float(info_sum)
    total = ce if lam == 0 else ce + lam * info_sum
    return LossBreakdown(ce=ce, sum=info_sum, total=total, lam=lam)


# -- heuristic providers ---------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class FrequencyInfo:
    """Rarer tokens get more info: ``2*sigmoid(-log f + b)`` with ``b`` calibrated
    so the corpus-mean info is 1."""

    def __init__(self, counts: Mapping[int, int]):
        if not counts or sum(counts.values()) <= 0:
            raise ValueError("frequency info needs a nonempty corpus")
        self.counts = {int(k): int(v) for k, v in counts.items()}
        self.total = sum(self.counts.values())
        toks = np.array(sorted(self.counts))
        occ = np.array([self.counts[t] for t in toks], dtype=np.float64)
        surprisal = -np.log(occ / self.total)

        def mean_gap(b):
            vals = np.clip(2.0 * _sigmoid(surprisal + b), EPS, 2 - EPS)
            return float((vals * occ).sum() / occ.sum()) - 1.0

        self.bias = brentq(mean_gap, -60.0, 60.0, xtol=1e-12)

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[int]]) -> "FrequencyInfo":
        counter: Counter = Counter()
        for seq in sequences:
            counter.update(int(t) for t in seq)
        return cls(counter)

    def __call__(self, sequence: Sequence[int]) -> np.ndarray:
        occ = np.array([max(self.counts.get(int(t), 1), 1) for t in sequence], dtype=np.float64)
        return np.clip(2.0 * _sigmoid(-np.log(occ / self.total) + self.bias), EPS, 2 - EPS)


def frequency_info(corpus_token_counts: Mapping[int, int], sequence: Sequence[int]) -> np.ndarray:
    return FrequencyInfo(corpus_token_counts)(sequence)


def norm_info(embedding_table, sequence: Sequence[int]) -> np.ndarray:
    """Info proportional to embedding norm, normalised so the vocabulary mean is 1."""
    table = np.asarray(embedding_table.data if isinstance(embedding_table, Tensor) else embedding_table)
    norms = np.linalg.norm(table, axis=-1)
    scale = norms.mean()
    if scale <= 0:
        return np.ones(len(sequence))
    picked = norms[np.asarray(sequence, dtype=np.int64)]
    return np.clip(2.0 * picked / (2.0 * scale), EPS, 2 - EPS)
