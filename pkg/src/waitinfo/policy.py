"""READ/WRITE schedules and streaming simulation.

Target indices are 1-based in every formula: ``g[i-1]`` is the number of
source tokens read before emitting target token ``i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

FULL_SENTENCE = math.inf
READ, WRITE = "R", "W"


class StreamExhausted(RuntimeError):
    """The source stream ended without an end-of-sequence marker."""


# -- closed-form schedules ----------------------------------------------------

def wait_k_g(k: int, i: int, n: int) -> int:
    return min(k + i - 1, n)


def catchup_g(k: int, c, i: int, n: int) -> int:
    """Wait-k plus one extra READ after every ``c`` WRITEs; ``c=None``/inf disables it."""
    if c is None or c == math.inf:
        return wait_k_g(k, i, n)
    if c < 1:
        raise ValueError("catch-up interval must be >= 1")
    return min(k + i - 1 + (i - 1) // int(c), n)


def wait_info_g(src_info: Sequence[float], tgt_cum: float, K: float, n: int | None = None) -> int:
    """Smallest ``j`` whose source info prefix sum reaches ``tgt_cum + K``; ``n`` if none does."""
    n = len(src_info) if n is None else n
    threshold = tgt_cum + K
    acc = 0.0
    for j in range(1, n + 1):
        acc += float(src_info[j - 1])
        if acc >= threshold:
            return j
    return n


@dataclass
class Schedule:
    g: list[int]
    n: int

    def __post_init__(self):
        self.g = [int(x) for x in self.g]
        if self.n < 1:
            raise ValueError("schedule needs n >= 1")
        prev = 0
        for x in self.g:
            if not 1 <= x <= self.n:
                raise ValueError(f"g value {x} outside [1, {self.n}]")
            if x < prev:
                raise ValueError("g must be nondecreasing")
            prev = x

    @property
    def m(self) -> int:
        return len(self.g)

    @classmethod
    def wait_k(cls, k: int, n: int, m: int) -> "Schedule":
        return cls([wait_k_g(k, i, n) for i in range(1, m + 1)], n)

    @classmethod
    def catchup(cls, k: int, c, n: int, m: int) -> "Schedule":
        return cls([catchup_g(k, c, i, n) for i in range(1, m + 1)], n)

    @classmethod
    def full_sentence(cls, n: int, m: int) -> "Schedule":
        return cls([n] * m, n)


def detect_early_stop(schedule: Schedule) -> bool:
    if not schedule.g:
        raise ValueError("empty schedule")
    return schedule.g[-1] < schedule.n


def early_stop_proportion(schedules: Iterable[Schedule]) -> float:
    flags = [detect_early_stop(s) for s in schedules]
    if not flags:
        raise ValueError("early_stop_proportion of an empty corpus")
    return sum(flags) / len(flags)


# -- policies used during simulation -------------------------------------------

class WaitK:
    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def should_write(self, i, j, src_sum, tgt_sum, tgt_sum_before) -> bool:
        return j >= self.k + i - 1

    def __repr__(self):
        return f"WaitK({self.k})"


class CatchUp:
    def __init__(self, k: int, c):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k, self.c = k, c

    def should_write(self, i, j, src_sum, tgt_sum, tgt_sum_before) -> bool:
        return j >= catchup_g(self.k, self.c, i, 10**9)


class WaitInfo:
    """WRITE once received source info exceeds target info by ``K``.

    ``include_current`` sums target info through the token being emitted
    (the default); turning it off sums only the already-emitted ones.
    """

    def __init__(self, K: float, include_current: bool = True):
        if not K > 0:
            raise ValueError("lagging info K must be positive")
        self.K = float(K)
        self.include_current = include_current

    def should_write(self, i, j, src_sum, tgt_sum, tgt_sum_before) -> bool:
        if self.K == math.inf:
            return False
        target = tgt_sum if self.include_current else tgt_sum_before
        return src_sum >= target + self.K

    def __repr__(self):
        return f"WaitInfo({self.K})"


class FixedSchedule:
    """Replays a recorded ``g``: WRITE target ``i`` once ``g[i-1]`` tokens are read."""

    def __init__(self, g: Sequence[int]):
        self.g = list(g)

    def should_write(self, i, j, src_sum, tgt_sum, tgt_sum_before) -> bool:
        return i <= len(self.g) and j >= self.g[i - 1]


def as_policy(policy):
    if isinstance(policy, (int, float)) and not isinstance(policy, bool):
        return WaitInfo(policy)
    return policy


# -- traces ------------------------------------------------------------------------

@dataclass
class Action:
    kind: str
    token: int
    src_sum: float = 0.0
    tgt_sum: float = 0.0


@dataclass
class ActionTrace:
    actions: list[Action] = field(default_factory=list)
    capped: bool = False

    @property
    def reads(self) -> int:
        return sum(a.kind == READ for a in self.actions)

    @property
    def writes(self) -> list[int]:
        return [a.token for a in self.actions if a.kind == WRITE]

    def g(self) -> list[int]:
        out, read = [], 0
        for a in self.actions:
            if a.kind == READ:
                read += 1
            else:
                out.append(read)
        return out

    def schedule(self, n: int | None = None) -> Schedule:
        return Schedule(self.g(), self.reads if n is None else n)

    def lines(self) -> Iterator[str]:
        for a in self.actions:
            if a.kind == READ:
                yield f"R\t{a.token}"
            else:
                yield f"W\t{a.token}\t{a.src_sum:.4f}\t{a.tgt_sum:.4f}"


def write_traces(path, traces: Sequence[ActionTrace]) -> None:
    """One action per line; sentences separated by a blank line."""
    with open(path, "w") as fh:
        for t in traces:
            for line in t.lines():
                fh.write(line + "\n")
            fh.write("\n")


# -- simulation --------------------------------------------------------------------

class Translator(Protocol):
    eos: int
    bos: int

    def source_info(self, token: int) -> float: ...

    def target_info(self, prefix: Sequence[int]) -> float: ...

    def predict(self, src_prefix: Sequence[int], tgt_prefix: Sequence[int],
                g_history: Sequence[int]) -> int: ...


class ScriptedTranslator:
    """Emits a fixed target sequence with given per-step infos (no model).

    ``tgt_info[i-1]`` is the info used for the decision on target step ``i``.
    """

    def __init__(self, src_info: Sequence[float], tgt_info: Sequence[float],
                 targets: Sequence[int] | None = None, bos: int = 1, eos: int = 2):
        self.src_info = list(src_info)
        self.tgt_info = list(tgt_info)
        m = len(self.tgt_info)
        self.targets = list(targets) if targets is not None else [100 + i for i in range(m - 1)] + [eos]
        self.bos, self.eos = bos, eos

    def source_stream(self) -> list[int]:
        n = len(self.src_info)
        return [1000 + j for j in range(n - 1)] + [self.eos]

    def source_info(self, token):
        idx = token - 1000 if token != self.eos else len(self.src_info) - 1
        return float(self.src_info[idx])

    def target_info(self, prefix):
        return float(self.tgt_info[min(len(prefix), len(self.tgt_info)) - 1])

    def predict(self, src_prefix, tgt_prefix, g_history):
        return self.targets[len(tgt_prefix) - 1]


def simulate(translator, source_stream: Iterable[int], policy, max_len: int | None = None):
    """Run the streaming READ/WRITE loop; returns ``(outputs, trace)``.

    WRITE happens when ``policy.should_write`` agrees or the source EOS has
    been read.  Output length is capped at ``max_len``, by default ``2n+10``
    once the source length ``n`` is known; hitting the cap sets
    ``trace.capped``.
    """
    policy = as_policy(policy)
    stream = iter(source_stream)
    eos = translator.eos
    src: list[int] = []
    trace = ActionTrace()
    src_sum = 0.0

    def read():
        nonlocal src_sum
        try:
            tok = int(next(stream))
        except StopIteration:
            raise StreamExhausted("source stream ended before end-of-sequence") from None
        src.append(tok)
        src_sum += translator.source_info(tok)
        trace.actions.append(Action(READ, tok))

    read()
    outputs: list[int] = []
    prefix = [translator.bos]
    g_history: list[int] = []
    tgt_sum = 0.0
    cur_info = None
    while not (outputs and outputs[-1] == eos):
        src_done = src[-1] == eos
        cap = max_len if max_len is not None else (2 * len(src) + 10 if src_done else None)
        if cap is not None and len(outputs) >= cap:
            trace.capped = True
            break
        if cur_info is None:
            cur_info = translator.target_info(prefix)
        i = len(outputs) + 1
        if src_done or policy.should_write(i, len(src), src_sum, tgt_sum + cur_info, tgt_sum):
            g_history.append(len(src))
            tok = int(translator.predict(src, prefix, g_history))
            tgt_sum += cur_info
            cur_info = None
            trace.actions.append(Action(WRITE, tok, src_sum, tgt_sum))
            outputs.append(tok)
            prefix.append(tok)
        else:
            read()
    return outputs, trace


def schedule_from_infos(src_info: Sequence[float], tgt_info: Sequence[float], policy) -> Schedule:
    """Schedule produced by the streaming loop for fixed info vectors.

    The last source and target positions play the role of the EOS markers.
    """
    tr = ScriptedTranslator(src_info, tgt_info)
    _, trace = simulate(tr, tr.source_stream(), policy, max_len=len(tgt_info))
    return trace.schedule(len(src_info))


def renormalize(src_info: np.ndarray, tgt_info: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale the target vector so both sums are equal."""
    tgt = np.asarray(tgt_info, dtype=np.float64)
    return np.asarray(src_info, dtype=np.float64), tgt * (np.sum(src_info) / tgt.sum())


# -- training-time prefix masks -------------------------------------------------------

def build_simt_mask(src_info, tgt_info, K: float, n: int | None = None, m: int | None = None) -> np.ndarray:
    """``[m, n]`` visibility: row ``i`` sees source ``j`` iff ``j <= g_K(i)``."""
    src_info = np.asarray(src_info, dtype=np.float64)
    tgt_info = np.asarray(tgt_info, dtype=np.float64)
    n = len(src_info) if n is None else n
    m = len(tgt_info) if m is None else m
    vis = build_simt_mask_batch(src_info[None, :n], tgt_info[None, :m], K, np.array([n]), np.array([m]))
    return vis[0]


def build_simt_mask_batch(src_info, tgt_info, K: float, src_len, tgt_len) -> np.ndarray:
    """Batched :func:`build_simt_mask` over padded ``[B, N]`` / ``[B, M]`` infos.

    Padding rows see the whole real source so no row is ever empty.
    """
    src_info = np.asarray(src_info, dtype=np.float64)
    tgt_info = np.asarray(tgt_info, dtype=np.float64)
    B, N = src_info.shape
    M = tgt_info.shape[1]
    src_len = np.asarray(src_len)
    tgt_len = np.asarray(tgt_len)
    cols = np.arange(N)
    if K == math.inf:
        g = np.broadcast_to(src_len[:, None], (B, M))
    else:
        real_src = cols[None, :] < src_len[:, None]
        src_cum = np.cumsum(np.where(real_src, src_info, 0.0), axis=1)
        tgt_real = np.arange(M)[None, :] < tgt_len[:, None]
        thr = np.cumsum(np.where(tgt_real, tgt_info, 0.0), axis=1) + K
        # smallest j with src_cum[j-1] >= thr, i.e. one past the count of shortfalls
        short = (src_cum[:, None, :] < thr[:, :, None]) & real_src[:, None, :]
        g = np.minimum(short.sum(axis=2) + 1, src_len[:, None])
        g = np.where(tgt_real, g, src_len[:, None])
    return cols[None, None, :] < g[:, :, None]
