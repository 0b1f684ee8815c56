"""Multi-path wait-info training and evaluation over synthetic corpora."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import yaml

from . import tensor as T
from .bleu import bleu
from .corpus import SentencePair, generate_corpus, make_batch, token_counts, VOCAB_SIZE
from .info import info_sum_loss, total_loss
from .latency import LatencyReport, corpus_report, csv_row, format_csv
from .model import DISABLE_FLAGS, InfoTransformer, ModelConfig, ModelTranslator
from .policy import (FULL_SENTENCE, WaitInfo, build_simt_mask, build_simt_mask_batch,  # noqa: F401
                     simulate)
from .vocab import BOS, EOS

log = logging.getLogger(__name__)

ZETA_MODES = ("mean", "src", "tgt")
LR_SCHEDULES = ("constant", "inverse_sqrt")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    task: str = "copy"
    train_size: int = 4000
    eval_size: int = 100
    corpus_seed: int = 1
    seed: int = 0
    steps: int = 3000
    batch_size: int = 32
    lr: float = 1e-3
    warmup: int = 200
    lr_schedule: str = "inverse_sqrt"
    clip: float = 1.0
    lam: float = 0.3
    zeta_mode: str = "mean"
    k_values: list = field(default_factory=lambda: list(range(1, 10)))
    full_sentence_prob: float = 0.1
    label_smoothing: float = 0.0
    log_every: int = 50
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        if self.zeta_mode not in ZETA_MODES:
            raise ValueError(f"zeta_mode must be one of {ZETA_MODES}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not self.k_values and self.full_sentence_prob <= 0:
            raise ValueError("empty K sampling range")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        model_keys = {f.name for f in fields(ModelConfig)} | set(DISABLE_FLAGS)
        model = dict(data.pop("model", {}) or {})
        for key in list(data):
            if key not in known and key in model_keys:
                model[key] = data.pop(key)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(model=ModelConfig.from_dict(model), **data)


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    """Read a YAML key-value config; ``overrides`` win over file keys."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    data.update(overrides or {})
    return TrainConfig.from_dict(data)


def sample_K(k_values: Sequence[float], rng: np.random.Generator, full_sentence_prob: float = 0.0) -> float:
    """One lagging-info value per batch; ``inf`` is the full-sentence path."""
    if full_sentence_prob > 0 and (not k_values or rng.random() < full_sentence_prob):
        return FULL_SENTENCE
    if not k_values:
        raise ValueError("empty K range")
    return float(k_values[int(rng.integers(len(k_values)))])


def zeta_for(batch, mode: str) -> np.ndarray:
    n = batch.src_len - 1
    m = batch.tgt_len - 1
    if mode == "src":
        return n.astype(np.float64)
    if mode == "tgt":
        return m.astype(np.float64)
    return (n + m) / 2.0


def batch_loss(model: InfoTransformer, batch, K: float, lam: float, zeta_mode: str = "mean",
               rng=None, label_smoothing: float = 0.0):
    """Differentiable total loss plus its float breakdown for one batch."""
    logits, src_info, tgt_info, _ = model.forward(batch, K, rng)
    ce = T.cross_entropy(logits, batch.tgt_out, weights=~batch.tgt_pad, label_smoothing=label_smoothing)
    info_loss = info_sum_loss(src_info, tgt_info, zeta_for(batch, zeta_mode),
                              src_mask=batch.src_content, tgt_mask=batch.tgt_content)
    loss = total_loss(ce, info_loss, lam)
    stats = {
        "ce": ce.item(),
        "sum": info_loss.item(),
        "total": loss.item(),
        "mean_src_info": float(src_info.data[batch.src_content].mean()),
        "mean_tgt_info": float(tgt_info.data[batch.tgt_content].mean()),
    }
    return loss, stats


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.98), eps=1e-9):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params, max_norm: float) -> float:
    sq = sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None)
    norm = math.sqrt(sq)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def learning_rate(config: TrainConfig, step: int) -> float:
    """Linear warmup, then constant or inverse-square-root decay."""
    if config.warmup <= 0:
        return config.lr
    if step < config.warmup:
        return config.lr * step / config.warmup
    if config.lr_schedule == "inverse_sqrt":
        return config.lr * math.sqrt(config.warmup / step)
    return config.lr


def build_model(config: TrainConfig, corpus: Sequence[SentencePair] | None = None) -> InfoTransformer:
    model = InfoTransformer(config.model, seed=config.seed)
    if config.model.info_provider == "frequency":
        if corpus is None:
            raise ValueError("frequency info provider needs the training corpus")
        model.set_frequency_tables(token_counts(p.src for p in corpus),
                                   token_counts([[BOS] + p.tgt for p in corpus], add_eos=False))
    return model


def train(config: TrainConfig, corpus: Sequence[SentencePair] | None = None, log_path=None,
          model: InfoTransformer | None = None):
    """Train and return ``(model, log_records)``.

    Each record averages the step statistics since the previous record.
    """
    if corpus is None:
        corpus = generate_corpus(config.task, config.train_size, config.corpus_seed)
    corpus = list(corpus)
    for p in corpus:
        if max(len(p.src), len(p.tgt)) + 1 > config.model.max_len:
            raise ValueError("corpus sentence longer than model max_len")
        if max(p.src + p.tgt) >= min(config.model.src_vocab, config.model.tgt_vocab):
            raise ValueError("corpus token id outside model vocabulary")
    model = model or build_model(config, corpus)
    rng = np.random.default_rng(config.seed + 1)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    records: list[dict] = []
    window: list[dict] = []
    fh = open(log_path, "w") if log_path else None
    try:
        for step in range(1, config.steps + 1):
            idx = rng.integers(len(corpus), size=config.batch_size)
            batch = make_batch([corpus[i] for i in idx])
            K = sample_K(config.k_values, rng, config.full_sentence_prob)
            opt.zero_grad()
            loss, stats = batch_loss(model, batch, K, config.lam, config.zeta_mode, rng, config.label_smoothing)
            if not math.isfinite(stats["total"]):
                raise TrainingDiverged(f"non-finite loss at step {step}: {stats} (K={K})")
            loss.backward()
            clip_grad_norm(params, config.clip)
            opt.step(learning_rate(config, step))
            window.append(stats)
            if step % config.log_every == 0 or step == config.steps:
                rec = {"step": step}
                for key in stats:
                    rec[key] = float(np.mean([w[key] for w in window]))
                window = []
                records.append(rec)
                if fh:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    fh.flush()
                log.info("step %d ce=%.4f sum=%.4f", step, rec["ce"], rec["sum"])
    finally:
        if fh:
            fh.close()
    return model, records


# -- evaluation ---------------------------------------------------------------------

def token_accuracy(model: InfoTransformer, pairs: Sequence[SentencePair]) -> float:
    """Full-sentence greedy accuracy, position-wise against ``tgt + EOS``."""
    right = total = 0
    for p in pairs:
        hyp = model.greedy_full(p.src + [EOS])
        ref = p.tgt + [EOS]
        right += sum(h == r for h, r in zip(hyp, ref))
        total += len(ref)
    return right / total


def simulate_corpus(model: InfoTransformer, pairs: Sequence[SentencePair], policy):
    """Simulate every sentence; returns ``(hypotheses, traces)`` (hypotheses drop EOS)."""
    translator = ModelTranslator(model)
    hyps, traces = [], []
    for p in pairs:
        translator.reset()
        out, trace = simulate(translator, p.src + [EOS], policy)
        hyps.append([t for t in out if t != EOS])
        traces.append(trace)
    return hyps, traces


def evaluate_policy(model, pairs, policy) -> tuple[float, LatencyReport, list]:
    hyps, traces = simulate_corpus(model, pairs, policy)
    refs = [p.tgt for p in pairs]
    reports = [LatencyReport.from_schedule(t.schedule(len(p.src) + 1)) for t, p in zip(traces, pairs)]
    return bleu(hyps, refs), corpus_report(reports), traces


def format_param(K) -> str:
    if K == FULL_SENTENCE:
        return "full"
    return f"{K:g}"


def sweep(model, pairs, K_list, include_current: bool = True) -> list[dict]:
    """One row per K, in K-list order."""
    rows = []
    for K in K_list:
        score, report, _ = evaluate_policy(model, pairs, WaitInfo(K, include_current))
        rows.append({"K": K, "bleu": score, "report": report,
                     "csv": csv_row("wait-info", format_param(K), score, report)})
    return rows


def sweep_csv(rows) -> str:
    return format_csv([r["csv"] for r in rows])


def parse_k_list(text: str) -> list[float]:
    """``"1..15"``, ``"1,2,5"`` or a mix; ``full``/``inf`` is the full-sentence K."""
    out: list[float] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(float(k) for k in range(int(lo), int(hi) + 1))
        elif part in ("full", "inf"):
            out.append(FULL_SENTENCE)
        else:
            out.append(float(part))
    if not out:
        raise ValueError(f"empty K list {text!r}")
    return out


def info_class_analysis(model: InfoTransformer, pairs: Sequence[SentencePair]) -> dict:
    """Summary statistics of learned source info per token class (C/F)."""
    if any(p.cls is None for p in pairs):
        raise ValueError("info_class_analysis needs class-labelled pairs")
    translator = ModelTranslator(model)
    values: dict[str, list[float]] = {}
    for p in pairs:
        for tok, c in zip(p.src, p.cls):
            values.setdefault(c, []).append(translator.source_info(tok))
    out = {}
    for c, vals in sorted(values.items()):
        arr = np.asarray(vals)
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        out[c] = {"mean": float(arr.mean()), "median": float(med), "q1": float(q1), "q3": float(q3),
                  "count": int(arr.size)}
    return out


def info_sum_ratios(model: InfoTransformer, pairs: Sequence[SentencePair], zeta_mode: str = "mean"):
    """Corpus means of ``|sum I_src - zeta|/zeta`` and ``|sum I_tgt - zeta|/zeta``."""
    src_dev, tgt_dev = [], []
    for start in range(0, len(pairs), 64):
        batch = make_batch(pairs[start:start + 64])
        with T.no_grad():
            emb_s = T.embedding(model.params["src_emb"], batch.src)
            emb_t = T.embedding(model.params["tgt_emb"], batch.tgt_in)
            si = model.infos("src", batch.src, emb_s).data
            ti = model.infos("tgt", batch.tgt_in, emb_t).data
        zeta = zeta_for(batch, zeta_mode)
        src_dev.extend(np.abs((si * batch.src_content).sum(1) - zeta) / zeta)
        tgt_dev.extend(np.abs((ti * batch.tgt_content).sum(1) - zeta) / zeta)
    return float(np.mean(src_dev)), float(np.mean(tgt_dev))


__all__ = [
    "TrainConfig", "load_config", "sample_K", "train", "batch_loss", "build_simt_mask",
    "token_accuracy", "simulate_corpus", "evaluate_policy", "sweep", "sweep_csv",
    "info_class_analysis", "info_sum_ratios", "parse_k_list", "TrainingDiverged", "VOCAB_SIZE",
]
