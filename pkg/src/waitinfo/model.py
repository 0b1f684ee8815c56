"""Info-aware Transformer encoder/decoder.

Self-attention everywhere is info-aware (each token's score to itself is
shifted by ``info - 1``) and every decoder cross-attention is
info-consistent (weights rescaled by ``2 - |I_tgt - I_src|`` and
renormalised).  Both can be switched off for ablations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as T
from .info import FrequencyInfo, InfoQuantizerParams, norm_info, quantize_info
from .policy import build_simt_mask_batch
from .tensor import MASK_VALUE, Tensor
from .vocab import BOS, EOS, PAD

INFO_PROVIDERS = ("attention", "frequency", "norm")
# config-file spellings of the attention ablations
DISABLE_FLAGS = {"disable_info_aware_self_attn": "info_self_attn",
                 "disable_info_consistent_cross_attn": "info_cross_attn"}


@dataclass
class ModelConfig:
    src_vocab: int = 40
    tgt_vocab: int = 40
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn: int = 128
    dropout: float = 0.1
    max_len: int = 64
    info_provider: str = "attention"
    fix_src_info_one: bool = False
    fix_tgt_info_one: bool = False
    info_self_attn: bool = True
    info_cross_attn: bool = True
    strict_prefix: bool = False

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.info_provider not in INFO_PROVIDERS:
            raise ValueError(f"unknown info_provider {self.info_provider!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        for alias, name in DISABLE_FLAGS.items():
            if alias in data:
                data[name] = not data.pop(alias)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


# -- attention primitives --------------------------------------------------------

def scaled_scores(q: Tensor, k: Tensor) -> Tensor:
    if q.shape[-1] != k.shape[-1]:
        raise T.ShapeError("dot_product_scores", q.shape, k.shape)
    return (q @ k.transpose()) * (1.0 / math.sqrt(q.shape[-1]))


def dot_product_scores(Q, K, w_q, w_k) -> Tensor:
    """``(Q W^Q)(K W^K)^T / sqrt(d_k)`` for ``Q: [q, d]`` and ``K: [k, d]``."""
    Q, K, w_q, w_k = map(T.as_tensor, (Q, K, w_q, w_k))
    if Q.shape[-1] != w_q.shape[0] or K.shape[-1] != w_k.shape[0]:
        raise T.ShapeError("dot_product_scores", Q.shape, K.shape, w_q.shape, w_k.shape)
    return scaled_scores(Q @ w_q, K @ w_k)


def _causal(L: int) -> np.ndarray:
    return np.triu(np.ones((L, L), dtype=bool), k=1)


def _info_column(info: Tensor, ndim: int) -> Tensor:
    # [..., L] -> [..., 1(heads)..., L, 1] aligned with scores of rank ndim
    lead = info.shape[:-1]
    pad = ndim - info.ndim - 1
    return info.reshape(lead + (1,) * pad + (info.shape[-1], 1))


def info_aware_self_attention(scores, info, causal: bool = False, mask=None) -> Tensor:
    """Softmax of ``scores`` after adding ``info_i - 1`` to every diagonal entry.

    ``scores`` is ``[..., L, L]``; ``info`` is ``[L]`` or ``[B, L]`` (shared by
    all heads).  ``mask`` marks blocked keys with True.
    """
    scores, info = T.as_tensor(scores), T.as_tensor(info)
    L = scores.shape[-1]
    if scores.shape[-2] != L or info.shape[-1] != L:
        raise T.ShapeError("info_aware_self_attention", scores.shape, info.shape)
    eye = np.eye(L)
    biased = scores + _info_column(info - 1.0, scores.ndim) * eye
    return _masked_softmax(biased, causal, mask)


def _masked_softmax(scores: Tensor, causal: bool, mask) -> Tensor:
    blocked = None
    if causal:
        blocked = _causal(scores.shape[-1])
    if mask is not None:
        blocked = mask if blocked is None else (blocked | mask)
    if blocked is not None:
        scores = T.masked_fill(scores, blocked, MASK_VALUE)
    return T.softmax(scores)


def plain_attention(scores, causal: bool = False, mask=None) -> Tensor:
    return _masked_softmax(T.as_tensor(scores), causal, mask)


def _consistency_weight(alpha_shape, tgt_info: Tensor, src_info: Tensor) -> Tensor:
    """``2 - |I_tgt - I_src|`` laid out to broadcast against ``alpha_shape``."""
    ndim = len(alpha_shape)
    if ndim == 1:
        tgt, src = tgt_info.reshape((1,)), src_info
    elif ndim == 2:
        tgt, src = tgt_info.reshape((-1, 1)), src_info.reshape((1, -1))
    elif ndim == 4:
        B = alpha_shape[0]
        tgt = tgt_info.reshape((B, 1, -1, 1))
        src = src_info.reshape((B, 1, 1, -1))
    else:
        raise T.ShapeError("info_consistent_cross_attention", alpha_shape, tgt_info.shape, src_info.shape)
    try:
        np.broadcast_shapes(tuple(alpha_shape), np.broadcast_shapes(tgt.shape, src.shape))
    except ValueError:
        raise T.ShapeError("info_consistent_cross_attention", alpha_shape, tgt_info.shape,
                           src_info.shape) from None
    return 2.0 - T.abs_(tgt - src)


def info_consistent_cross_attention(alpha, tgt_info, src_info) -> Tensor:
    """Rescale cross-attention by info consistency and renormalise each row.

    Shapes: ``alpha [n]`` with scalar ``tgt_info`` and ``src_info [n]``;
    ``alpha [m, n]`` with ``[m]``/``[n]``; or ``alpha [B, H, m, n]`` with
    ``[B, m]``/``[B, n]``.
    """
    alpha, tgt_info, src_info = map(T.as_tensor, (alpha, tgt_info, src_info))
    raw = alpha * _consistency_weight(alpha.shape, tgt_info, src_info)
    denom = raw.sum(axis=-1, keepdims=True)
    if np.any(denom.data <= 0):
        raise ZeroDivisionError("info-consistent cross-attention row has zero mass")
    return raw / denom


def info_consistent_attention(scores, tgt_info, src_info, mask=None) -> Tensor:
    """Same weights as ``info_consistent_cross_attention(softmax(scores))``.

    The reweighting is folded into the softmax, so unit infos give exactly
    the plain softmax (the constant factor 2 cancels without rounding).
    """
    scores, tgt_info, src_info = map(T.as_tensor, (scores, tgt_info, src_info))
    if mask is not None:
        scores = T.masked_fill(scores, mask, MASK_VALUE)
    weight = _consistency_weight(scores.shape, tgt_info, src_info)
    return T.weighted_softmax(scores, weight)


def sinusoid_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, dim / d)
    table = np.zeros((max_len, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d // 2])
    return table


# -- the model --------------------------------------------------------------------

class InfoTransformer:
    """Encoder/decoder with two info quantizers.

    Parameters live in ``self.params`` (an insertion-ordered dict); that order
    is the checkpoint order.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.src_frequency: FrequencyInfo | None = None
        self.tgt_frequency: FrequencyInfo | None = None
        self._pe = sinusoid_table(config.max_len, config.d_model)
        rng = np.random.default_rng(seed)
        self._build(rng)

    # parameters ----------------------------------------------------------------
    def _add(self, name: str, value: np.ndarray) -> Tensor:
        p = T.parameter(value)
        self.params[name] = p
        return p

    def _linear(self, name, fan_in, fan_out, rng, bias=False):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        self._add(f"{name}.w", rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        if bias:
            self._add(f"{name}.b", np.zeros(fan_out))

    def _norm(self, name, d):
        self._add(f"{name}.g", np.ones(d))
        self._add(f"{name}.b", np.zeros(d))

    def _build(self, rng):
        c = self.config
        d = c.d_model
        self._add("src_emb", rng.normal(0.0, d ** -0.5, size=(c.src_vocab, d)))
        self._add("tgt_emb", rng.normal(0.0, d ** -0.5, size=(c.tgt_vocab, d)))
        for side in ("src_quant", "tgt_quant"):
            q = InfoQuantizerParams.init(d, d, rng)
            for key, t in zip(("w1", "b1", "w2", "b2", "w3", "b3"), q.tensors()):
                self.params[f"{side}.{key}"] = t
        for layer in range(c.enc_layers):
            pre = f"enc{layer}"
            self._norm(f"{pre}.ln1", d)
            for proj in ("q", "k", "v", "o"):
                self._linear(f"{pre}.self.{proj}", d, d, rng)
            self._norm(f"{pre}.ln2", d)
            self._linear(f"{pre}.ff1", d, c.ffn, rng, bias=True)
            self._linear(f"{pre}.ff2", c.ffn, d, rng, bias=True)
        self._norm("enc.ln", d)
        for layer in range(c.dec_layers):
            pre = f"dec{layer}"
            self._norm(f"{pre}.ln1", d)
            for proj in ("q", "k", "v", "o"):
                self._linear(f"{pre}.self.{proj}", d, d, rng)
            self._norm(f"{pre}.ln2", d)
            for proj in ("q", "k", "v", "o"):
                self._linear(f"{pre}.cross.{proj}", d, d, rng)
            self._norm(f"{pre}.ln3", d)
            self._linear(f"{pre}.ff1", d, c.ffn, rng, bias=True)
            self._linear(f"{pre}.ff2", c.ffn, d, rng, bias=True)
        self._norm("dec.ln", d)
        self._linear("out", d, c.tgt_vocab, rng, bias=True)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def quantizer(self, side: str) -> InfoQuantizerParams:
        p = self.params
        return InfoQuantizerParams(*(p[f"{side}_quant.{k}"] for k in ("w1", "b1", "w2", "b2", "w3", "b3")))

    def set_frequency_tables(self, src_counts, tgt_counts) -> None:
        self.src_frequency = FrequencyInfo(src_counts)
        self.tgt_frequency = FrequencyInfo(tgt_counts)

    # infos -----------------------------------------------------------------------
    def infos(self, side: str, ids: np.ndarray, emb: Tensor) -> Tensor:
        c = self.config
        if (side == "src" and c.fix_src_info_one) or (side == "tgt" and c.fix_tgt_info_one):
            return Tensor(np.ones(ids.shape))
        if c.info_provider == "attention":
            return quantize_info(emb, self.quantizer(side))
        if c.info_provider == "frequency":
            table = self.src_frequency if side == "src" else self.tgt_frequency
            if table is None:
                raise RuntimeError("frequency info provider needs corpus counts")
            return Tensor(np.stack([table(row) for row in np.atleast_2d(ids)]).reshape(ids.shape))
        emb_table = self.params[f"{side}_emb"].data
        return Tensor(norm_info(emb_table, ids.reshape(-1)).reshape(ids.shape))

    # blocks -----------------------------------------------------------------------
    def _ln(self, name, x):
        return T.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _proj(self, name, x):
        return x @ self.params[f"{name}.w"]

    def _heads(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        c = self.config
        return x.reshape((B, L, c.heads, c.head_dim)).transpose((0, 2, 1, 3))

    def _merge(self, x: Tensor) -> Tensor:
        B, H, L, dh = x.shape
        return x.transpose((0, 2, 1, 3)).reshape((B, L, H * dh))

    def _attention(self, name, x_q, x_kv, *, kind, mask, causal=False, info_q=None, info_k=None):
        c = self.config
        q = self._heads(self._proj(f"{name}.q", x_q))
        k = self._heads(self._proj(f"{name}.k", x_kv))
        v = self._heads(self._proj(f"{name}.v", x_kv))
        scores = scaled_scores(q, k)
        if kind == "self":
            if c.info_self_attn:
                weights = info_aware_self_attention(scores, info_q, causal=causal, mask=mask)
            else:
                weights = plain_attention(scores, causal=causal, mask=mask)
        else:
            if c.info_cross_attn:
                weights = info_consistent_attention(scores, info_q, info_k, mask=mask)
            else:
                weights = plain_attention(scores, mask=mask)
        return self._proj(f"{name}.o", self._merge(weights @ v))

    def _ffn(self, name, x, rng):
        p = self.params
        h = T.relu(x @ p[f"{name}.ff1.w"] + p[f"{name}.ff1.b"])
        h = T.dropout(h, self.config.dropout, rng)
        return h @ p[f"{name}.ff2.w"] + p[f"{name}.ff2.b"]

    def _embed(self, side, ids):
        c = self.config
        L = ids.shape[-1]
        if L > c.max_len:
            raise ValueError(f"sequence length {L} exceeds max_len {c.max_len}")
        emb = T.embedding(self.params[f"{side}_emb"], ids)
        x = emb * math.sqrt(c.d_model) + self._pe[:L]
        return emb, x

    # encoder / decoder ----------------------------------------------------------------
    def encode_batch(self, src: np.ndarray, src_pad: np.ndarray | None = None, rng=None):
        """Encode ``src [B, n]``; returns ``(states, I_src)``."""
        c = self.config
        emb, x = self._embed("src", src)
        info = self.infos("src", src, emb)
        x = T.dropout(x, c.dropout, rng)
        key_mask = None if src_pad is None else src_pad[:, None, None, :]
        causal = c.strict_prefix
        for layer in range(c.enc_layers):
            pre = f"enc{layer}"
            xn = self._ln(f"{pre}.ln1", x)
            h = self._attention(f"{pre}.self", xn, xn, kind="self", mask=key_mask, causal=causal, info_q=info)
            x = x + T.dropout(h, c.dropout, rng)
            h = self._ffn(pre, self._ln(f"{pre}.ln2", x), rng)
            x = x + T.dropout(h, c.dropout, rng)
        return self._ln("enc.ln", x), info

    def decode_batch(self, tgt_in, states, src_info, cross_visible, tgt_pad=None, src_pad=None, rng=None):
        """Decoder logits ``[B, m, V]`` plus target infos ``[B, m]``.

        ``cross_visible [B, m, n]`` is True where query ``i`` may see source ``j``.
        """
        c = self.config
        emb, x = self._embed("tgt", tgt_in)
        info = self.infos("tgt", tgt_in, emb)
        x = T.dropout(x, c.dropout, rng)
        self_mask = None if tgt_pad is None else tgt_pad[:, None, None, :]
        cross_block = ~np.asarray(cross_visible, dtype=bool)[:, None, :, :]
        if src_pad is not None:
            cross_block = cross_block | src_pad[:, None, None, :]
        for layer in range(c.dec_layers):
            pre = f"dec{layer}"
            xn = self._ln(f"{pre}.ln1", x)
            h = self._attention(f"{pre}.self", xn, xn, kind="self", mask=self_mask, causal=True, info_q=info)
            x = x + T.dropout(h, c.dropout, rng)
            h = self._attention(f"{pre}.cross", self._ln(f"{pre}.ln2", x), states, kind="cross",
                                mask=cross_block, info_q=info, info_k=src_info)
            x = x + T.dropout(h, c.dropout, rng)
            h = self._ffn(pre, self._ln(f"{pre}.ln3", x), rng)
            x = x + T.dropout(h, c.dropout, rng)
        x = self._ln("dec.ln", x)
        logits = x @ self.params["out.w"] + self.params["out.b"]
        return logits, info

    def forward(self, batch, K: float, rng=None):
        """Teacher-forced pass under the prefix mask induced by lagging info ``K``.

        Returns ``(logits, src_info, tgt_info, cross_visible)``.
        """
        states, src_info = self.encode_batch(batch.src, batch.src_pad, rng)
        emb = T.embedding(self.params["tgt_emb"], batch.tgt_in)
        with T.no_grad():
            tgt_info_np = self.infos("tgt", batch.tgt_in, emb).data
        visible = build_simt_mask_batch(src_info.data, tgt_info_np, K, batch.src_len, batch.tgt_len)
        logits, tgt_info = self.decode_batch(batch.tgt_in, states, src_info, visible,
                                             batch.tgt_pad, batch.src_pad, rng)
        return logits, src_info, tgt_info, visible

    # incremental inference --------------------------------------------------------------
    def encode(self, source_tokens, j: int | None = None):
        """Encode the first ``j`` source tokens; positions beyond ``j`` are never seen.

        Returns ``(states [j, d], src_info [j])``.
        """
        src = np.asarray(source_tokens, dtype=np.int64)
        n = src.shape[-1]
        j = n if j is None else j
        if not 1 <= j <= n:
            raise ValueError(f"visible prefix {j} outside [1, {n}]")
        with T.no_grad():
            states, info = self.encode_batch(src[None, :j])
        return states.data[0], info.data[0]

    def decode_step(self, generated_prefix, source_states, src_info, g_history=None):
        """Logits for the next target token and the info of the current step.

        ``g_history[r]`` is how many source states query ``r`` could see;
        by default every query sees all of ``source_states``.
        """
        states = np.asarray(source_states)
        if states.ndim != 2 or states.shape[0] == 0:
            raise ValueError("decode_step needs at least one source state")
        prefix = np.asarray(generated_prefix, dtype=np.int64)
        if prefix.size == 0:
            raise ValueError("decode_step needs a nonempty target prefix")
        i, n = prefix.size, states.shape[0]
        visible = np.ones((1, i, n), dtype=bool)
        if g_history is not None:
            for r, g in enumerate(list(g_history)[-i:]):
                visible[0, r, min(int(g), n):] = False
        with T.no_grad():
            logits, info = self.decode_batch(prefix[None, :], Tensor(states[None]),
                                             T.as_tensor(np.asarray(src_info)[None]), visible)
        return logits.data[0, -1], float(info.data[0, -1])

    def greedy_full(self, source_tokens, max_len: int | None = None) -> list[int]:
        """Full-sentence greedy decoding (whole source visible)."""
        src = list(source_tokens)
        states, src_info = self.encode(src)
        limit = max_len if max_len is not None else 2 * len(src) + 10
        prefix = [BOS]
        while len(prefix) - 1 < limit:
            logits, _ = self.decode_step(prefix, states, src_info)
            tok = int(np.argmax(logits))
            prefix.append(tok)
            if tok == EOS:
                break
        return prefix[1:]


class ModelTranslator:
    """Adapter running an :class:`InfoTransformer` inside :func:`policy.simulate`."""

    bos, eos = BOS, EOS

    def __init__(self, model: InfoTransformer):
        self.model = model
        self._src_cache: dict[int, float] = {}
        self._tgt_cache: dict[int, float] = {}
        self._enc_key: tuple | None = None
        self._enc = None

    def _token_info(self, side, token, cache):
        if token not in cache:
            ids = np.array([[token]], dtype=np.int64)
            with T.no_grad():
                emb = T.embedding(self.model.params[f"{side}_emb"], ids)
                cache[token] = float(self.model.infos(side, ids, emb).data[0, 0])
        return cache[token]

    def source_info(self, token: int) -> float:
        return self._token_info("src", int(token), self._src_cache)

    def target_info(self, prefix) -> float:
        return self._token_info("tgt", int(prefix[-1]), self._tgt_cache)

    def predict(self, src_prefix, tgt_prefix, g_history) -> int:
        key = tuple(src_prefix)
        if self._enc_key != key:
            self._enc = self.model.encode(src_prefix)
            self._enc_key = key
        states, src_info = self._enc
        logits, _ = self.model.decode_step(tgt_prefix, states, src_info, g_history)
        return int(np.argmax(logits))

    def reset(self) -> None:
        self._enc_key, self._enc = None, None
