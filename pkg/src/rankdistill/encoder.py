"""Transformer encoder students: token embedding, post-LN encoder blocks,
a single 2-class ranking head, and the shared-body/multi-head variant.

A multi-head student is created by splitting a trained source model: the
first ``body_depth`` blocks become the shared body, the remaining blocks
(plus the output projection) are deep-copied into each ranking head. At
inference, head outputs are pooled by an exact mean (``math.fsum``), so
pooling is bit-invariant under head permutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import load_archive, save_archive
from .data import BOS_ID, EOS_ID, PAD_ID, SEP_ID
from .errors import ConfigurationError, ContractError
from .tensor import Tensor

TokenPair = tuple[Sequence[int], Sequence[int]]

INFERENCE_CHUNK = 128
_MASK_VALUE = -1e9
_INIT_STD = 0.02

POOLING_SPACES = ("logit_mean", "probability_mean")


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 64
    num_layers: int = 4
    num_attention_heads: int = 4
    feedforward_dim: int = 128
    max_sequence_len: int = 48
    dropout_rate: float = 0.0

    def __post_init__(self):
        dims = (self.vocab_size, self.hidden_dim, self.num_layers,
                self.num_attention_heads, self.feedforward_dim, self.max_sequence_len)
        if any(d <= 0 for d in dims):
            raise ConfigurationError(f"all dimensions must be positive: {self}")
        if self.hidden_dim % self.num_attention_heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_attention_heads {self.num_attention_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError(f"dropout_rate must be in [0, 1): {self.dropout_rate}")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers, "num_attention_heads": self.num_attention_heads,
            "feedforward_dim": self.feedforward_dim,
            "max_sequence_len": self.max_sequence_len, "dropout_rate": self.dropout_rate,
        }


def _normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(0.0, _INIT_STD, shape)


def _maybe_dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, T.constant(keep))


class TransformerBlock:
    """Post-LN block: self-attention + feedforward, each with residual + LN."""

    PARAM_KEYS = ("attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv",
                  "attn.wo", "attn.bo", "ln1.g", "ln1.b",
                  "ff.w1", "ff.b1", "ff.w2", "ff.b2", "ln2.g", "ln2.b")

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        d, ff = cfg.hidden_dim, cfg.feedforward_dim
        self.num_attention_heads = cfg.num_attention_heads
        self.head_dim = d // cfg.num_attention_heads
        p = T.parameter
        self.wq, self.wk, self.wv, self.wo = (p(_normal(rng, (d, d))) for _ in range(4))
        self.bq, self.bk, self.bv, self.bo = (p(np.zeros(d)) for _ in range(4))
        self.ln1_g, self.ln2_g = p(np.ones(d)), p(np.ones(d))
        self.ln1_b, self.ln2_b = p(np.zeros(d)), p(np.zeros(d))
        self.ff_w1 = p(_normal(rng, (d, ff)))
        self.ff_b1 = p(np.zeros(ff))
        self.ff_w2 = p(_normal(rng, (ff, d)))
        self.ff_b2 = p(np.zeros(d))

    def tensors(self) -> dict[str, Tensor]:
        return {
            "attn.wq": self.wq, "attn.bq": self.bq, "attn.wk": self.wk, "attn.bk": self.bk,
            "attn.wv": self.wv, "attn.bv": self.bv, "attn.wo": self.wo, "attn.bo": self.bo,
            "ln1.g": self.ln1_g, "ln1.b": self.ln1_b,
            "ff.w1": self.ff_w1, "ff.b1": self.ff_b1,
            "ff.w2": self.ff_w2, "ff.b2": self.ff_b2,
            "ln2.g": self.ln2_g, "ln2.b": self.ln2_b,
        }

    @classmethod
    def clone(cls, other: "TransformerBlock") -> "TransformerBlock":
        new = cls.__new__(cls)
        new.num_attention_heads = other.num_attention_heads
        new.head_dim = other.head_dim
        for attr, tensorsrc in [("wq", other.wq), ("bq", other.bq), ("wk", other.wk),
                                ("bk", other.bk), ("wv", other.wv), ("bv", other.bv),
                                ("wo", other.wo), ("bo", other.bo),
                                ("ln1_g", other.ln1_g), ("ln1_b", other.ln1_b),
                                ("ff_w1", other.ff_w1), ("ff_b1", other.ff_b1),
                                ("ff_w2", other.ff_w2), ("ff_b2", other.ff_b2),
                                ("ln2_g", other.ln2_g), ("ln2_b", other.ln2_b)]:
            setattr(new, attr, T.parameter(tensorsrc.data.copy()))
        return new

    def forward(self, x: Tensor, attn_mask: Tensor, dropout_rate: float = 0.0,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        batch, seq, dim = x.shape
        nh, hd = self.num_attention_heads, self.head_dim

        def heads(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (batch, seq, nh, hd)), (0, 2, 1, 3))

        q = heads(T.add(T.matmul(x, self.wq), self.bq))
        k = heads(T.add(T.matmul(x, self.wk), self.bk))
        v = heads(T.add(T.matmul(x, self.wv), self.bv))
        scores = T.mul_scalar(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
        attn = T.softmax(T.add(scores, attn_mask), axis=-1)
        attn = _maybe_dropout(attn, dropout_rate, rng)
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (batch, seq, dim))
        ctx = T.add(T.matmul(ctx, self.wo), self.bo)
        ctx = _maybe_dropout(ctx, dropout_rate, rng)
        x = T.layer_norm(T.add(x, ctx), self.ln1_g, self.ln1_b)
        h = T.gelu(T.add(T.matmul(x, self.ff_w1), self.ff_b1))
        h = T.add(T.matmul(h, self.ff_w2), self.ff_b2)
        h = _maybe_dropout(h, dropout_rate, rng)
        return T.layer_norm(T.add(x, h), self.ln2_g, self.ln2_b)


class _Projection:
    """2-class output read off the first-token representation."""

    def __init__(self, hidden_dim: int, rng: np.random.Generator):
        self.w = T.parameter(_normal(rng, (hidden_dim, 2)))
        self.b = T.parameter(np.zeros(2))

    @classmethod
    def clone(cls, other: "_Projection") -> "_Projection":
        new = cls.__new__(cls)
        new.w = T.parameter(other.w.data.copy())
        new.b = T.parameter(other.b.data.copy())
        return new

    def tensors(self) -> dict[str, Tensor]:
        return {"proj.w": self.w, "proj.b": self.b}

    def forward(self, rep: Tensor) -> Tensor:
        return T.add(T.matmul(rep, self.w), self.b)


class _Embedding:
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        self.tok = T.parameter(_normal(rng, (cfg.vocab_size, cfg.hidden_dim)))
        self.pos = T.parameter(_normal(rng, (cfg.max_sequence_len, cfg.hidden_dim)))

    @classmethod
    def clone(cls, other: "_Embedding") -> "_Embedding":
        new = cls.__new__(cls)
        new.tok = T.parameter(other.tok.data.copy())
        new.pos = T.parameter(other.pos.data.copy())
        return new

    def tensors(self) -> dict[str, Tensor]:
        return {"embed.tok": self.tok, "embed.pos": self.pos}

    def forward(self, ids: np.ndarray) -> Tensor:
        seq = ids.shape[1]
        return T.add(T.take_rows(self.tok, ids),
                     T.take_rows(self.pos, np.arange(seq)))


def pack_pairs(pairs: Sequence[TokenPair], max_len: int) -> tuple[np.ndarray, Tensor, int]:
    """Pack [BOS] question [SEP] answer [EOS] rows into an id matrix.

    Overflow truncates the answer side only; a question that cannot fit on
    its own is a contract violation. Returns (ids, additive attention mask,
    number of truncated pairs).
    """
    packed = []
    truncated = 0
    for q_tokens, a_tokens in pairs:
        budget = max_len - 3 - len(q_tokens)
        if budget < 0:
            raise ContractError(
                f"question of {len(q_tokens)} tokens cannot fit in max_sequence_len {max_len}")
        if len(a_tokens) > budget:
            a_tokens = list(a_tokens)[:budget]
            truncated += 1
        packed.append([BOS_ID, *q_tokens, SEP_ID, *a_tokens, EOS_ID])
    width = max(len(row) for row in packed)
    ids = np.full((len(packed), width), PAD_ID, dtype=np.int64)
    mask = np.full((len(packed), 1, 1, width), _MASK_VALUE)
    for i, row in enumerate(packed):
        ids[i, :len(row)] = row
        mask[i, :, :, :len(row)] = 0.0
    return ids, T.constant(mask), truncated


class StudentModel:
    """Token embeddings, ``num_layers`` encoder blocks, one ranking head."""

    kind = "student"

    def __init__(self, cfg: EncoderConfig, seed: int = 0, model_id: str = ""):
        self.cfg = cfg
        self.model_id = model_id or f"student_seed{seed}"
        self.truncation_count = 0
        rng = np.random.default_rng(seed)
        self.embedding = _Embedding(cfg, rng)
        self.blocks = [TransformerBlock(cfg, rng) for _ in range(cfg.num_layers)]
        self.projection = _Projection(cfg.hidden_dim, rng)

    # -- parameter plumbing ------------------------------------------------
    def params(self) -> dict[str, Tensor]:
        out = dict(self.embedding.tensors())
        for i, block in enumerate(self.blocks):
            out.update({f"block.{i}.{k}": t for k, t in block.tensors().items()})
        out.update(self.projection.tensors())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.params()
        if set(state) != set(params):
            missing = set(params) ^ set(state)
            raise ContractError(f"state does not match model parameters: {sorted(missing)}")
        for name, arr in state.items():
            if params[name].data.shape != arr.shape:
                raise ContractError(f"shape mismatch for {name}: "
                                    f"{params[name].data.shape} vs {arr.shape}")
            params[name].data = np.array(arr, dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.params().values():
            t.zero_grad()

    # -- forward -----------------------------------------------------------
    def _encode(self, ids: np.ndarray, mask: Tensor,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        x = self.embedding.forward(ids)
        x = _maybe_dropout(x, self.cfg.dropout_rate, rng)
        for i, block in enumerate(self.blocks):
            x = block.forward(x, mask, self.cfg.dropout_rate, rng)
            T.check_finite(x, f"block {i}")
        return x

    def forward_ids(self, ids: np.ndarray, mask: Tensor,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
        rep = T.select_token(self._encode(ids, mask, rng), 0)
        return self.projection.forward(rep)

    def forward_pairs(self, pairs: Sequence[TokenPair],
                      rng: Optional[np.random.Generator] = None) -> Tensor:
        ids, mask, truncated = pack_pairs(pairs, self.cfg.max_sequence_len)
        self.truncation_count += truncated
        return self.forward_ids(ids, mask, rng)

    def encode_pair(self, question_tokens: Sequence[int],
                    answer_tokens: Sequence[int]) -> np.ndarray:
        """Final-layer representation at position 0 for one packed pair."""
        ids, mask, truncated = pack_pairs([(question_tokens, answer_tokens)],
                                          self.cfg.max_sequence_len)
        self.truncation_count += truncated
        return self._encode(ids, mask).data[0, 0, :].copy()

    def logits_pairs(self, pairs: Sequence[TokenPair],
                     chunk: int = INFERENCE_CHUNK) -> np.ndarray:
        """Inference-mode logits for many pairs, chunked; no tape involved."""
        out = np.empty((len(pairs), 2))
        for start in range(0, len(pairs), chunk):
            out[start:start + chunk] = self.forward_pairs(pairs[start:start + chunk]).data
        return out

    def score_pairs(self, pairs: Sequence[TokenPair], chunk: int = INFERENCE_CHUNK) -> np.ndarray:
        """p(correct) per pair: softmax over the 2-class logits, class 1."""
        logits = self.logits_pairs(pairs, chunk)
        return T.softmax(T.constant(logits), axis=-1).data[:, 1].copy()

    # -- persistence ---------------------------------------------------------
    def checkpoint_meta(self) -> dict:
        return {"kind": self.kind, "model_id": self.model_id,
                "encoder": self.cfg.to_dict()}

    def save(self, path: str | Path) -> None:
        save_archive(path, {k: t.data for k, t in self.params().items()},
                     meta=self.checkpoint_meta())

    @classmethod
    def from_meta(cls, meta: dict) -> "StudentModel":
        cfg = EncoderConfig(**meta["encoder"])
        model = cls(cfg, seed=0, model_id=meta.get("model_id", ""))
        return model


@dataclass(frozen=True)
class MultiHeadConfig:
    """Split geometry: ``body_depth`` shared blocks feeding ``num_ranking_heads``
    heads of ``head_depth`` blocks each."""

    body_depth: int
    num_ranking_heads: int
    head_depth: int
    head_loss_weights: tuple[float, ...] = ()
    pooling_space: str = "logit_mean"

    def __post_init__(self):
        if self.body_depth < 1 or self.head_depth < 1:
            raise ConfigurationError(
                f"body_depth and head_depth must be >= 1: {self}")
        if self.num_ranking_heads < 1:
            raise ConfigurationError(f"need at least one ranking head: {self}")
        weights = self.head_loss_weights or tuple(1.0 for _ in range(self.num_ranking_heads))
        if len(weights) != self.num_ranking_heads:
            raise ConfigurationError(
                f"{len(weights)} head weights for {self.num_ranking_heads} heads")
        if any(w < 0 for w in weights):
            raise ConfigurationError(f"head weights must be nonnegative: {weights}")
        object.__setattr__(self, "head_loss_weights", tuple(float(w) for w in weights))
        if self.pooling_space not in POOLING_SPACES:
            raise ConfigurationError(
                f"pooling_space must be one of {POOLING_SPACES}: {self.pooling_space!r}")

    def to_dict(self) -> dict:
        return {"body_depth": self.body_depth, "num_ranking_heads": self.num_ranking_heads,
                "head_depth": self.head_depth,
                "head_loss_weights": list(self.head_loss_weights),
                "pooling_space": self.pooling_space}


class _RankingHead:
    def __init__(self, blocks: list[TransformerBlock], projection: _Projection):
        self.blocks = blocks
        self.projection = projection

    def forward(self, body_out: Tensor, mask: Tensor, dropout_rate: float = 0.0,
                rng: Optional[np.random.Generator] = None,
                depth_offset: int = 0) -> Tensor:
        x = body_out
        for i, block in enumerate(self.blocks):
            x = block.forward(x, mask, dropout_rate, rng)
            T.check_finite(x, f"block {depth_offset + i}")
        return self.projection.forward(T.select_token(x, 0))


class MultiHeadStudent:
    """Shared encoder body plus k independent ranking heads."""

    kind = "multihead"

    def __init__(self, cfg: EncoderConfig, split: MultiHeadConfig,
                 embedding: _Embedding, body: list[TransformerBlock],
                 heads: list[_RankingHead], model_id: str = ""):
        if split.body_depth + split.head_depth != cfg.num_layers:
            raise ConfigurationError(
                f"body_depth {split.body_depth} + head_depth {split.head_depth} "
                f"!= source depth {cfg.num_layers}")
        self.cfg = cfg
        self.split = split
        self.embedding = embedding
        self.body = body
        self.heads = heads
        self.model_id = model_id or "multihead"
        self.truncation_count = 0

    # -- parameter plumbing ------------------------------------------------
    def params(self) -> dict[str, Tensor]:
        out = dict(self.embedding.tensors())
        for i, block in enumerate(self.body):
            out.update({f"body.{i}.{k}": t for k, t in block.tensors().items()})
        for j, head in enumerate(self.heads):
            for i, block in enumerate(head.blocks):
                out.update({f"head.{j}.{i}.{k}": t for k, t in block.tensors().items()})
            out.update({f"head.{j}.{k}": t for k, t in head.projection.tensors().items()})
        return out

    def head_params(self, j: int) -> dict[str, Tensor]:
        prefix = f"head.{j}."
        return {k: t for k, t in self.params().items() if k.startswith(prefix)}

    def body_params(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params().items()
                if k.startswith("body.") or k.startswith("embed.")}

    state = StudentModel.state
    load_state = StudentModel.load_state
    zero_grad = StudentModel.zero_grad

    # -- forward -----------------------------------------------------------
    def _body_out(self, ids: np.ndarray, mask: Tensor,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
        x = self.embedding.forward(ids)
        x = _maybe_dropout(x, self.cfg.dropout_rate, rng)
        for i, block in enumerate(self.body):
            x = block.forward(x, mask, self.cfg.dropout_rate, rng)
            T.check_finite(x, f"block {i}")
        return x

    def forward_heads_ids(self, ids: np.ndarray, mask: Tensor,
                          rng: Optional[np.random.Generator] = None) -> list[Tensor]:
        body_out = self._body_out(ids, mask, rng)
        return [head.forward(body_out, mask, self.cfg.dropout_rate, rng,
                             depth_offset=self.split.body_depth)
                for head in self.heads]

    def forward_heads(self, pairs: Sequence[TokenPair],
                      rng: Optional[np.random.Generator] = None) -> list[Tensor]:
        ids, mask, truncated = pack_pairs(pairs, self.cfg.max_sequence_len)
        self.truncation_count += truncated
        return self.forward_heads_ids(ids, mask, rng)

    def pooled_output(self, pairs: Sequence[TokenPair]) -> tuple[np.ndarray, np.ndarray]:
        """(pooled, per_head) outputs in the configured pooling space.

        ``pooled`` has shape (batch, 2): mean of per-head logits for
        ``logit_mean``, mean of per-head softmax probabilities for
        ``probability_mean``. ``per_head`` has shape (k, batch, 2) and always
        holds raw logits. The mean uses exact summation, so the pooled
        output is bit-identical under any permutation of the heads.
        """
        head_logits = np.stack([h.data for h in self.forward_heads(pairs)])
        if self.split.pooling_space == "probability_mean":
            stacked = np.stack([T.softmax(T.constant(h), axis=-1).data for h in head_logits])
        else:
            stacked = head_logits
        k, batch, classes = stacked.shape
        pooled = np.empty((batch, classes))
        for b in range(batch):
            for c in range(classes):
                pooled[b, c] = math.fsum(stacked[:, b, c]) / k
        return pooled, head_logits

    def logits_pairs(self, pairs: Sequence[TokenPair],
                     chunk: int = INFERENCE_CHUNK) -> np.ndarray:
        """Pooled output per pair (logit-space only), chunked."""
        out = np.empty((len(pairs), 2))
        for start in range(0, len(pairs), chunk):
            out[start:start + chunk] = self.pooled_output(pairs[start:start + chunk])[0]
        return out

    def head_logits_pairs(self, pairs: Sequence[TokenPair],
                          chunk: int = INFERENCE_CHUNK) -> np.ndarray:
        out = np.empty((len(self.heads), len(pairs), 2))
        for start in range(0, len(pairs), chunk):
            for j, h in enumerate(self.forward_heads(pairs[start:start + chunk])):
                out[j, start:start + chunk] = h.data
        return out

    def score_pairs(self, pairs: Sequence[TokenPair], chunk: int = INFERENCE_CHUNK) -> np.ndarray:
        """p(correct) per pair from the pooled output."""
        scores = np.empty(len(pairs))
        for start in range(0, len(pairs), chunk):
            pooled, _ = self.pooled_output(pairs[start:start + chunk])
            if self.split.pooling_space == "probability_mean":
                scores[start:start + chunk] = pooled[:, 1]
            else:
                scores[start:start + chunk] = T.softmax(T.constant(pooled), axis=-1).data[:, 1]
        return scores

    # -- persistence ---------------------------------------------------------
    def checkpoint_meta(self) -> dict:
        return {"kind": self.kind, "model_id": self.model_id,
                "encoder": self.cfg.to_dict(), "split": self.split.to_dict()}

    def save(self, path: str | Path) -> None:
        save_archive(path, {k: t.data for k, t in self.params().items()},
                     meta=self.checkpoint_meta())

    @classmethod
    def from_meta(cls, meta: dict) -> "MultiHeadStudent":
        cfg = EncoderConfig(**meta["encoder"])
        split = MultiHeadConfig(
            body_depth=meta["split"]["body_depth"],
            num_ranking_heads=meta["split"]["num_ranking_heads"],
            head_depth=meta["split"]["head_depth"],
            head_loss_weights=tuple(meta["split"]["head_loss_weights"]),
            pooling_space=meta["split"]["pooling_space"])
        source = StudentModel(cfg, seed=0)
        model = split_into_heads(source, split.body_depth, split.num_ranking_heads,
                                 split.head_loss_weights, split.pooling_space)
        model.model_id = meta.get("model_id", "")
        return model


def split_into_heads(source: StudentModel, body_depth: int, num_ranking_heads: int,
                     head_loss_weights: Sequence[float] | None = None,
                     pooling_space: str = "logit_mean",
                     model_id: str = "") -> MultiHeadStudent:
    """Split a trained source model into shared body + replicated heads.

    The body takes the first ``body_depth`` blocks; each head starts as a
    deep copy of the remaining blocks plus the source output projection.
    The source model is left untouched.
    """
    n = source.cfg.num_layers
    if body_depth >= n:
        raise ConfigurationError(
            f"body_depth {body_depth} must be < source depth {n}")
    if body_depth < 1:
        raise ConfigurationError(f"body_depth must be >= 1, got {body_depth}")
    if num_ranking_heads < 1:
        raise ConfigurationError(f"need at least one head, got {num_ranking_heads}")
    split = MultiHeadConfig(
        body_depth=body_depth, num_ranking_heads=num_ranking_heads,
        head_depth=n - body_depth,
        head_loss_weights=tuple(head_loss_weights) if head_loss_weights else (),
        pooling_space=pooling_space)
    embedding = _Embedding.clone(source.embedding)
    body = [TransformerBlock.clone(b) for b in source.blocks[:body_depth]]
    heads = [
        _RankingHead([TransformerBlock.clone(b) for b in source.blocks[body_depth:]],
                     _Projection.clone(source.projection))
        for _ in range(num_ranking_heads)
    ]
    return MultiHeadStudent(source.cfg, split, embedding, body, heads,
                            model_id=model_id or f"{source.model_id}_split")


def load_model(path: str | Path):
    """Rebuild a student or multi-head student from a checkpoint archive."""
    state, meta = load_archive(path)
    kind = meta.get("kind")
    if kind == "student":
        model = StudentModel.from_meta(meta)
    elif kind == "multihead":
        model = MultiHeadStudent.from_meta(meta)
    else:
        raise ConfigurationError(f"unknown checkpoint kind {kind!r} in {path}")
    model.load_state(state)
    return model
