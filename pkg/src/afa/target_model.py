"""Single-block Transformer classifier exposing logits and a token-importance row."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor


@dataclass
class TargetOutput:
    logits: Tensor      # B x C
    attention: Tensor   # B x n, head-averaged row of the last live token
    full_attention: Tensor  # B x h x n x n
    pooled: Tensor      # B x d


class Encoder:
    """Embedding + one post-LN Transformer block + mean pooling over live tokens."""

    def __init__(self, vocab_size, d_model, n_heads, d_ff, rng, *, dropout=0.3,
                 pos_encoding=True, embed_scale=1.0, embeddings=None, prefix=""):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.vocab_size, self.d_model, self.n_heads, self.d_ff = vocab_size, d_model, n_heads, d_ff
        self.d_k = d_model // n_heads
        self.dropout = dropout
        self.pos_encoding = pos_encoding
        h, dk = n_heads, self.d_k
        emb = embeddings if embeddings is not None else rng.normal(0.0, embed_scale, (vocab_size, d_model))
        if emb.shape != (vocab_size, d_model):
            raise ValueError(f"embedding table has shape {emb.shape}")
        p = {}
        p["embedding"] = emb
        p["w_q"] = nx.xavier(rng, d_model, dk, (h, d_model, dk))
        p["w_k"] = nx.xavier(rng, d_model, dk, (h, d_model, dk))
        p["w_v"] = nx.xavier(rng, d_model, dk, (h, d_model, dk))
        p["w_o"] = nx.xavier(rng, d_model, d_model)
        p["ln1_gain"] = np.ones(d_model)
        p["ln1_bias"] = np.zeros(d_model)
        p["ff_w1"] = nx.xavier(rng, d_model, d_ff)
        p["ff_b1"] = np.zeros(d_ff)
        p["ff_w2"] = nx.xavier(rng, d_ff, d_model)
        p["ff_b2"] = np.zeros(d_model)
        p["ln2_gain"] = np.ones(d_model)
        p["ln2_bias"] = np.zeros(d_model)
        self.params = {prefix + k: Tensor(v, requires_grad=True, name=prefix + k) for k, v in p.items()}
        self._prefix = prefix
        self._pe_cache = np.zeros((0, d_model))

    def _p(self, name):
        return self.params[self._prefix + name]

    def _positions(self, n):
        if self._pe_cache.shape[0] < n:
            self._pe_cache = nx.sinusoidal_positions(max(n, 64), self.d_model)
        return self._pe_cache[:n]

    def encode(self, batch, training=False, rng=None):
        """Returns (pooled B x d, attention B x h x n x n, hidden B x n x d)."""
        ids = batch.token_ids
        live = batch.pad_mask
        b, n = ids.shape
        h, dk = self.n_heads, self.d_k
        x = nx.embedding(self._p("embedding"), ids)
        if self.pos_encoding:
            x = x + self._positions(n)
        xh = x.reshape(b, 1, n, self.d_model)
        q = xh @ self._p("w_q")
        k = xh @ self._p("w_k")
        v = xh @ self._p("w_v")
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
        scores = nx.masked_fill(scores, ~live[:, None, None, :], nx.MASK_LOGIT)
        attn = nx.softmax_rows(scores)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, n, self.d_model)
        ctx = nx.dropout(ctx @ self._p("w_o"), self.dropout, rng, training)
        x1 = nx.layer_norm(x + ctx, self._p("ln1_gain"), self._p("ln1_bias"))
        ff = nx.relu(x1 @ self._p("ff_w1") + self._p("ff_b1")) @ self._p("ff_w2") + self._p("ff_b2")
        ff = nx.dropout(ff, self.dropout, rng, training)
        x2 = nx.layer_norm(x1 + ff, self._p("ln2_gain"), self._p("ln2_bias"))
        weights = live / live.sum(axis=1, keepdims=True)
        pooled = (x2 * weights[:, :, None]).sum(axis=1)
        return pooled, attn, x2


class TargetModel:
    """Classifier whose last-live-token attention row serves as token importance."""

    def __init__(self, vocab_size, num_classes, rng, d_model=64, n_heads=4, d_ff=128,
                 dropout=0.3, pos_encoding=True, embed_scale=1.0, embeddings=None):
        self.num_classes = num_classes
        self.encoder = Encoder(vocab_size, d_model, n_heads, d_ff, rng, dropout=dropout,
                               pos_encoding=pos_encoding, embed_scale=embed_scale,
                               embeddings=embeddings)
        self.params = dict(self.encoder.params)
        self.params["cls_w"] = Tensor(nx.xavier(rng, d_model, num_classes), True, "cls_w")
        self.params["cls_b"] = Tensor(np.zeros(num_classes), True, "cls_b")

    def dims(self):
        e = self.encoder
        return {"kind": "target", "vocab_size": e.vocab_size, "d_model": e.d_model,
                "n_heads": e.n_heads, "d_ff": e.d_ff, "num_classes": self.num_classes,
                "pos_encoding": int(e.pos_encoding), "dropout": e.dropout}

    def forward(self, batch, training=False, rng=None):
        pooled, attn, _ = self.encoder.encode(batch, training, rng)
        logits = pooled @ self.params["cls_w"] + self.params["cls_b"]
        b = len(batch)
        last = batch.lengths - 1
        row = attn[np.arange(b), :, last, :]          # B x h x n
        a = row.mean(axis=1)
        return TargetOutput(logits, a, attn, pooled)

    __call__ = forward

    def predict(self, batch):
        with nx.no_grad():
            out = self.forward(batch)
        return out.logits.data.argmax(axis=1), out.attention.data


def classification_loss(out, labels):
    return nx.cross_entropy(out.logits, labels)
