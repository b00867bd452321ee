"""Mask detector: one Transformer block, mean pooling and a sigmoid head."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .corpus import MASK, UNK, Batch
from .numerics import Tensor
from .target_model import Encoder

P_FLOOR = nx.LOG_FLOOR
P_CEIL = 1.0 - nx.LOG_FLOOR


class Discriminator:
    """Outputs P(sequence was masked). Sees token ids only, never task labels."""

    def __init__(self, vocab_size, rng, d_model=64, n_heads=4, d_ff=128, dropout=0.3,
                 pos_encoding=True, mask_as_unk=False, embed_scale=1.0):
        self.mask_as_unk = mask_as_unk
        self.encoder = Encoder(vocab_size, d_model, n_heads, d_ff, rng, dropout=dropout,
                               pos_encoding=pos_encoding, embed_scale=embed_scale)
        self.params = dict(self.encoder.params)
        self.params["head_w"] = Tensor(nx.xavier(rng, d_model, 1), True, "head_w")
        self.params["head_b"] = Tensor(np.zeros(1), True, "head_b")

    def dims(self):
        e = self.encoder
        return {"kind": "discriminator", "vocab_size": e.vocab_size, "d_model": e.d_model,
                "n_heads": e.n_heads, "d_ff": e.d_ff, "pos_encoding": int(e.pos_encoding),
                "dropout": e.dropout, "mask_as_unk": int(self.mask_as_unk)}

    def _view(self, token_ids):
        ids = np.asarray(token_ids.token_ids if isinstance(token_ids, Batch) else token_ids)
        if self.mask_as_unk:
            ids = np.where(ids == MASK, UNK, ids)
        return Batch(ids, np.zeros(ids.shape[0], dtype=np.int64), ids != 0)

    def logits(self, token_ids, training=False, rng=None):
        pooled, _, _ = self.encoder.encode(self._view(token_ids), training, rng)
        return (pooled @ self.params["head_w"] + self.params["head_b"]).reshape(-1)

    def predict(self, token_ids, training=False, rng=None):
        """Per-row probabilities in [1e-12, 1 - 1e-12]."""
        return nx.clamp(nx.sigmoid(self.logits(token_ids, training, rng)), P_FLOOR, P_CEIL)

    __call__ = predict


def disc_loss(p_orig, p_masked):
    """Paired BCE with original labelled 0 and masked labelled 1, batch-averaged."""
    p_orig, p_masked = nx.as_tensor(p_orig), nx.as_tensor(p_masked)
    per_row = nx.log(1.0 - p_orig) + nx.log(p_masked)
    return -per_row.mean()
