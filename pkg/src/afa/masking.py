"""Attention-driven epsilon-greedy top-k masking and its selection log-probability.

The selection probability follows sequential sampling without replacement in
proportion to attention (Plackett-Luce), evaluated at whichever ordered index
set the epsilon-greedy rule produced.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .corpus import MASK, Batch
from .numerics import ContractError, Tensor

GREEDY, EXPLORE = "greedy", "explore"


@dataclass
class MaskSelection:
    indices: tuple          # ordered: selection order matters for log_prob
    mode: str
    log_prob: float
    masked_ids: list | None = None
    truncated: bool = False  # k exceeded the live length

    @property
    def index_set(self):
        return frozenset(self.indices)


def top_k(a, k):
    """Indices of the k largest entries, ties to the lower index, in rank order."""
    a = np.asarray(a)
    return tuple(int(i) for i in np.lexsort((np.arange(len(a)), -a))[:k])


def select(a, k, eps, rng, token_ids=None, branch_rng=None):
    """Draw the masked index set S for one sequence.

    ``a`` covers live tokens only. ``branch_rng`` (default ``rng``) decides
    greedy vs explore once per sequence; ``rng`` draws the random subset.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    a = np.asarray(a, dtype=np.float64)
    n = len(a)
    kk = min(k, n)
    explore = (branch_rng or rng).random() < eps
    if explore:
        idx = tuple(int(i) for i in rng.choice(n, size=kk, replace=False))
    else:
        idx = top_k(a, kk)
    masked = None
    if token_ids is not None:
        masked = list(token_ids)
        for i in idx:
            masked[i] = MASK
    lp = _log_prob_np(a, idx)
    return MaskSelection(idx, EXPLORE if explore else GREEDY, lp, masked, k > n)


def _log_prob_np(a, idx):
    remaining = np.ones(len(a), dtype=bool)
    total = 0.0
    for i in idx:
        rem = max(a[remaining].sum(), nx.LOG_FLOOR)
        total += np.log(max(a[i], nx.LOG_FLOOR)) - np.log(rem)
        remaining[i] = False
    return float(total)


def log_policy_prob(a, S):
    """Differentiable log-probability of drawing ordered ``S`` sequentially from ``a``."""
    a = nx.as_tensor(a)
    out = batch_log_policy_prob(a.reshape(1, -1), [[tuple(S)]], np.ones((1, a.shape[0]), bool))
    return out.reshape(())


def batch_log_policy_prob(a, selections, live):
    """Log-probabilities for ``selections[b][m]`` (ordered index tuples) under rows of ``a``.

    ``a`` is a B x n Tensor; ``live`` the B x n live-token mask. Returns B x M.
    """
    b, n = a.shape
    m = len(selections[0])
    kmax = max(len(s) for row in selections for s in row)
    idx = np.zeros((b, m, kmax), dtype=np.int64)
    valid = np.zeros((b, m, kmax))
    remaining = np.zeros((b, m, kmax, n))
    for r, row in enumerate(selections):
        for j, s in enumerate(row):
            left = live[r].astype(np.float64)
            for t, i in enumerate(s):
                idx[r, j, t] = i
                valid[r, j, t] = 1.0
                remaining[r, j, t] = left
                left = left.copy()
                left[i] = 0.0
    rows = np.broadcast_to(np.arange(b)[:, None, None], idx.shape)
    a_sel = a[rows, idx]
    rem = (a.reshape(b, 1, 1, n) * remaining).sum(axis=3)
    terms = (nx.log(a_sel) - nx.log(rem)) * valid
    return terms.sum(axis=2)


def apply_mask(batch, selections):
    """Copy of ``batch`` with MASK substituted at each row's selected indices."""
    if len(selections) != len(batch):
        raise ContractError("need exactly one selection per row")
    ids = batch.token_ids.copy()
    for r, sel in enumerate(selections):
        idx = list(sel.indices if isinstance(sel, MaskSelection) else sel)
        if idx and not batch.pad_mask[r, idx].all():
            raise ContractError(f"row {r}: selection touches PAD positions")
        ids[r, idx] = MASK
    return Batch(ids, batch.labels.copy(), batch.pad_mask.copy())
