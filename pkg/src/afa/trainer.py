"""Adversarial feedback training loop: rewards, baseline, policy loss, 1:1 alternation."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import checkpoint
from . import numerics as nx
from .corpus import MASK, Batch, batch_iter
from .discriminator import Discriminator, disc_loss
from .masking import batch_log_policy_prob, select
from .target_model import TargetModel, classification_loss

log = logging.getLogger(__name__)

REWARD_CAP = -math.log(nx.LOG_FLOOR)


class TrainingAborted(RuntimeError):
    def __init__(self, message, batch=None):
        super().__init__(message)
        self.batch = batch


@dataclass
class RewardSample:
    selection: object
    raw_reward: float
    advantage: float


@dataclass
class StepReport:
    step: int
    loss_cls: float
    loss_adv: float
    loss_disc: float
    mean_reward: float
    disc_accuracy: float
    max_adv_sum: float  # worst |sum of advantages| over the batch's inputs


def reward(p_masked):
    """-log(1 - p) with p clamped to [0, 1 - 1e-12]; vectorised."""
    p = np.clip(np.asarray(p_masked, dtype=np.float64), 0.0, 1.0 - nx.LOG_FLOOR)
    return -np.log1p(-p)


def advantages(rewards):
    """Rewards minus their mean over the last axis (the M samples of one input)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.shape[-1] < 2:
        raise ValueError("need M >= 2 samples for the baseline")
    return r - r.mean(axis=-1, keepdims=True)


def adversarial_loss(adv, log_probs):
    """-(1/M) sum_m R_m log pi(S_m), averaged over rows; R is a constant.

    ``adv`` is an array (M,) or (B, M); ``log_probs`` a matching Tensor.
    """
    adv = np.asarray(adv, dtype=np.float64)
    log_probs = nx.as_tensor(log_probs)
    per_row = -(log_probs * adv).mean(axis=-1)
    return per_row.mean() if per_row.ndim else per_row


def build_models(cfg, vocab_size, rngs, embeddings=None):
    target = TargetModel(vocab_size, cfg.num_classes, rngs.init_target, cfg.d_model, cfg.n_heads,
                         cfg.d_ff, cfg.dropout, cfg.pos_encoding, cfg.embed_scale, embeddings)
    disc = Discriminator(vocab_size, rngs.init_disc, cfg.disc_d_model, cfg.disc_heads, cfg.disc_d_ff,
                         cfg.dropout, cfg.pos_encoding, cfg.mask_as_unk, cfg.disc_embed_scale)
    return target, disc


class Trainer:
    """Owns both models, their optimisers and the named RNG streams."""

    def __init__(self, target, disc, cfg, rngs):
        self.target, self.disc, self.cfg, self.rngs = target, disc, cfg, rngs
        self.opt_t = nx.Adam(target.params.values(), lr=cfg.lr_target)
        self.opt_d = nx.Adam(disc.params.values(), lr=cfg.lr_disc) if disc is not None else None
        self.step_count = 0
        self.check_isolation = False

    def train_step(self, batch):
        try:
            return self._step(batch)
        except ValueError as exc:
            if "non-finite" not in str(exc):
                raise
            raise TrainingAborted(str(exc), batch) from exc

    def _step(self, batch):
        cfg = self.cfg
        if not cfg.adversarial:
            return self._supervised_step(batch)
        tgt, disc, rngs = self.target, self.disc, self.rngs
        b = len(batch)
        lengths = batch.lengths

        # 1. attention and M mask-guided perturbations per input
        out = tgt.forward(batch, training=True, rng=rngs.dropout_target)
        a = out.attention.data
        sels = [[select(a[r, :lengths[r]], cfg.k, cfg.epsilon, rngs.sampling, branch_rng=rngs.branch)
                 for _ in range(cfg.M)] for r in range(b)]
        masked = np.repeat(batch.token_ids[None], cfg.M, axis=0)  # M x B x n
        for r in range(b):
            for m, s in enumerate(sels[r]):
                masked[m, r, list(s.indices)] = MASK

        # 2. discriminator update on (original, one sampled masked counterpart)
        pick = rngs.sampling.integers(0, cfg.M, size=b)
        paired = masked[pick, np.arange(b)]
        p_orig = disc.predict(batch.token_ids, True, rngs.dropout_disc)
        p_mask = disc.predict(paired, True, rngs.dropout_disc)
        loss_d = disc_loss(p_orig, p_mask)
        self._check_finite(loss_d, "discriminator loss", batch)
        nx.backward(loss_d)
        if self.check_isolation:
            _assert_no_grad(tgt, "L_D leaked into the target")
        self.opt_d.step()
        disc_acc = float(((p_orig.data < 0.5).sum() + (p_mask.data > 0.5).sum()) / (2 * b))

        # 3. rewards from the updated discriminator, then the target update
        with nx.no_grad():
            p_all = disc.predict(masked.reshape(cfg.M * b, -1)).data.reshape(cfg.M, b).T
        r = reward(p_all)                       # B x M
        adv = advantages(r)
        log_pi = batch_log_policy_prob(out.attention, [[s.indices for s in row] for row in sels],
                                       batch.pad_mask)
        loss_cls = classification_loss(out, batch.labels)
        loss_adv = adversarial_loss(adv, log_pi)
        loss_t = loss_cls + cfg.lam * loss_adv
        self._check_finite(loss_t, "target loss", batch)
        nx.backward(loss_t)
        if self.check_isolation:
            _assert_no_grad(disc, "L_adv leaked into the discriminator")
        self.opt_t.step()

        self.step_count += 1
        return StepReport(self.step_count, loss_cls.item(), loss_adv.item(), loss_d.item(),
                          float(r.mean()), disc_acc, float(np.abs(adv.sum(axis=1)).max()))

    def _supervised_step(self, batch):
        out = self.target.forward(batch, training=True, rng=self.rngs.dropout_target)
        loss = classification_loss(out, batch.labels)
        self._check_finite(loss, "target loss", batch)
        nx.backward(loss)
        self.opt_t.step()
        self.step_count += 1
        return StepReport(self.step_count, loss.item(), 0.0, 0.0, 0.0, 0.0, 0.0)

    @staticmethod
    def _check_finite(loss, what, batch):
        if not np.isfinite(loss.data):
            raise TrainingAborted(f"non-finite {what}: {loss.data}", batch)


def _assert_no_grad(model, message):
    for t in model.params.values():
        if t.grad is not None and np.any(t.grad):
            raise AssertionError(f"{message}: {t.name}")


def train_step(target, disc, batch, cfg, rngs):
    """One-off step with fresh optimisers; prefer :class:`Trainer` for loops."""
    return Trainer(target, disc, cfg, rngs).train_step(batch)


def accuracy(model, data, batch_size=256):
    if not data:
        return float("nan")
    correct = 0
    for batch in batch_iter(data, batch_size):
        pred, _ = model.predict(batch)
        correct += int((pred == batch.labels).sum())
    return correct / len(data)


@dataclass
class History:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    best_epoch: int | None = None


def fit(target, disc, dataset, cfg, rngs, valid=None, out_dir=None, on_step=None,
        on_epoch=None, trainer=None):
    """Fixed epoch budget; restores the best-validation parameters when ``valid`` is given."""
    trainer = trainer or Trainer(target, disc, cfg, rngs)
    hist = History()
    best, best_acc = None, -1.0
    fh = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        fh = open(os.path.join(out_dir, "history.jsonl"), "w", encoding="utf-8")
    try:
        for epoch in range(cfg.epochs):
            for batch in batch_iter(dataset, cfg.batch_size, rngs.shuffle):
                try:
                    rep = trainer.train_step(batch)
                except TrainingAborted as exc:
                    if out_dir and exc.batch is not None:
                        np.savetxt(os.path.join(out_dir, "abort_batch.txt"), exc.batch.token_ids, fmt="%d")
                    raise
                hist.steps.append(rep)
                if fh:
                    fh.write(json.dumps(asdict(rep)) + "\n")
                if on_step:
                    on_step(rep)
            summary = {"epoch": epoch, "train_loss_cls": float(np.mean(
                [s.loss_cls for s in hist.steps[-max(1, math.ceil(len(dataset) / cfg.batch_size)):]]))}
            if valid:
                summary["valid_accuracy"] = accuracy(target, valid)
                if summary["valid_accuracy"] > best_acc:
                    best_acc, best = summary["valid_accuracy"], checkpoint.snapshot(target)
                    hist.best_epoch = epoch
            hist.epochs.append(summary)
            log.info("epoch %d %s", epoch, summary)
            if out_dir:
                models = {"target": target}
                if disc is not None:
                    models["discriminator"] = disc
                checkpoint.save(os.path.join(out_dir, f"epoch{epoch:03d}.afa"), models)
                if hist.best_epoch == epoch:
                    checkpoint.save(os.path.join(out_dir, "best.afa"), models)
            if on_epoch:
                on_epoch(epoch, summary)
    finally:
        if fh:
            fh.close()
    if best is not None:
        checkpoint.restore(target, best)
    return hist


__all__ = ["Batch", "Discriminator", "History", "RewardSample", "StepReport", "Trainer",
           "TrainingAborted", "accuracy", "adversarial_loss", "advantages", "build_models", "fit",
           "reward", "train_step"]
