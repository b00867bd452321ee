import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from afa.corpus import Example, gen_planted
from afa.evaluation import (compute_metrics, deletion_curve, evaluate, signal_attention_mass,
                            signal_top1_rate, sweep_k, t_interval)
from afa.config import TrainConfig
from afa.target_model import TargetModel


def brute_metrics(pred, gold, c):
    """Per-class counting by explicit loops."""
    prec, rec, f1 = [], [], []
    for k in range(c):
        tp = sum(1 for p, g in zip(pred, gold) if p == k and g == k)
        npred = sum(1 for p in pred if p == k)
        nact = sum(1 for g in gold if g == k)
        p = tp / npred if npred else 0.0
        r = tp / nact if nact else 0.0
        prec.append(p)
        rec.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    acc = sum(p == g for p, g in zip(pred, gold)) / len(gold)
    return acc, prec, rec, f1


def test_metrics_perfect():
    m = compute_metrics([0, 1, 1, 0], [0, 1, 1, 0], 2)
    assert m.accuracy == 1.0 and m.macro_f1 == 1.0


def test_metrics_hand_example():
    m = compute_metrics([0, 0, 1, 1], [0, 1, 0, 1], 2)
    assert m.accuracy == 0.5 and m.macro_f1 == 0.5
    assert m.confusion == [[1, 1], [1, 1]]


def test_metrics_single_class_predictions():
    m = compute_metrics([0, 0, 0, 0], [0, 1, 0, 1], 2)
    assert m.macro_r == 0.5
    assert m.precision[1] == 0.0  # nothing predicted as 1


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics([0, 1], [0], 2)
    with pytest.raises(ValueError):
        compute_metrics([0, 2], [0, 1], 2)


@pytest.mark.parametrize("seed", range(100))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 6))
    n = int(rng.integers(1, 1001))
    pred, gold = rng.integers(0, c, n), rng.integers(0, c, n)
    m = compute_metrics(pred, gold, c)
    acc, p, r, f = brute_metrics(pred.tolist(), gold.tolist(), c)
    assert m.accuracy == acc and m.precision == p and m.recall == r and m.f1 == f
    assert m.macro_f1 == float(np.mean(f))
    assert sum(map(sum, m.confusion)) == n


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=60))
def test_metrics_confusion_sums(pairs):
    pred, gold = zip(*pairs)
    m = compute_metrics(pred, gold, 4)
    cm = np.array(m.confusion)
    assert cm.sum() == len(pairs)
    np.testing.assert_array_equal(cm.sum(axis=1), np.bincount(gold, minlength=4))


def test_t_interval_fixture():
    vals = [0.81, 0.84, 0.79, 0.86, 0.80]
    mean = sum(vals) / 5
    sd = (sum((v - mean) ** 2 for v in vals) / 4) ** 0.5
    half = 2.7764451051977987 * sd / 5 ** 0.5  # t_{0.975, 4}
    got = t_interval(vals)
    assert got[0] == pytest.approx(mean, abs=1e-12)
    assert got[1] == pytest.approx(half, abs=1e-9)
    assert stats.t.ppf(0.975, 4) == pytest.approx(2.7764451051977987, abs=1e-12)


def test_t_interval_needs_two():
    with pytest.raises(ValueError):
        t_interval([0.5])


class FixedAttention:
    """Stub model: predicts a fixed class and returns caller-supplied attention."""

    def __init__(self, fn, label_fn=None):
        self.fn, self.label_fn, self.num_classes = fn, label_fn, 2

    def predict(self, batch):
        b, n = batch.token_ids.shape
        a = np.stack([self.fn(row, int(l)) for row, l in zip(batch.token_ids, batch.lengths)])
        pred = np.array([self.label_fn(row) if self.label_fn else 0 for row in batch.token_ids])
        return pred, a


def _pad(v, n):
    out = np.zeros(n)
    out[:len(v)] = v
    return out


def test_signal_mass_uniform_and_saturated():
    data = [Example(list(range(3, 11)), 0, [2]) for _ in range(5)]
    uni = FixedAttention(lambda row, l: _pad(np.full(l, 1 / l), len(row)))
    assert signal_attention_mass(uni, data) == pytest.approx(0.125)
    hot = FixedAttention(lambda row, l: _pad(np.eye(l)[2], len(row)))
    assert signal_attention_mass(hot, data) == pytest.approx(1.0)
    assert signal_top1_rate(hot, data) == 1.0


def test_signal_mass_untrained_model():
    data, vocab = gen_planted(1000, 12, 2, 1, 195, seed=3)
    model = TargetModel(len(vocab), 2, np.random.default_rng(0), d_model=32, n_heads=2, d_ff=64)
    assert abs(signal_attention_mass(model, data) - 1 / 12) < 0.05


def _planted_oracle():
    # predicts the class of whichever signal token is present; attention on the token with id 3 or 4
    def label(row):
        return 0 if 3 in row else 1 if 4 in row else 1

    def attn(row, l):
        a = np.full(l, 0.01)
        hit = [i for i in range(l) if row[i] in (3, 4)]
        if hit:
            a[hit[0]] = 1.0
        return _pad(a / a.sum(), len(row))

    return FixedAttention(attn, label)


def test_deletion_identity_and_signal_removal():
    data, _ = gen_planted(200, 12, 2, 1, 30, seed=0)
    model = _planted_oracle()
    curve = deletion_curve(model, data, 3)
    plain = evaluate(model, data, 2).accuracy
    assert curve.points[0] == [0, plain] and plain == 1.0
    # oracle predicts class 1 once the signal is gone
    majority = max(np.mean([e.label for e in data]), 1 - np.mean([e.label for e in data]))
    assert curve.points[1][1] <= majority + 0.1
    assert [p[0] for p in curve.points] == [0, 1, 2, 3]
    assert curve.evaluated == 200 and curve.skipped == 0


def test_deletion_shortens_and_skips():
    seen = []

    def attn(row, l):
        seen.append(l)
        return _pad(np.arange(l, 0, -1) / np.arange(l, 0, -1).sum(), len(row))

    data = [Example([5, 6, 7, 8], 0), Example([5, 6], 0), Example([9, 9, 9, 9, 9], 1)]
    curve = deletion_curve(FixedAttention(attn), data, 2)
    assert curve.skipped == 1 and curve.evaluated == 2
    # static ranking: one forward on the intact batch, then one per N on shortened inputs
    assert seen[:2] == [4, 5] and seen[2:4] == [3, 4] and seen[4:] == [2, 3]


def test_deletion_rerank_matches_static_for_fixed_ranking():
    data, _ = gen_planted(50, 8, 2, 1, 20, seed=1)
    model = _planted_oracle()
    assert deletion_curve(model, data, 2).points == deletion_curve(model, data, 2, rerank=True).points


def test_sweep_structure():
    data, vocab = gen_planted(24, 6, 2, 1, 10, seed=0)
    cfg = TrainConfig(d_model=8, n_heads=2, d_ff=8, disc_d_model=8, disc_heads=2, disc_d_ff=8,
                      epochs=1, batch_size=12, pos_encoding=False)
    res = sweep_k(cfg, data, data, len(vocab), [1, 2, 3], trials=2)
    assert [r["k"] for r in res.records] == [1, 2, 3]
    for r in res.records:
        assert r["trials"] == 2 and len(r["accuracies"]) == 2
        assert r["mean"] == pytest.approx(np.mean(r["accuracies"]))
    with pytest.raises(ValueError):
        sweep_k(cfg, data, data, len(vocab), [1], trials=1)
