"""Classification metrics, token-deletion curves, K sweeps and planted-oracle diagnostics."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .corpus import Example, batch_iter
from .masking import top_k


@dataclass
class Metrics:
    accuracy: float
    precision: list
    recall: list
    f1: list
    macro_p: float
    macro_r: float
    macro_f1: float
    confusion: list  # confusion[true][pred]

    def to_dict(self):
        return asdict(self)


def compute_metrics(predictions, labels, num_classes):
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(labels, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gold.shape}")
    for arr in (pred, gold):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"class index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (gold, pred), 1)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    # zero denominators count as 0
    p = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    r = np.divide(tp, actual, out=np.zeros(num_classes), where=actual > 0)
    f = np.divide(2 * p * r, p + r, out=np.zeros(num_classes), where=(p + r) > 0)
    acc = float(tp.sum() / gold.size) if gold.size else 0.0
    return Metrics(acc, p.tolist(), r.tolist(), f.tolist(), float(p.mean()), float(r.mean()),
                   float(f.mean()), cm.tolist())


def predict_all(model, data, batch_size=256):
    preds, rows = [], []
    for batch in batch_iter(data, batch_size):
        p, a = model.predict(batch)
        preds.append(p)
        rows.extend(a[i, :n] for i, n in enumerate(batch.lengths))
    return (np.concatenate(preds) if preds else np.zeros(0, np.int64)), rows


def evaluate(model, data, num_classes):
    pred, _ = predict_all(model, data)
    return compute_metrics(pred, [e.label for e in data], num_classes)


@dataclass
class DeletionCurve:
    points: list   # [[N, accuracy], ...]
    evaluated: int
    skipped: int

    def to_dict(self):
        return {"points": self.points, "evaluated": self.evaluated, "skipped": self.skipped}


def _delete(ids, positions):
    drop = set(positions)
    return [t for i, t in enumerate(ids) if i not in drop]


def deletion_curve(model, data, n_max, rerank=False, batch_size=256):
    """Accuracy after removing each sequence's N highest-attention tokens, N = 0..n_max.

    Sequences with live length <= n_max are skipped. The ranking comes from the
    intact sequence unless ``rerank`` is set, in which case the top token is
    recomputed after every single deletion.
    """
    kept = [e for e in data if len(e.token_ids) > n_max]
    skipped = len(data) - len(kept)
    if not kept:
        return DeletionCurve([], 0, skipped)
    labels = np.array([e.label for e in kept])
    pred, rows = predict_all(model, kept, batch_size)
    points = [[0, float((pred == labels).mean())]]
    if rerank:
        current = [list(e.token_ids) for e in kept]
        for n in range(1, n_max + 1):
            current = [_delete(ids, top_k(a, 1)) for ids, a in zip(current, rows)]
            pred, rows = predict_all(model, [Example(c, e.label) for c, e in zip(current, kept)], batch_size)
            points.append([n, float((pred == labels).mean())])
    else:
        ranks = [top_k(a, n_max) for a in rows]
        for n in range(1, n_max + 1):
            reduced = [Example(_delete(e.token_ids, r[:n]), e.label) for e, r in zip(kept, ranks)]
            pred, _ = predict_all(model, reduced, batch_size)
            points.append([n, float((pred == labels).mean())])
    return DeletionCurve(points, len(kept), skipped)


def signal_attention_mass(model, data):
    """Mean attention mass the model places on each example's planted signal positions."""
    _, rows = predict_all(model, data)
    return float(np.mean([a[e.signal_positions].sum() for a, e in zip(rows, data)]))


def signal_top1_rate(model, data):
    """Fraction of examples whose top-attention token is a planted signal token."""
    _, rows = predict_all(model, data)
    return float(np.mean([top_k(a, 1)[0] in e.signal_positions for a, e in zip(rows, data)]))


def t_interval(values, confidence=0.95):
    """(mean, half-width) of the Student-t confidence interval."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise ValueError("need at least two values")
    half = stats.t.ppf(0.5 + confidence / 2, n - 1) * v.std(ddof=1) / np.sqrt(n)
    return float(v.mean()), float(half)


@dataclass
class SweepResult:
    records: list  # {"k", "mean", "ci_half_width", "trials", "accuracies"}

    def to_dict(self):
        return {"records": self.records}


def _trial(args):
    from .config import RngStreams
    from .trainer import accuracy, build_models, fit

    cfg, train, test, vocab_size = args
    rngs = RngStreams(cfg.seed)
    target, disc = build_models(cfg, vocab_size, rngs)
    fit(target, disc, train, cfg, rngs)
    return accuracy(target, test)


def sweep_k(cfg, train, test, vocab_size, k_values, trials=5, jobs=1):
    """Train one model per (K, trial seed) and aggregate test accuracy per K."""
    if trials < 2:
        raise ValueError("trials must be >= 2")
    jobs_list = [(cfg.replace(k=k, seed=cfg.seed + t), train, test, vocab_size)
                 for k in k_values for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            accs = list(pool.map(_trial, jobs_list))
    else:
        accs = [_trial(j) for j in jobs_list]
    records = []
    for i, k in enumerate(k_values):
        chunk = accs[i * trials:(i + 1) * trials]
        mean, half = t_interval(chunk)
        records.append({"k": int(k), "mean": mean, "ci_half_width": half,
                        "trials": trials, "accuracies": chunk})
    return SweepResult(records)




PLANTED_DEFAULTS = dict(k=1, M=4, epsilon=0.1, lam=1.0, d_model=32, n_heads=2, d_ff=64,
                        disc_d_model=32, disc_heads=2, disc_d_ff=64, disc_embed_scale=0.1,
                        epochs=10, batch_size=16, lr_target=1e-3, lr_disc=1e-3, pos_encoding=False)


def planted_trial(cfg, train, test, vocab_size):
    """Fit one model on planted data and report accuracy, signal mass, top-1 rate and N=1 drop."""
    import time

    from .config import RngStreams
    from .trainer import build_models, fit

    start = time.perf_counter()
    rngs = RngStreams(cfg.seed)
    target, disc = build_models(cfg, vocab_size, rngs)
    fit(target, disc if cfg.adversarial else None, train, cfg, rngs)
    curve = deletion_curve(target, test, 1)
    return {"seed": cfg.seed, "lam": cfg.lam, "accuracy": curve.points[0][1],
            "signal_mass": signal_attention_mass(target, test),
            "top1_rate": signal_top1_rate(target, test),
            "deleted_accuracy": curve.points[1][1],
            "drop": curve.points[0][1] - curve.points[1][1],
            "seconds": time.perf_counter() - start}
