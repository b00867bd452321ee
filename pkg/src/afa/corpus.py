"""Tokenisation, vocabularies, dataset files, batching and the planted-token generator."""
from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, MASK = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<mask>")

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


class DataError(ValueError):
    pass


def tokenize(text):
    return _PUNCT.sub(" ", text.lower()).split()


@dataclass
class Vocab:
    tokens: list  # id -> token, reserved entries first

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def size(self):
        return len(self.tokens)

    def encode(self, text):
        return [self.index.get(t, UNK) for t in tokenize(text)]

    def decode(self, ids):
        return [self.tokens[i] for i in ids if i != PAD]

    def to_json(self):
        return json.dumps({"tokens": self.tokens[len(RESERVED):]})

    @classmethod
    def from_tokens(cls, words):
        return cls(list(RESERVED) + list(words))

    @classmethod
    def from_json(cls, s):
        return cls.from_tokens(json.loads(s)["tokens"])


def build_vocab(corpus, min_count=1):
    counts = Counter()
    seen = False
    for text in corpus:
        seen = True
        counts.update(tokenize(text))
    if not seen:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [t for t, c in counts.items() if c >= min_count and t not in RESERVED]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab.from_tokens(kept)


@dataclass
class Example:
    token_ids: list
    label: int
    signal_positions: list | None = None


@dataclass
class Batch:
    token_ids: np.ndarray  # B x n, PAD-right
    labels: np.ndarray
    pad_mask: np.ndarray = field(default=None)  # True at live tokens

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pad_mask is None:
            self.pad_mask = self.token_ids != PAD

    @property
    def lengths(self):
        return self.pad_mask.sum(axis=1)

    def __len__(self):
        return self.token_ids.shape[0]


def make_batch(examples):
    n = max(len(e.token_ids) for e in examples)
    ids = np.full((len(examples), n), PAD, dtype=np.int64)
    for r, e in enumerate(examples):
        ids[r, : len(e.token_ids)] = e.token_ids
    return Batch(ids, [e.label for e in examples])


def batch_from_sequences(seqs, labels):
    return make_batch([Example(list(s), int(y)) for s, y in zip(seqs, labels)])


def load_jsonl(path, vocab, max_len, num_classes=None):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, label = rec["text"], rec["label"]
                if not isinstance(text, str) or isinstance(label, bool) or not isinstance(label, int):
                    raise TypeError("fields have wrong types")
            except (ValueError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed record ({exc})") from None
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise DataError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
            ids = vocab.encode(text)[:max_len] or [UNK]
            out.append(Example(ids, label))
    return out


def read_texts(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)["text"]


def load_embeddings(path, vocab, dim, rng, scale=1.0):
    """Embedding matrix from a ``token<TAB>v1<TAB>...`` file; unknown rows random."""
    table = rng.normal(0.0, scale, size=(len(vocab), dim))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected token and {dim} values")
            i = vocab.index.get(parts[0])
            if i is not None and i >= len(RESERVED):
                table[i] = [float(v) for v in parts[1:]]
    table[PAD] = 0.0
    return table


def gen_planted(num_examples, seq_len, num_classes, signal_per_class,
                distractor_vocab_size, seed):
    """Synthetic corpus: one class-specific signal token among random distractors.

    Token ids: reserved ids first, then ``num_classes * signal_per_class`` signal
    ids (class c owns a contiguous block), then the distractors. Returns the
    examples and the :class:`Vocab` over all of them.
    """
    if signal_per_class < 1:
        raise DataError("signal_per_class must be >= 1")
    if seq_len < 4:
        raise DataError("seq_len must be >= 4")
    if num_classes < 2:
        raise DataError("need at least two classes")
    if distractor_vocab_size < seq_len - 1:
        raise DataError("distractor vocabulary too small for the sequence length")
    n_sig = num_classes * signal_per_class
    sig_base = len(RESERVED)
    dis_base = sig_base + n_sig
    vocab = Vocab.from_tokens(
        [f"sig{c}x{j}" for c in range(num_classes) for j in range(signal_per_class)]
        + [f"tok{j}" for j in range(distractor_vocab_size)])

    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=num_examples)
    sig_choice = rng.integers(0, signal_per_class, size=num_examples)
    positions = rng.integers(0, seq_len, size=num_examples)
    distractors = rng.integers(0, distractor_vocab_size, size=(num_examples, seq_len)) + dis_base
    out = []
    for i in range(num_examples):
        ids = distractors[i].tolist()
        ids[positions[i]] = sig_base + labels[i] * signal_per_class + sig_choice[i]
        out.append(Example(ids, int(labels[i]), [int(positions[i])]))
    return out, vocab


def planted_signal_ids(num_classes, signal_per_class):
    """Signal ids per class for a :func:`gen_planted` vocabulary."""
    base = len(RESERVED)
    return {c: list(range(base + c * signal_per_class, base + (c + 1) * signal_per_class))
            for c in range(num_classes)}


def write_jsonl(path, examples, vocab):
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(json.dumps({"text": " ".join(vocab.decode(e.token_ids)), "label": e.label}) + "\n")


def batch_iter(data, batch_size, shuffle_seed=None):
    """One epoch of batches; ``shuffle_seed`` may be an int or a numpy Generator."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(data))
    if shuffle_seed is not None:
        rng = shuffle_seed if isinstance(shuffle_seed, np.random.Generator) \
            else np.random.default_rng(shuffle_seed)
        order = rng.permutation(len(data))
    for start in range(0, len(data), batch_size):
        yield make_batch([data[i] for i in order[start:start + batch_size]])
