"""Training configuration and the flat ``key = value`` config file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # adversarial feedback
    k: int = 1
    epsilon: float = 0.1
    lam: float = 1.0
    M: int = 4
    adversarial: bool = True    # False: plain supervised training, no discriminator
    mask_as_unk: bool = False
    # optimisation
    lr_target: float = 1e-4
    lr_disc: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    dropout: float = 0.3
    # target dims
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    pos_encoding: bool = True
    embed_scale: float = 1.0
    # discriminator dims
    disc_d_model: int = 64
    disc_heads: int = 4
    disc_d_ff: int = 128
    disc_embed_scale: float = 1.0
    # data
    num_classes: int = 2
    max_len: int = 64
    min_count: int = 1
    train_path: str = ""
    valid_path: str = ""
    test_path: str = ""
    embeddings_path: str = ""

    def validate(self):
        errs = []
        if self.k < 1:
            errs.append("k: must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            errs.append("epsilon: must lie in [0, 1]")
        if self.lam < 0:
            errs.append("lam: must be >= 0")
        if self.M < 2:
            errs.append("M: must be >= 2")
        for name in ("lr_target", "lr_disc"):
            if getattr(self, name) <= 0:
                errs.append(f"{name}: must be > 0")
        for name in ("batch_size", "epochs", "max_len", "min_count", "d_model", "n_heads",
                     "d_ff", "disc_d_model", "disc_heads", "disc_d_ff"):
            if getattr(self, name) < 1:
                errs.append(f"{name}: must be >= 1")
        if self.num_classes < 2:
            errs.append("num_classes: must be >= 2")
        if not 0.0 <= self.dropout < 1.0:
            errs.append("dropout: must lie in [0, 1)")
        if self.d_model % self.n_heads:
            errs.append("n_heads: must divide d_model")
        if self.disc_d_model % self.disc_heads:
            errs.append("disc_heads: must divide disc_d_model")
        if errs:
            raise ConfigError("; ".join(errs))
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def _coerce(name, typ, raw):
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_config(text, base=None):
    types = {f.name: (bool if f.type == "bool" else int if f.type == "int"
                      else float if f.type == "float" else str) for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"{key}: unknown config field (line {lineno})")
        values[key] = _coerce(key, types[key], raw)
    cfg = dataclasses.replace(base or TrainConfig(), **values)
    return cfg.validate()


def load_config(path, **overrides):
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    return cfg.replace(**{k: v for k, v in overrides.items() if v is not None}).validate()


class RngStreams:
    """Named, independent generators all derived from one seed."""

    NAMES = ("init_target", "init_disc", "shuffle", "dropout_target", "dropout_disc",
             "branch", "sampling")

    def __init__(self, seed):
        children = np.random.SeedSequence(seed).spawn(len(self.NAMES))
        for name, ss in zip(self.NAMES, children):
            setattr(self, name, np.random.default_rng(ss))
