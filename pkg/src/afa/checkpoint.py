"""``AFA1`` checkpoint container.

Layout (all integers little-endian u32, floats little-endian fp64)::

    b"AFA1" version n_sections
    per section: tag[4] meta_len meta_json[meta_len] n_tensors
                 per tensor: name_len name ndim dims[ndim] data
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"AFA1"
VERSION = 1
TAGS = {"target": b"TGT0", "discriminator": b"DSC0"}


class CheckpointError(ValueError):
    pass


def _u32(x):
    return struct.pack("<I", x)


def dumps(models):
    """Serialise ``{kind: model}``; each model has ``dims()`` and ordered ``params``."""
    out = [MAGIC, _u32(VERSION), _u32(len(models))]
    for kind, model in models.items():
        meta = json.dumps(model.dims(), sort_keys=True).encode()
        out += [TAGS[kind], _u32(len(meta)), meta, _u32(len(model.params))]
        for name, t in model.params.items():
            nb = name.encode()
            out += [_u32(len(nb)), nb, _u32(t.data.ndim)]
            out += [_u32(s) for s in t.data.shape]
            out.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return b"".join(out)


def save(path, models):
    with open(path, "wb") as fh:
        fh.write(dumps(models))


def loads(buf):
    """Returns ``{kind: (meta, {name: ndarray})}``."""
    if buf[:4] != MAGIC:
        raise CheckpointError("not an AFA1 checkpoint")
    pos = 4

    def u32():
        nonlocal pos
        (v,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        return v

    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kinds = {v: k for k, v in TAGS.items()}
    result = {}
    for _ in range(u32()):
        tag = buf[pos:pos + 4]
        pos += 4
        if tag not in kinds:
            raise CheckpointError(f"unknown section tag {tag!r}")
        n = u32()
        meta = json.loads(buf[pos:pos + n])
        pos += n
        tensors = {}
        for _ in range(u32()):
            n = u32()
            name = buf[pos:pos + n].decode()
            pos += n
            shape = tuple(u32() for _ in range(u32()))
            size = int(np.prod(shape)) * 8
            tensors[name] = np.frombuffer(buf, "<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
        result[kinds[tag]] = (meta, tensors)
    return result


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def restore(model, tensors):
    if list(tensors) != list(model.params):
        raise CheckpointError("parameter names do not match the model")
    for name, arr in tensors.items():
        if arr.shape != model.params[name].shape:
            raise CheckpointError(f"{name}: shape {arr.shape} != {model.params[name].shape}")
        model.params[name].data[...] = arr


def snapshot(model):
    return {k: t.data.copy() for k, t in model.params.items()}


def load_models(path):
    """Rebuild ``(target, discriminator_or_None)`` from a checkpoint file."""
    from .discriminator import Discriminator
    from .target_model import TargetModel

    sections = load(path)
    rng = np.random.default_rng(0)
    meta, tensors = sections["target"]
    target = TargetModel(meta["vocab_size"], meta["num_classes"], rng, meta["d_model"],
                         meta["n_heads"], meta["d_ff"], meta["dropout"], bool(meta["pos_encoding"]))
    restore(target, tensors)
    disc = None
    if "discriminator" in sections:
        meta, tensors = sections["discriminator"]
        disc = Discriminator(meta["vocab_size"], rng, meta["d_model"], meta["n_heads"], meta["d_ff"],
                             meta["dropout"], bool(meta["pos_encoding"]), bool(meta["mask_as_unk"]))
        restore(disc, tensors)
    return target, disc
