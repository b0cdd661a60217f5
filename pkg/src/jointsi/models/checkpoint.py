"""Binary checkpoint container.

Layout::

    magic   b"JSICKPT\\0"
    u32     format version
    u32     header length, then a UTF-8 JSON header (sorted keys)
    blocks  repeated: u32 name length, name, u32 ndim, u64 * ndim shape,
            little-endian float64 data

Neural models store one block per parameter. Tabular models store one
``row/<context>`` block per table row and, when the score table is a mapping,
one ``score/<sequence>`` block per entry.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..seqcore import Vocabulary
from .neural import PARAM_NAMES, NeuralJointModel
from .tabular import TabularJointModel

MAGIC = b"JSICKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _key(ints) -> str:
    return ".".join(str(i) for i in ints)


def _unkey(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(".")) if s else ()


def _write_blocks(fh, blocks: list[tuple[str, np.ndarray]]):
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def save_checkpoint(path: str | Path, model) -> None:
    if not isinstance(model, (NeuralJointModel, TabularJointModel)):
        raise CheckpointError(f"unsupported model type {type(model).__name__}")
    vocab = model.vocab
    header = {"vocab": list(vocab.tokens), "bos_index": vocab.bos_index, "eos_index": vocab.eos_index}
    if isinstance(model, NeuralJointModel):
        header.update(kind="neural", **model.hyperparams())
        blocks = [(name, model.params[name]) for name in PARAM_NAMES]
    elif isinstance(model, TabularJointModel):
        if callable(model.scores):
            raise CheckpointError("callable score tables cannot be serialized")
        header.update(kind="tabular", max_len=model.max_len, order=model.order)
        blocks = [(f"row/{_key(ctx)}", row) for ctx, row in sorted(model.table.items())]
        if model.scores is not None:
            blocks += [(f"score/{_key(seq)}", np.atleast_1d(np.asarray(v, dtype=np.float64)))
                       for seq, v in sorted(model.scores.items())]
    else:
        raise CheckpointError(f"unsupported model type {type(model).__name__}")
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(head)))
        fh.write(head)
        _write_blocks(fh, blocks)


def load_checkpoint(path: str | Path):
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    blocks: dict[str, np.ndarray] = {}
    while off < len(data):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        blocks[name] = arr
    vocab = Vocabulary(tuple(header["vocab"]), header["bos_index"], header["eos_index"])
    if header["kind"] == "neural":
        return NeuralJointModel(vocab, header["max_len"], header["context"], header["embed_dim"],
                                header["hidden"], header["n_outputs"],
                                params={k: blocks[k] for k in PARAM_NAMES})
    if header["kind"] == "tabular":
        table = {_unkey(k[4:]): v for k, v in blocks.items() if k.startswith("row/")}
        scores = {_unkey(k[6:]): float(v[0]) if v.size == 1 else v
                  for k, v in blocks.items() if k.startswith("score/")}
        return TabularJointModel(vocab, table, header["max_len"], header["order"], scores or None)
    raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
