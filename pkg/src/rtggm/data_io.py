"""Dataset loaders and the RTGM checkpoint container.

Checkpoint layout (all little-endian)::

    magic      4 bytes  b"RTGM"
    version    u32      1
    record_tag u8       0 model, 1 deep model, 2 ReLU initializer
    [u16 layer count]   deep model and ReLU initializer only
    records:
      kind u8, vocab u32, n u32, m u32,
      float64 arrays W (n*m, row-major), a (n), d (m), b (n), c (m)

A ReLU-initializer record reuses the model layout: W holds W/d column-scaled
(its transpose is the feedforward weight), c holds the bias c/d, a and b are
zero and d is one.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import DeepModel, Kind, ModelParams

MAGIC = b"RTGM"
VERSION = 1
TAG_MODEL, TAG_DEEP, TAG_RELU = 0, 1, 2

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class FormatError(ValueError):
    """Malformed input file."""


class CheckpointError(FormatError):
    pass


@dataclass
class DataBatch:
    """Dense rows, or documents as a sparse count matrix (docs x vocab).

    ``docs`` keeps the (word_id, count) pairs of each document and
    ``empty`` flags documents of length zero.
    """

    dense: Optional[np.ndarray] = None
    counts: Optional[sp.csr_matrix] = None
    docs: list = field(default_factory=list)
    doc_ids: list = field(default_factory=list)
    vocab_size: int = 0

    def __len__(self):
        return self.counts.shape[0] if self.counts is not None else self.dense.shape[0]

    @property
    def is_count(self):
        return self.counts is not None

    @property
    def n_features(self):
        return self.counts.shape[1] if self.is_count else self.dense.shape[1]

    @property
    def lengths(self):
        if not self.is_count:
            raise ValueError("document lengths only exist for count data")
        return np.asarray(self.counts.sum(axis=1)).ravel()

    @property
    def empty(self):
        return self.lengths == 0

    def to_array(self):
        if self.is_count:
            return self.counts.toarray().astype(float)
        return np.asarray(self.dense, dtype=float)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def load_idx(path):
    """IDX images scaled to [0, 1], flattened per item; labels as a column."""
    raw = _read(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IDX_IMAGES, IDX_LABELS):
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header ({len(raw)} of {head} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    size = 1
    for dim in dims:
        size *= dim
    if size > len(raw) - head:
        raise FormatError(f"{path}: dimensions {dims} need {size} bytes, file has {len(raw) - head}")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=head)
    if magic == IDX_LABELS:
        return DataBatch(dense=data.astype(float).reshape(dims[0], 1))
    per_item = size // dims[0] if dims[0] else int(np.prod(dims[1:], dtype=np.int64))
    return DataBatch(dense=data.reshape(dims[0], per_item).astype(float) / 255.0)


def binarize(batch, threshold=0.5):
    return DataBatch(dense=(batch.to_array() >= threshold).astype(float))


def load_csv(path):
    """Plain rows of reals, used as-is."""
    with open(path) as fh:
        rows = [line for line in fh if line.strip()]
    if not rows:
        return DataBatch(dense=np.zeros((0, 0)))
    return DataBatch(dense=np.loadtxt(rows, delimiter=",", ndmin=2))


def load_bow(path, vocab_size):
    """One document per line: ``doc_id<TAB>word:count word:count ...``."""
    docs, doc_ids = [], []
    rows, cols, vals = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            doc_id, _, body = line.partition("\t")
            pairs = []
            for token in body.split():
                word, sep, count = token.partition(":")
                try:
                    word, count = int(word), int(count)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: malformed token {token!r}") from None
                if not sep or word < 0 or count < 0:
                    raise FormatError(f"{path}:{lineno}: malformed token {token!r}")
                if word >= vocab_size:
                    raise FormatError(f"{path}:{lineno}: word id {word} >= vocabulary size {vocab_size}")
                pairs.append((word, count))
                rows.append(len(docs))
                cols.append(word)
                vals.append(count)
            docs.append(pairs)
            doc_ids.append(doc_id.strip())
    counts = sp.csr_matrix((np.asarray(vals, dtype=float), (rows, cols)), shape=(len(docs), vocab_size))
    counts.sum_duplicates()
    return DataBatch(counts=counts, docs=docs, doc_ids=doc_ids, vocab_size=vocab_size)


# -- checkpoints -------------------------------------------------------------

_RECORD_HEAD = struct.Struct("<BIII")


def _pack_arrays(kind, vocab, W, a, d, b, c):
    n, m = W.shape
    head = _RECORD_HEAD.pack(int(kind), vocab, n, m)
    return head + b"".join(np.ascontiguousarray(x, dtype="<f8").ravel().tobytes() for x in (W, a, d, b, c))


def _pack_record(model):
    a = model.a if model.kind.has_precision else np.zeros(model.n)
    return _pack_arrays(model.kind, model.vocab_size, model.W, a, model.d, model.b, model.c)


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.path, self.pos = raw, path, 0

    def take(self, size, what):
        if self.pos + size > len(self.raw):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.pos} while reading {what} "
                f"(need {size} bytes, {len(self.raw) - self.pos} left)")
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt, what):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size, what))

    def floats(self, count, what):
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(float)


def _read_arrays(reader):
    offset = reader.pos
    kind, vocab, n, m = reader.unpack("<BIII", "record header")
    if kind > max(Kind):
        raise CheckpointError(f"{reader.path}: unknown kind tag {kind} at byte {offset}")
    kind = Kind(kind)
    if kind is Kind.COUNT and vocab != n:
        raise CheckpointError(f"{reader.path}: vocab field {vocab} disagrees with n={n}")
    W = reader.floats(n * m, "W").reshape(n, m)
    a = reader.floats(n, "a")
    d = reader.floats(m, "d")
    b = reader.floats(n, "b")
    c = reader.floats(m, "c")
    return offset, kind, W, a, d, b, c


def _read_record(reader):
    offset, kind, W, a, d, b, c = _read_arrays(reader)
    if np.any(d <= 0):
        raise CheckpointError(f"{reader.path}: record at byte {offset} has non-positive d")
    try:
        return ModelParams(W=W, a=a, d=d, b=b, c=c, kind=kind, d_learnable=kind is not Kind.BINARY)
    except ValueError as err:
        raise CheckpointError(f"{reader.path}: invalid record at byte {offset}: {err}") from None


def _write(path, tag, records, layered):
    out = [MAGIC, struct.pack("<IB", VERSION, tag)]
    if layered:
        out.append(struct.pack("<H", len(records)))
    out.extend(records)
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


def save_model(path, model):
    if isinstance(model, DeepModel):
        _write(path, TAG_DEEP, [_pack_record(r) for r in model.layers], True)
    else:
        _write(path, TAG_MODEL, [_pack_record(model)], False)


def save_relu_init(path, deep):
    records = []
    for layer in deep.layers:
        records.append(_pack_arrays(
            layer.kind, layer.vocab_size, layer.W / layer.d, np.zeros(layer.n), np.ones(layer.m),
            np.zeros(layer.n), layer.c / layer.d))
    _write(path, TAG_RELU, records, True)


def _open(path):
    reader = _Reader(_read(path), path)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    version, tag = reader.unpack("<IB", "version and record tag")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    return reader, tag


def _finish(reader):
    if reader.pos != len(reader.raw):
        raise CheckpointError(f"{reader.path}: {len(reader.raw) - reader.pos} trailing bytes at byte {reader.pos}")


def load_model(path):
    """Returns a ``ModelParams`` or a ``DeepModel`` depending on the record tag."""
    reader, tag = _open(path)
    if tag == TAG_MODEL:
        model = _read_record(reader)
    elif tag == TAG_DEEP:
        (count,) = reader.unpack("<H", "layer count")
        layers = [_read_record(reader) for _ in range(count)]
        try:
            model = DeepModel(layers)
        except ValueError as err:
            raise CheckpointError(f"{path}: {err}") from None
    elif tag == TAG_RELU:
        raise CheckpointError(f"{path}: holds a ReLU initializer, use load_relu_init")
    else:
        raise CheckpointError(f"{path}: unknown record tag {tag}")
    _finish(reader)
    return model


def load_relu_init(path):
    """List of (weight, bias) pairs, weight shaped (out, in)."""
    reader, tag = _open(path)
    if tag != TAG_RELU:
        raise CheckpointError(f"{path}: record tag {tag} is not a ReLU initializer")
    (count,) = reader.unpack("<H", "layer count")
    layers = []
    for _ in range(count):
        _, _, W, _, _, _, c = _read_arrays(reader)
        layers.append((W.T.copy(), c))
    _finish(reader)
    return layers
