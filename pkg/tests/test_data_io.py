import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rtggm.data_io import (
    CheckpointError,
    DataBatch,
    FormatError,
    binarize,
    load_bow,
    load_csv,
    load_idx,
    load_model,
    load_relu_init,
    save_model,
    save_relu_init,
)
from rtggm.model import DeepModel, Kind, ModelParams, init_model


def write_idx(path, data, magic=0x803):
    data = np.asarray(data, dtype=np.uint8)
    head = struct.pack(">I", magic) + struct.pack(f">{data.ndim}I", *data.shape)
    path.write_bytes(head + data.tobytes())
    return path


def test_idx_images(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    batch = load_idx(write_idx(tmp_path / "x.idx", imgs))
    assert batch.to_array().shape == (5, 784)
    np.testing.assert_array_equal(batch.to_array()[2], imgs[2].ravel() / 255.0)


def test_idx_mnist_sized(tmp_path):
    path = tmp_path / "train-images.idx"
    path.write_bytes(struct.pack(">IIII", 0x803, 60000, 28, 28) + bytes(60000 * 784))
    assert load_idx(path).to_array().shape == (60000, 784)


def test_idx_labels(tmp_path):
    batch = load_idx(write_idx(tmp_path / "y.idx", [3, 1, 4], magic=0x801))
    np.testing.assert_array_equal(batch.to_array(), [[3], [1], [4]])


def test_idx_empty(tmp_path):
    path = tmp_path / "e.idx"
    path.write_bytes(struct.pack(">IIII", 0x803, 0, 28, 28))
    batch = load_idx(path)
    assert len(batch) == 0 and batch.n_features == 784


def test_idx_errors(tmp_path):
    bad = tmp_path / "bad.idx"
    bad.write_bytes(struct.pack(">IIII", 0x1234, 1, 2, 2) + bytes(4))
    with pytest.raises(FormatError, match="0x00001234"):
        load_idx(bad)
    short = tmp_path / "short.idx"
    short.write_bytes(struct.pack(">IIII", 0x803, 10, 28, 28) + bytes(100))
    with pytest.raises(FormatError, match="need 7840 bytes"):
        load_idx(short)
    tiny = tmp_path / "tiny.idx"
    tiny.write_bytes(b"\x00\x00")
    with pytest.raises(FormatError):
        load_idx(tiny)


def test_binarize():
    batch = DataBatch(dense=np.full((2, 3), 0.5))
    np.testing.assert_array_equal(binarize(batch).to_array(), 1.0)
    np.testing.assert_array_equal(binarize(batch, 1.01).to_array(), 0.0)


def test_csv(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("0.5,1,2\n\n3,4,5.25\n")
    np.testing.assert_array_equal(load_csv(path).to_array(), [[0.5, 1, 2], [3, 4, 5.25]])
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert len(load_csv(empty)) == 0


def test_bow(tmp_path):
    path = tmp_path / "d.bow"
    path.write_text("7\t0:2 3:1\n8\t\n9\t4:1 4:2\n")
    batch = load_bow(path, 5)
    assert len(batch) == 3 and batch.is_count
    np.testing.assert_array_equal(batch.lengths, [3, 0, 3])
    np.testing.assert_array_equal(batch.empty, [False, True, False])
    np.testing.assert_array_equal(batch.to_array()[0], [2, 0, 0, 1, 0])
    np.testing.assert_array_equal(batch.to_array()[2], [0, 0, 0, 0, 3])
    assert batch.doc_ids == ["7", "8", "9"]
    assert batch.docs[0] == [(0, 2), (3, 1)]


def test_bow_empty_and_errors(tmp_path):
    empty = tmp_path / "e.bow"
    empty.write_text("")
    assert len(load_bow(empty, 5)) == 0
    bad = tmp_path / "b.bow"
    bad.write_text("0\t1:1\n0\t9:1\n")
    with pytest.raises(FormatError, match=r":2: word id 9"):
        load_bow(bad, 5)
    junk = tmp_path / "j.bow"
    junk.write_text("0\tx:1\n")
    with pytest.raises(FormatError, match=":1:"):
        load_bow(junk, 5)
    with pytest.raises(ValueError):
        DataBatch(dense=np.zeros((1, 2))).lengths


def random_model(kind, rng):
    n = int(rng.integers(2, 6))
    m = int(rng.integers(1, 5))
    return ModelParams(
        W=rng.normal(size=(n, m)),
        a=rng.uniform(0.5, 2, n) if kind.has_precision else np.zeros(n),
        d=rng.uniform(0.5, 2, m),
        b=rng.normal(size=n),
        c=rng.normal(size=m),
        kind=kind,
    )


def assert_same(a, b):
    assert a.kind is b.kind
    for p in ("W", "a", "d", "b", "c"):
        assert getattr(a, p).tobytes() == getattr(b, p).tobytes()


@pytest.mark.parametrize("kind", list(Kind))
def test_round_trip(tmp_path, kind):
    rng = np.random.default_rng(int(kind))
    for i in range(10):
        model = random_model(kind, rng)
        save_model(tmp_path / "m.rtgm", model)
        assert_same(load_model(tmp_path / "m.rtgm"), model)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=6, max_size=6))
def test_round_trip_arbitrary_values(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "m.rtgm"
    v = np.array(values)
    model = ModelParams(W=v[:4].reshape(2, 2), a=np.zeros(2), d=[1.0, 2.0], b=v[4:6], c=v[:2], kind=Kind.BINARY)
    save_model(path, model)
    assert_same(load_model(path), model)


def test_deep_round_trip(tmp_path):
    deep = DeepModel([init_model(5, 4, Kind.BINARY, seed=1), init_model(4, 3, Kind.TRUNCATED_REAL, seed=2),
                      init_model(3, 2, Kind.TRUNCATED_REAL, seed=3)])
    path = tmp_path / "deep.rtgm"
    save_model(path, deep)
    raw = path.read_bytes()
    assert struct.unpack("<H", raw[9:11]) == (3,)
    back = load_model(path)
    assert isinstance(back, DeepModel) and len(back.layers) == 3
    for a, b in zip(back.layers, deep.layers):
        assert_same(a, b)


def test_deep_dimension_mismatch_on_load(tmp_path):
    from rtggm.data_io import _pack_record

    records = [_pack_record(init_model(5, 4, Kind.BINARY)), _pack_record(init_model(3, 3, Kind.TRUNCATED_REAL))]
    path = tmp_path / "deep.rtgm"
    path.write_bytes(b"RTGM" + struct.pack("<IBH", 1, 1, 2) + b"".join(records))
    with pytest.raises(CheckpointError, match="does not match"):
        load_model(path)


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.rtgm"
    save_model(path, init_model(3, 2, Kind.BINARY))
    raw = path.read_bytes()
    (tmp_path / "t.rtgm").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError, match="byte"):
        load_model(tmp_path / "t.rtgm")
    (tmp_path / "x.rtgm").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_model(tmp_path / "x.rtgm")
    (tmp_path / "v.rtgm").write_bytes(raw[:4] + struct.pack("<I", 9) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_model(tmp_path / "v.rtgm")
    (tmp_path / "k.rtgm").write_bytes(raw[:9] + b"\x09" + raw[10:])
    with pytest.raises(CheckpointError, match="kind"):
        load_model(tmp_path / "k.rtgm")
    (tmp_path / "z.rtgm").write_bytes(raw + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_model(tmp_path / "z.rtgm")
    bad_d = bytearray(raw)
    d_at = 9 + 13 + 8 * (6 + 3)
    bad_d[d_at:d_at + 8] = struct.pack("<d", -1.0)
    (tmp_path / "d.rtgm").write_bytes(bytes(bad_d))
    with pytest.raises(CheckpointError, match="non-positive d"):
        load_model(tmp_path / "d.rtgm")


def test_relu_container(tmp_path):
    deep = DeepModel([init_model(4, 3, Kind.BINARY, seed=0, W_std=1.0)])
    path = tmp_path / "relu.rtgm"
    save_relu_init(path, deep)
    with pytest.raises(CheckpointError, match="ReLU"):
        load_model(path)
    (w, b), = load_relu_init(path)
    layer = deep.layers[0]
    np.testing.assert_array_equal(w, layer.W.T / layer.d[:, None])
    np.testing.assert_array_equal(b, layer.c / layer.d)
    model_path = tmp_path / "m.rtgm"
    save_model(model_path, layer)
    with pytest.raises(CheckpointError):
        load_relu_init(model_path)
