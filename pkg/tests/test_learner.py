import struct

import numpy as np
import pytest

from p2pagg.learner import (
    Dataset,
    DatasetFormatError,
    MLPModel,
    MeanModel,
    SoftmaxModel,
    build_model,
    finite_difference_grad,
    load_csv,
    load_idx,
    local_epoch,
    make_blobs,
    partition,
    read_idx,
)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


@pytest.mark.parametrize("model", [SoftmaxModel(5, 3), MLPModel(5, 3, hidden=4)])
def test_gradients_match_finite_differences(rng, model):
    X = rng.standard_normal((20, 5))
    y = rng.integers(0, 3, 20)
    w = rng.standard_normal(model.n_params) * 0.3
    fd = finite_difference_grad(lambda p: model.loss(p, X, y), w, h=1e-5)
    assert _rel_err(model.grad(w, X, y), fd) <= 1e-6


def test_mean_model_gradient_and_optimum(rng):
    m = MeanModel(5)
    X = rng.standard_normal((30, 5))
    w = rng.standard_normal(5)
    fd = finite_difference_grad(lambda p: m.loss(p, X), w, h=1e-5)
    assert _rel_err(m.grad(w, X), fd) <= 1e-6
    assert np.allclose(m.grad(X.mean(0), X), 0)


def test_softmax_flatten_round_trip(rng):
    m = SoftmaxModel(4, 3)
    w = rng.standard_normal(m.n_params)
    assert np.array_equal(m.flatten(*m.unflatten(w)), w)
    assert m.predict_proba(w, rng.standard_normal((6, 4))).sum(1) == pytest.approx(np.ones(6))


def test_softmax_stable_for_large_logits():
    m = SoftmaxModel(1, 2)
    w = np.array([1000.0, -1000.0, 0.0, 0.0])
    p = m.predict_proba(w, np.array([[1.0]]))
    assert np.all(np.isfinite(p))


def test_training_reaches_high_accuracy():
    data = make_blobs(0, n=2000)
    train, test = data.split(0.2, 0)
    m = SoftmaxModel(data.dim, data.classes)
    w = m.init_params()
    rng = np.random.default_rng(0)
    for _ in range(3):
        w = local_epoch(m, w, train, 0.1, rng)
    assert m.accuracy(w, test) >= 0.95


def test_build_model():
    assert build_model("softmax", 3, 2).n_params == 8
    assert build_model("mlp", 3, 2, 4).n_params == 3 * 4 + 4 + 4 * 2 + 2
    with pytest.raises(ValueError):
        build_model("cnn", 3, 2)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)


def test_partition_disjoint_and_complete():
    data = make_blobs(1, n=400)
    shards = partition(data, 5, 0)
    assert sum(len(s) for s in shards) == 400
    rows = np.concatenate([s.X for s in shards])
    assert len(np.unique(rows, axis=0)) == 400
    skewed = partition(data, 4, 0, "noniid", min_size=1)
    assert all(len(np.unique(s.y)) <= 2 for s in skewed)
    with pytest.raises(ValueError):
        partition(data, 100, 0)


def _write_idx(path, arr, magic):
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(np.uint8).tobytes())


def test_idx_round_trip(tmp_path, rng):
    imgs = rng.integers(0, 256, (6, 3, 2)).astype(np.uint8)
    labels = np.array([0, 1, 2, 1, 0, 2], dtype=np.uint8)
    _write_idx(tmp_path / "img", imgs, 0x803)
    _write_idx(tmp_path / "lbl", labels, 0x801)
    assert np.array_equal(read_idx(tmp_path / "img"), imgs)
    data = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert data.X.shape == (6, 6) and data.classes == 3
    assert data.X.max() <= 1.0


def test_idx_errors_name_offsets(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 8)
    with pytest.raises(DatasetFormatError, match="offset 0"):
        read_idx(tmp_path / "bad")
    _write_idx(tmp_path / "short", np.zeros((2, 2, 2)), 0x803)
    data = (tmp_path / "short").read_bytes()[:-1]
    (tmp_path / "short").write_bytes(data)
    with pytest.raises(DatasetFormatError, match="offset 16"):
        read_idx(tmp_path / "short")
    (tmp_path / "tiny").write_bytes(b"\x00\x00")
    with pytest.raises(DatasetFormatError, match="truncated"):
        read_idx(tmp_path / "tiny")


def test_csv_loader(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("label,f1,f2\n0,0.5,1\n1,2,3\n")
    data = load_csv(p)
    assert data.X.tolist() == [[0.5, 1.0], [2.0, 3.0]] and data.y.tolist() == [0, 1]
    p.write_text("label,f1,f2\n0,0.5\n")
    with pytest.raises(DatasetFormatError, match=":2:"):
        load_csv(p)
    p.write_text("x,f1\n0,1\n")
    with pytest.raises(DatasetFormatError):
        load_csv(p)
