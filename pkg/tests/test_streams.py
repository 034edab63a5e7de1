import gzip
import struct

import numpy as np
import pytest

from clrun.streams import (
    ConsistencyError,
    DataError,
    Dataset,
    FormatError,
    LengthError,
    CapacityError,
    StreamSchedule,
    iterate,
    load_idx,
    load_mnist,
    make_permutations,
    make_rotations,
    make_synthetic,
    read_idx,
    rotate_image,
    rotation_angles,
    write_idx,
)


def idx_bytes(magic, shape, payload):
    return struct.pack(">I", magic) + struct.pack(f">{len(shape)}I", *shape) + bytes(payload)


@pytest.fixture
def fixture_files(tmp_path):
    pixels = list(range(0, 256, 64)) + [255, 0, 17, 200]  # two 2x2 images
    img = tmp_path / "imgs"
    lab = tmp_path / "labs"
    img.write_bytes(idx_bytes(0x803, (2, 2, 2), pixels))
    lab.write_bytes(idx_bytes(0x801, (2,), [3, 9]))
    return img, lab, pixels


def test_idx_fixture_round_trip(fixture_files):
    img, lab, pixels = fixture_files
    ds = load_idx(img, lab)
    assert ds.inputs.shape == (2, 4)
    assert ds.inputs.ravel().tolist() == [p / 255 for p in pixels]
    assert ds.labels.tolist() == [3, 9]


def test_idx_gzip_and_writer(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    write_idx(tmp_path / "a.gz", arr)
    with gzip.open(tmp_path / "a.gz") as fh:
        assert fh.read(4) == b"\x00\x00\x08\x03"
    assert np.array_equal(read_idx(tmp_path / "a.gz", 0x803), arr)


def test_idx_bad_magic(tmp_path, fixture_files):
    _, lab, _ = fixture_files
    bad = tmp_path / "bad"
    bad.write_bytes(idx_bytes(0, (2, 2, 2), range(8)))
    with pytest.raises(FormatError):
        load_idx(bad, lab)


def test_idx_truncated(tmp_path, fixture_files):
    _, lab, _ = fixture_files
    short = tmp_path / "short"
    short.write_bytes(idx_bytes(0x803, (2, 2, 2), range(5)))
    with pytest.raises(LengthError):
        load_idx(short, lab)


def test_idx_count_mismatch(tmp_path, fixture_files):
    img, _, _ = fixture_files
    lab = tmp_path / "lab3"
    lab.write_bytes(idx_bytes(0x801, (3,), [1, 2, 3]))
    with pytest.raises(ConsistencyError):
        load_idx(img, lab)


def test_load_mnist_missing_dir(tmp_path, monkeypatch):
    monkeypatch.delenv("CLRUN_DATA_DIR", raising=False)
    with pytest.raises(DataError):
        load_mnist(None)
    with pytest.raises(DataError):
        load_mnist(tmp_path / "nope")
    with pytest.raises(DataError):
        load_mnist(tmp_path)


def test_load_mnist_env_fallback(mnist_dir, monkeypatch):
    monkeypatch.setenv("CLRUN_DATA_DIR", str(mnist_dir))
    train, test = load_mnist()
    assert train.inputs.shape[1] == 784 and test.inputs.shape[1] == 784
    assert train.inputs.min() >= 0 and train.inputs.max() <= 1
    assert set(np.unique(train.labels)) <= set(range(10))


def test_mnist_header_counts(mnist_dir):
    path = next(p for p in mnist_dir.iterdir() if p.name.startswith("train-images"))
    raw = gzip.open(path).read(16) if path.suffix == ".gz" else path.read_bytes()[:16]
    magic, n, rows, cols = struct.unpack(">4I", raw)
    train, _ = load_mnist(mnist_dir)
    assert magic == 0x803 and (rows, cols) == (28, 28)
    assert len(train) == n


# --- rotations -------------------------------------------------------------


def test_rotate_zero_is_identity():
    img = np.random.default_rng(0).random((28, 28))
    assert np.array_equal(rotate_image(img, 0), img)


def test_rotate_180_twice():
    img = np.random.default_rng(1).random((28, 28))
    assert np.mean(np.abs(rotate_image(rotate_image(img, 180), 180) - img)) < 0.02


def test_rotate_90_keeps_center_pixel():
    img = np.zeros((29, 29))
    img[14, 14] = 1.0
    out = rotate_image(img, 90)
    assert out[14, 14] == 1.0 and out.sum() == pytest.approx(1.0)


def test_rotate_90_even_image_keeps_center_block():
    img = np.zeros((28, 28))
    img[13:15, 13:15] = 1.0
    assert np.array_equal(rotate_image(img, 90), img)


def test_rotate_output_range():
    img = np.random.default_rng(2).random((28, 28))
    out = rotate_image(img, 37.0)
    assert out.min() >= 0 and out.max() <= 1


def test_rotation_angles():
    assert rotation_angles(2) == [0.0, 180.0]
    angles = rotation_angles(20)
    assert angles[0] == 0.0 and angles[-1] == 180.0 and len(angles) == 20


def fake_mnist(n_train=400, n_test=100, seed=0):
    rng = np.random.default_rng(seed)
    return (Dataset(rng.random((n_train, 784)), rng.integers(0, 10, n_train), "train"),
            Dataset(rng.random((n_test, 784)), rng.integers(0, 10, n_test), "test"))


def test_make_rotations_shapes_and_identity_task():
    train, test = fake_mnist()
    s = make_rotations(train, test, tasks=4, per_task=100, seed=0, test_size=50)
    assert len(s) == 4 and [t.transform["angle"] for t in s.tasks] == [0.0, 60.0, 120.0, 180.0]
    rows = {tuple(r) for r in train.inputs}
    assert all(tuple(r) in rows for r in s.tasks[0].train_x)
    assert all(len(t.train_y) == 100 and len(t.test_y) == 50 for t in s.tasks)
    assert not s.notes  # 400 source rows cover 4 x 100 disjoint draws


def test_make_rotations_disjoint_indices():
    train, test = fake_mnist()
    train.inputs[:, 0] = np.arange(len(train)) / len(train)  # tag rows
    s = make_rotations(train, test, tasks=1, per_task=400, seed=0, test_size=10)
    assert len(set(s.tasks[0].train_x[:, 0])) == 400


def test_make_rotations_table_shape(mnist_dir):
    train, test = load_mnist(mnist_dir)
    s = make_rotations(train, test, tasks=20, per_task=1000, seed=0, test_size=20)
    assert len(s) == 20 and sum(len(t.train_y) for t in s.tasks) == 20_000
    if len(train) < 20_000:
        assert s.notes  # reuse is recorded


def test_rotations_capacity_error():
    train, test = fake_mnist(n_train=50)
    with pytest.raises(CapacityError):
        make_rotations(train, test, tasks=2, per_task=60)


def test_make_permutations():
    train, test = fake_mnist()
    s = make_permutations(train, test, tasks=3, per_task=50, seed=0, test_size=10)
    assert np.array_equal(s.tasks[0].transform["permutation"], np.arange(784))
    for t in s.tasks[1:]:
        perm = t.transform["permutation"]
        inverse = np.argsort(perm)
        assert np.array_equal(t.train_x[:, inverse][:, perm], t.train_x)
    other = make_permutations(train, test, tasks=3, per_task=50, seed=1, test_size=10)
    assert np.sum(other.tasks[1].transform["permutation"] != s.tasks[1].transform["permutation"]) > 0


def test_permutation_inverse_recovers_source():
    train, test = fake_mnist()
    train.inputs[:, 0] = np.arange(len(train)) / len(train)
    s = make_permutations(train, test, tasks=2, per_task=50, seed=0, test_size=10)
    t = s.tasks[1]
    restored = t.train_x[:, np.argsort(t.transform["permutation"])]
    rows = {tuple(r) for r in train.inputs}
    assert all(tuple(r) in rows for r in restored)


def test_many_permutations_defaults():
    train, test = fake_mnist(n_train=300, n_test=20)
    s = make_permutations(train, test, many=True, seed=0, test_size=5)
    assert len(s) == 100 and all(len(t.train_y) == 200 for t in s.tasks)
    assert sum(len(t.train_y) for t in s.tasks) == 20_000


# --- synthetic ----------------------------------------------------------------


def test_synthetic_deterministic():
    a, b = make_synthetic(3, 50, seed=4), make_synthetic(3, 50, seed=4)
    for ta, tb in zip(a.tasks, b.tasks):
        assert np.array_equal(ta.train_x, tb.train_x) and np.array_equal(ta.test_y, tb.test_y)


def test_synthetic_empty_tasks_yield_no_batches():
    s = make_synthetic(3, 0)
    assert list(iterate(s, StreamSchedule())) == []


def test_synthetic_rejects_degenerate():
    with pytest.raises(ValueError):
        make_synthetic(1, 10, dim=1)
    with pytest.raises(ValueError):
        make_synthetic(1, 10, classes=1)


def test_synthetic_single_task_logistic_separable():
    # multinomial logistic regression by full-batch gradient descent
    s = make_synthetic(1, 1000, seed=0)
    t = s.tasks[0]
    w = np.zeros((t.train_x.shape[1], 10))
    b = np.zeros(10)
    onehot = np.eye(10)[t.train_y]
    for _ in range(300):
        z = t.train_x @ w + b
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        w -= 0.5 * t.train_x.T @ (p - onehot) / len(p)
        b -= 0.5 * (p - onehot).mean(axis=0)
    assert np.mean(np.argmax(t.test_x @ w + b, axis=1) == t.test_y) > 0.95


def test_synthetic_tasks_conflict():
    s = make_synthetic(2, 10, seed=0)
    assert not np.allclose(s.tasks[0].transform["rotation"], s.tasks[1].transform["rotation"])


# --- iteration ----------------------------------------------------------------


def test_single_pass_counts_and_order():
    s = make_synthetic(3, 100, seed=0)
    batches = list(iterate(s, StreamSchedule("single", batch_size=10), seed=0))
    assert len(batches) == 30
    assert [tid for tid, _ in batches][::10] == [0, 1, 2]
    tids = [tid for tid, _ in batches]
    assert tids == sorted(tids)
    for tid, b in batches:
        assert set(b.task_ids.tolist()) == {tid}


def test_single_pass_visits_each_example_once():
    s = make_synthetic(2, 95, seed=0)
    seen = {}
    for tid, b in iterate(s, StreamSchedule("single", batch_size=10, glances=5), seed=0):
        for row in b.x:
            seen[(tid, tuple(row))] = seen.get((tid, tuple(row)), 0) + 1
    assert len(seen) == 190 and set(seen.values()) == {1}


def test_partial_final_batch_kept():
    s = make_synthetic(1, 25, seed=0)
    sizes = [len(b) for _, b in iterate(s, StreamSchedule(batch_size=10))]
    assert sizes == [10, 10, 5]


def test_multiple_pass_epochs():
    s = make_synthetic(1, 40, seed=0)
    counts = {}
    for _, b in iterate(s, StreamSchedule("multiple", epochs=3, batch_size=7), seed=0):
        for row in b.x:
            counts[tuple(row)] = counts.get(tuple(row), 0) + 1
    assert set(counts.values()) == {3} and len(counts) == 40


def test_schedule_validation():
    with pytest.raises(ValueError):
        StreamSchedule("twice")
    with pytest.raises(ValueError):
        StreamSchedule(batch_size=0)
