"""Continual-learning task streams: MNIST rotations and permutations, a
synthetic Gaussian stream, and the batch iterator that feeds learners."""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class DataError(Exception):
    """Base class for ingestion failures."""


class FormatError(DataError):
    pass


class LengthError(DataError):
    pass


class ConsistencyError(DataError):
    pass


class CapacityError(DataError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray  # [N x 784], values in [0, 1]
    labels: np.ndarray
    name: str = ""

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    task_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def split(self, size: int | None) -> list["Batch"]:
        """Consecutive sub-batches of ``size`` rows (``None`` means one row each)."""
        size = 1 if size is None else max(1, int(size))
        return [
            Batch(self.x[i : i + size], self.y[i : i + size], self.task_ids[i : i + size])
            for i in range(0, len(self), size)
        ]

    @staticmethod
    def concat(a: "Batch", x: np.ndarray, y: np.ndarray, t: np.ndarray) -> "Batch":
        if len(y) == 0:
            return a
        return Batch(np.concatenate([a.x, x]), np.concatenate([a.y, y]), np.concatenate([a.task_ids, t]))


@dataclass
class Task:
    task_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    transform: dict = field(default_factory=dict)


@dataclass
class TaskStream:
    tasks: list[Task]
    name: str = ""
    notes: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def n_classes(self) -> int:
        return int(max(max(t.train_y.max(initial=0), t.test_y.max(initial=0)) for t in self.tasks)) + 1


@dataclass
class StreamSchedule:
    pass_mode: str = "single"
    epochs: int = 1
    batch_size: int = 10
    glances: int = 1

    def __post_init__(self):
        if self.pass_mode not in ("single", "multiple"):
            raise ValueError(f"pass_mode must be 'single' or 'multiple', not {self.pass_mode!r}")
        if self.batch_size < 1 or self.glances < 1 or self.epochs < 1:
            raise ValueError("batch_size, glances and epochs must be >= 1")


# --- IDX ingestion ---------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path, expected_magic: int) -> np.ndarray:
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise LengthError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise LengthError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header < count:
        raise LengthError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(shape)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (gzip-compressed when the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    blob = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "wb") as fh:
            fh.write(blob)
    else:
        path.write_bytes(blob)


def load_idx(images_path, labels_path, name: str = "") -> Dataset:
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(inputs, labels.astype(np.int64), name or Path(images_path).name)


def _find(data_dir: Path, stem: str) -> Path:
    for candidate in (data_dir / stem, data_dir / (stem + ".gz")):
        if candidate.exists():
            return candidate
    raise DataError(f"missing MNIST file {stem}[.gz] in {data_dir}")


def load_mnist(data_dir=None) -> tuple[Dataset, Dataset]:
    """Train and test splits from the four canonical file names in ``data_dir``
    (falls back to ``$CLRUN_DATA_DIR``)."""
    data_dir = data_dir or os.environ.get("CLRUN_DATA_DIR")
    if not data_dir:
        raise DataError("no data directory given and CLRUN_DATA_DIR is unset")
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    train = load_idx(_find(data_dir, MNIST_FILES["train_images"]), _find(data_dir, MNIST_FILES["train_labels"]), "mnist-train")
    test = load_idx(_find(data_dir, MNIST_FILES["test_images"]), _find(data_dir, MNIST_FILES["test_labels"]), "mnist-test")
    return train, test


# --- transforms ------------------------------------------------------------


def rotate_image(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the image centre with bilinear sampling and zero fill."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    theta = np.deg2rad(degrees)
    c, s = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = rows - cy, cols - cx
    # inverse map: output pixel -> source location
    src_y = c * dy - s * dx + cy
    src_x = s * dy + c * dx + cx
    # snap round-off so exact grid rotations stay exact
    src_y = np.where(np.abs(src_y - np.round(src_y)) < 1e-9, np.round(src_y), src_y)
    src_x = np.where(np.abs(src_x - np.round(src_x)) < 1e-9, np.round(src_x), src_x)

    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy, fx = src_y - y0, src_x - x0
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = img

    def tap(yy, xx):
        inside = (yy >= -1) & (yy <= h) & (xx >= -1) & (xx <= w)
        return np.where(inside, padded[np.clip(yy + 1, 0, h + 1), np.clip(xx + 1, 0, w + 1)], 0.0)

    out = (
        tap(y0, x0) * (1 - fy) * (1 - fx)
        + tap(y0, x0 + 1) * (1 - fy) * fx
        + tap(y0 + 1, x0) * fy * (1 - fx)
        + tap(y0 + 1, x0 + 1) * fy * fx
    )
    return np.clip(out, 0.0, 1.0)


def rotation_angles(tasks: int) -> list[float]:
    if tasks == 1:
        return [0.0]
    return [180.0 * k / (tasks - 1) for k in range(tasks)]


def _draw_train_indices(n_source: int, tasks: int, per_task: int, rng, notes: list[str]) -> list[np.ndarray]:
    need = tasks * per_task
    if per_task > n_source:
        raise CapacityError(f"{per_task} samples per task but only {n_source} source examples")
    if need <= n_source:
        order = rng.permutation(n_source)
        return [order[k * per_task : (k + 1) * per_task] for k in range(tasks)]
    notes.append(f"source has {n_source} examples for {need} draws; samples reused across tasks")
    return [rng.choice(n_source, size=per_task, replace=False) for _ in range(tasks)]


def _draw_test_indices(n_source: int, size: int, rng) -> np.ndarray:
    return rng.choice(n_source, size=min(size, n_source), replace=False)


def make_rotations(
    train: Dataset, test: Dataset, tasks: int = 20, per_task: int = 1000, seed=0, test_size: int = 500
) -> TaskStream:
    if tasks < 1:
        raise ValueError("tasks must be >= 1")
    rng = np.random.default_rng(seed)
    notes: list[str] = []
    train_idx = _draw_train_indices(len(train), tasks, per_task, rng, notes)
    side = int(round(np.sqrt(train.inputs.shape[1])))
    out = []
    for k, angle in enumerate(rotation_angles(tasks)):
        test_idx = _draw_test_indices(len(test), test_size, rng)

        def rot(block):
            if angle == 0.0:
                return block.copy()
            return np.stack([rotate_image(r.reshape(side, side), angle).ravel() for r in block]) if len(block) else block.copy()

        out.append(
            Task(k, rot(train.inputs[train_idx[k]]), train.labels[train_idx[k]].copy(),
                 rot(test.inputs[test_idx]), test.labels[test_idx].copy(), {"angle": angle})
        )
    return TaskStream(out, "rotations", notes)


def make_permutations(
    train: Dataset, test: Dataset, tasks: int | None = None, per_task: int | None = None,
    seed=0, many: bool = False, test_size: int = 500,
) -> TaskStream:
    if tasks is None:
        tasks = 100 if many else 20
    if per_task is None:
        per_task = 200 if many else 1000
    if tasks < 1:
        raise ValueError("tasks must be >= 1")
    rng = np.random.default_rng(seed)
    notes: list[str] = []
    train_idx = _draw_train_indices(len(train), tasks, per_task, rng, notes)
    dim = train.inputs.shape[1]
    out = []
    for k in range(tasks):
        perm = np.arange(dim) if k == 0 else rng.permutation(dim)
        test_idx = _draw_test_indices(len(test), test_size, rng)
        out.append(
            Task(k, train.inputs[train_idx[k]][:, perm], train.labels[train_idx[k]].copy(),
                 test.inputs[test_idx][:, perm], test.labels[test_idx].copy(), {"permutation": perm})
        )
    return TaskStream(out, "many_permutations" if many else "permutations", notes)


def _random_rotation(dim: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def make_synthetic(
    tasks: int, per_task: int, dim: int = 20, classes: int = 10, seed=0,
    test_size: int = 500, radius: float = 4.0, noise: float = 0.6,
) -> TaskStream:
    """Gaussian class clusters whose mean layout is rotated per task.

    The same class occupies a different region in every task, so sequential
    training on one task overwrites what was learned on the others.
    """
    if dim < 2 or classes < 2:
        raise ValueError("need dim >= 2 and classes >= 2")
    rng = np.random.default_rng(seed)
    layout = rng.standard_normal((classes, dim))
    layout *= radius / np.linalg.norm(layout, axis=1, keepdims=True)
    out = []
    for k in range(tasks):
        rot = _random_rotation(dim, rng)
        means = layout @ rot.T

        def draw(n):
            y = rng.integers(0, classes, size=n)
            return means[y] + noise * rng.standard_normal((n, dim)), y

        tx, ty = draw(per_task)
        vx, vy = draw(test_size)
        out.append(Task(k, tx, ty, vx, vy, {"synthetic_seed": int(seed), "rotation": rot}))
    return TaskStream(out, "synthetic")


# --- iteration -------------------------------------------------------------


def iterate(stream: TaskStream, schedule: StreamSchedule, seed=0) -> Iterator[tuple[int, Batch]]:
    """Yield ``(task_id, batch)`` task by task; glances are the learner's job."""
    rng = np.random.default_rng(seed)
    epochs = schedule.epochs if schedule.pass_mode == "multiple" else 1
    for task in stream.tasks:
        n = len(task.train_y)
        for _ in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, schedule.batch_size):
                idx = order[start : start + schedule.batch_size]
                yield task.task_id, Batch(task.train_x[idx], task.train_y[idx], np.full(len(idx), task.task_id))
