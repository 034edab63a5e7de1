import os
from pathlib import Path

import pytest

REPO = Path(__file__).resolve().parents[1]
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def find_mnist_dir():
    for candidate in (os.environ.get("CLRUN_DATA_DIR"), REPO / "data" / "mnist-5k"):
        if not candidate:
            continue
        d = Path(candidate)
        if all((d / f).exists() or (d / f"{f}.gz").exists() for f in MNIST_FILES):
            return d
    return None


@pytest.fixture(scope="session")
def mnist_dir():
    d = find_mnist_dir()
    if d is None:
        pytest.skip("MNIST IDX files not found (set CLRUN_DATA_DIR)")
    return d


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
