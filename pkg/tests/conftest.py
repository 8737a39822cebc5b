import os
import struct
from pathlib import Path

import numpy as np
import pytest

from fedbench.data import MNIST_FILES, mnist_available

ACCEPTANCE_LINES: list[str] = []


def mnist_dir() -> Path | None:
    """Location of real MNIST IDX files, if any are available locally."""
    candidates = [os.environ.get("FEDBENCH_DATA_DIR"),
                  Path(__file__).parent / "data" / "mnist", "data"]
    for c in candidates:
        if c and mnist_available(c):
            return Path(c)
    return None


def write_idx(path: Path, array: np.ndarray, magic: int) -> None:
    header = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
    path.write_bytes(header + array.astype(np.uint8).tobytes())


@pytest.fixture
def tiny_mnist(tmp_path):
    """A 12/5-example MNIST look-alike written in IDX format."""
    rng = np.random.default_rng(3)
    splits = {"train": 12, "test": 5}
    for split, n in splits.items():
        images = rng.integers(0, 256, size=(n, 28, 28))
        labels = rng.integers(0, 10, size=n)
        write_idx(tmp_path / MNIST_FILES[f"{split}_images"], images, 0x803)
        write_idx(tmp_path / MNIST_FILES[f"{split}_labels"], labels, 0x801)
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
