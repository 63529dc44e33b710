import numpy as np
import pytest

from fedraa.data import write_idx

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    """The 5000-digit MNIST sample shipped with mlxtend, shuffled and written as
    IDX files: 2000 training and 1000 disjoint held-out images."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    X, y = mlxtend_data.mnist_data()
    perm = np.random.default_rng(0).permutation(len(y))
    images = X[perm].reshape(-1, 28, 28).astype(np.uint8)
    labels = y[perm].astype(np.uint8)
    root = tmp_path_factory.mktemp("mnist")
    write_idx(images[:2000], labels[:2000], root / MNIST_FILES["train_images"], root / MNIST_FILES["train_labels"])
    write_idx(images[2000:3000], labels[2000:3000], root / MNIST_FILES["test_images"], root / MNIST_FILES["test_labels"])
    return root


@pytest.fixture
def mnist_paths(mnist_dir):
    return {key: str(mnist_dir / name) for key, name in MNIST_FILES.items()}


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) != "call":
                continue
            lines += [value for name, value in getattr(rep, "user_properties", ()) if name == "criterion"]
    if not lines:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, ok, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
