import os

import numpy as np
import pytest

from polyrelu.data import IMAGE_MAGIC, LABEL_MAGIC, MNIST_FILES, write_idx

MNIST_DIR = os.environ.get("MNIST_DIR", "/root/data/mnist")


def mnist_available():
    return all(os.path.exists(os.path.join(MNIST_DIR, f))
               for pair in MNIST_FILES.values() for f in pair)


@pytest.fixture
def tiny_mnist(tmp_path):
    """Four IDX files with 12 train / 5 test random 28x28 images."""
    rng = np.random.default_rng(0)
    for split, n in (("train", 12), ("test", 5)):
        img, lbl = MNIST_FILES[split]
        write_idx(tmp_path / img, rng.integers(0, 256, size=(n, 28, 28)), IMAGE_MAGIC)
        write_idx(tmp_path / lbl, rng.integers(0, 10, size=n), LABEL_MAGIC)
    return tmp_path


# acceptance bookkeeping: one summary line per criterion
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        previous = _CRITERIA.get(label)
        # a criterion split over several tests fails if any part fails
        if previous is None or previous[0] == "PASS" or status == "FAIL":
            _CRITERIA[label] = (status, measured if previous is None or status == "FAIL"
                                else f"{previous[1]}; {measured}".strip("; "))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_CRITERIA):
        status, measured = _CRITERIA[label]
        terminalreporter.write_line(f"{status}  {label}" + (f"  [{measured}]" if measured else ""))
