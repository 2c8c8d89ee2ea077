import numpy as np
import pytest

from fsenet.data import write_toy_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    write_toy_dataset(root, n=4, size=64, seed=3, split="train")
    write_toy_dataset(root, n=2, size=64, seed=4, split="test")
    return root


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, status, title, seconds, note in sorted(ACCEPTANCE, key=lambda r: r[0]):
        line = f"[{status}] criterion {num:>2}: {title} ({seconds:.1f}s)"
        terminalreporter.write_line(line + (f"  -- {note}" if note else ""))
