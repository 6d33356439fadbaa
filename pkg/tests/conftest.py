import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from styleloc.synthdata import DataConfig, Dataset, build_dataset  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """8 train / 4 test pairs at the default 64x96 resolution."""
    root = tmp_path_factory.mktemp("tiny") / "ds"
    build_dataset(DataConfig(path=str(root), train=8, test=4, seed=3))
    return Dataset(root)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
