import logging
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from jointsi.harness import WorldConfig, build_world  # noqa: E402

CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(autouse=True)
def _quiet_training_logs():
    logging.getLogger("jointsi").setLevel(logging.ERROR)
    yield


SMALL_WORLD = WorldConfig(max_len=12, dataset_size=300, context=4, embed_dim=6, hidden=8,
                          pretrain_size=300, pretrain_epochs=2)


@pytest.fixture(scope="session")
def small_world():
    return build_world(SMALL_WORLD, 0)
