import sys
from pathlib import Path

import pytest
from hypothesis import settings

from esm_tts.config import RunConfig
from esm_tts.tokens import build_inventory

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def inv():
    return build_inventory()


@pytest.fixture
def small_config():
    return RunConfig()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
