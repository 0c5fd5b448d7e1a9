from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import settings

from swarmcdr.scenario import ScenarioConfig, load_config

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def cfg() -> ScenarioConfig:
    return ScenarioConfig().validate()


@pytest.fixture
def headon_cfg() -> ScenarioConfig:
    return load_config((FIXTURES / "headon.cfg").read_text(encoding="utf-8"))


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line, printed in the terminal summary whatever the outcome."""
    lines = request.config.stash[_VERDICTS]

    def record(criterion: int, ok: bool, detail: str) -> bool:
        lines.append((criterion, f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
