import os

import pytest

from gate_lab.physics import SystemParams


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GATE_LAB_FULL") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale run; set GATE_LAB_FULL=1")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def baseline():
    """20 T/m, 140 kHz COM, 20 kHz dressing."""
    return SystemParams.from_hz(20.0, 140e3, 20e3)


@pytest.fixture
def optimal():
    return SystemParams.from_hz(20.0, 140e3, 8e3)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance" not in getattr(rep, "nodeid", ""):
                continue
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance":
                    lines.append(value)
            if key == "skipped":
                lines.append(f"SKIP  {rep.nodeid.split('::')[-1]}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split()[1:3]):
            terminalreporter.write_line(line)
