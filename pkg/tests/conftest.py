import numpy as np
import pytest

from d2drelay.config import ScenarioConfig
from d2drelay.engine import build_world, drop_streams

# (criterion, passed, detail) rows collected by the acceptance suite
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def small_config(**sections) -> ScenarioConfig:
    """A scaled-down relay scenario that runs in about a second."""
    base = {
        "deployment": {"idle_per_sector": 30, "dl_active_per_sector": 4, "ul_active_per_sector": 4},
        "run": {"drops": 2, "warmup_subframes": 50, "subframes": 150},
    }
    for k, v in sections.items():
        base[k] = {**base.get(k, {}), **v}
    return ScenarioConfig().replace(**base)


@pytest.fixture(scope="session")
def small_world():
    cfg = small_config()
    return build_world(cfg, drop_streams(cfg.run.seed, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {crit:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
