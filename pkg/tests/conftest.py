import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from cvl.panel import SyntheticConfig, build_target, generate_synthetic, preprocess


@pytest.fixture(scope="session")
def small_config():
    return SyntheticConfig(n_firms=20, n_dates=320, n_characteristics=4, n_clusters=4, seed=5)


@pytest.fixture(scope="session")
def raw_small_panel(small_config):
    return generate_synthetic(small_config)


@pytest.fixture(scope="session")
def small_panel(raw_small_panel):
    return build_target(preprocess(raw_small_panel), 63)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
