import numpy as np
import pytest

from molmimo.workbench import Campaign, run_pipeline

# small but complete campaign: 40 training cases, VDS holds the three figure cases
SMALL_CONFIG = {
    "sim": {"n_molecules": 100, "n_replications": 3, "t_end": 0.5},
    "tds": {"kind": "custom", "d": [3, 5, 7, 9, 11], "h": [0, 1], "R": [3, 5], "D": [50, 100]},
    "vds": {"kind": "custom", "d": [2, 6, 8], "h": [1], "R": [3, 5], "D": [50, 100]},
    "train": {"max_epochs": 30},
    "ber": {"n_bits": 2000},
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_campaign(request):
    """Full TDS/VDS campaign at desk scale (1000 molecules x 50 replications).

    Lives in the pytest cache and is resumed on later sessions, so only the
    first run pays the simulation cost (about 10 minutes on one core).
    """
    root = request.config.cache.mkdir("desk_campaign")
    campaign = Campaign.from_config(root, {}, seed=0, half_tds=True)
    report = run_pipeline(campaign)
    return campaign, report


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        request.config.acceptance_lines.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda x: x[0]):
            terminalreporter.write_line(line)
