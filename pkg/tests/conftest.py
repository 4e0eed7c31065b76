"""Shared fixtures and config helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from platoonsim.config import ExperimentConfig, parse_config

# A deliberately small world: short platoon, tight radio range, no emergency.
# Keeps full-pipeline tests fast while exercising every subsystem.
TINY_MESSAGING = """
lanes = 4
platoon_size = 6
nominal_range_m = 50
warmup_s = 1.0
steady_window_s = 2.0
emergency_enabled = false
max_sim_s = 4.0
seed = 5
"""


def make_config_text(*extra_lines: str, base: str = TINY_MESSAGING) -> str:
    return base + "\n".join(extra_lines)


def make_config(*extra_lines: str, base: str = TINY_MESSAGING) -> ExperimentConfig:
    return parse_config(make_config_text(*extra_lines, base=base))


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return make_config()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance criterion verdicts where capture can't hide them."""
    try:
        import acceptance_lib
    except ImportError:
        return
    if acceptance_lib.ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lib.ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
