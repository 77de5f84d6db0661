import numpy as np
import pytest
from hypothesis import strategies as st

from hierloss.hierarchy import random_hierarchy, seven_leaf_hierarchy


@pytest.fixture
def seven():
    return seven_leaf_hierarchy()


@st.composite
def trees(draw, max_nodes=30):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_hierarchy(np.random.default_rng(seed), max_nodes)


growth_rates = st.sampled_from([0.25, 0.5, 0.9, 1.0, 1.2, 2.0, 5.0]) | st.floats(0.05, 20.0)


# one "PASS/FAIL <criterion>: <detail>" line per acceptance criterion
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
