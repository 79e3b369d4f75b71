import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from ifkit.dist import Schema, random_positive

settings.register_profile(
    "ifkit", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ifkit")

ATE_TEXT = "sum_x { E[y | x=x, a=1] * p(x=x) }"
DENSITY_TEXT = "sum_z { p(z=z) * p(z=z) }"
MEAN_TEXT = "sum_y { y * p(y=y) }"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@st.composite
def positive_dists(draw, schema):
    """Strictly positive distributions on a fixed schema, seeded by hypothesis."""
    seed = draw(st.integers(0, 2**32 - 1))
    return random_positive(Schema.of(schema), np.random.default_rng(seed))


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record a one-line acceptance verdict, echo it, and return whether it passed."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
