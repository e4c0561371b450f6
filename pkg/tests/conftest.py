import numpy as np
import pandas as pd
import pytest

from gmima.simulate import SimConfig
from gmima.tabular import Schema, from_frame

SMALL_SCHEMA = Schema(
    columns={"id": "id", "iw": "id", "country": "id", "y": "binary", "d": "binary",
             "x": "continuous"},
    outcomes=("y",),
    focus="d",
    controls=("x",),
    interviewer="iw",
    country="country",
    groups={"iws": ("d",), "capi": ("x",)},
    interviewer_columns=("d",),
    respondent_id="id",
)


@pytest.fixture
def small_schema():
    return SMALL_SCHEMA


def small_dataset(n=200, seed=0, missing=True):
    rng = np.random.default_rng(seed)
    iw = np.arange(n) // 5
    country = np.where(iw % 2 == 0, "AA", "BB")
    d_iw = rng.integers(0, 2, iw.max() + 1).astype(float)
    d = d_iw[iw]
    x = rng.normal(size=n)
    y = (rng.random(n) < 1 / (1 + np.exp(-(-0.2 + 0.7 * d + 0.5 * x)))).astype(float)
    if missing:
        lost = rng.random(iw.max() + 1) < 0.2
        d = np.where(lost[iw], np.nan, d)
        x = np.where(rng.random(n) < 0.15, np.nan, x)
    frame = pd.DataFrame({"id": [f"R{i}" for i in range(n)], "iw": [f"I{j}" for j in iw],
                          "country": country, "y": y, "d": d, "x": x})
    return from_frame(frame, SMALL_SCHEMA)


@pytest.fixture
def tiny_config():
    """A small population that keeps simulation tests fast."""
    return SimConfig(countries=3, interviewers_per_country=12, respondents_per_interviewer=6.0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
