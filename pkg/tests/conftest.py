import numpy as np
import pytest

from glate.data import CaseTable


def make_cases(props, n_per_judge, seed=0, effect=1.0, gamma=None, prefix="J"):
    """Threshold-crossing draw: D = 1(p_j > V), Y = D (effect + V) + gamma_j + W."""
    rng = np.random.default_rng(seed)
    props = np.asarray(props, dtype=float)
    gamma = np.zeros(props.size) if gamma is None else np.asarray(gamma, dtype=float)
    counts = np.broadcast_to(np.asarray(n_per_judge), props.shape)
    idx = np.repeat(np.arange(props.size), counts)
    v = rng.uniform(size=idx.size)
    w = rng.normal(size=idx.size)
    d = (props[idx] > v).astype(float)
    y = d * (effect + v) + gamma[idx] + w
    width = len(str(props.size))
    ids = tuple(f"{prefix}{i + 1:0{width}d}" for i in range(props.size))
    return CaseTable(outcome=y, treatment=d, judge_idx=idx.astype(np.int64), judge_ids=ids)


@pytest.fixture
def cases_factory():
    return make_cases


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
