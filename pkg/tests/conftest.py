import numpy as np
import pytest

from dpthreshold.panel import PanelData

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_panel(n=8, T=5, seed=0, names=("y", "q", "x", "w1", "w2")):
    rng = np.random.default_rng(seed)
    series = {nm: rng.standard_normal((n, T)) for nm in names}
    return PanelData(tuple(str(i) for i in range(n)), tuple(range(1, T + 1)), series)


def noiseless_panel(beta, delta, gamma, n=40, T=5, seed=0, kink=False, static=False):
    """Panel with y generated exactly by the threshold model (no error, no effects).

    Dynamic models use y_{t-1} as the first regressor; ``x`` is the second
    regressor and ``q`` the threshold variable. Kink models use q as the
    regressor carrying the hinge.
    """
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, T))
    x = rng.standard_normal((n, T))
    mu = rng.standard_normal(n)
    y = np.zeros((n, T))
    prev = rng.standard_normal(n)
    for t in range(T):
        regs = ([] if static else [prev]) + [x[:, t] if not kink else q[:, t]]
        xt = np.column_stack(regs)
        if kink:
            thr = delta * np.maximum(q[:, t] - gamma, 0.0)
        else:
            thr = (np.column_stack([np.ones(n), xt]) @ delta) * (q[:, t] > gamma)
        y[:, t] = xt @ beta + thr + mu
        prev = y[:, t]
    return PanelData(tuple(str(i) for i in range(n)), tuple(range(1, T + 1)),
                     {"y": y, "q": q, "x": x, "w": rng.standard_normal((n, T))})


@pytest.fixture
def small_panel():
    return make_panel()
