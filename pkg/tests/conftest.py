import numpy as np
import pytest

from cvtmle.crossfit import crossfit_nuisances
from cvtmle.data import make_folds
from cvtmle.estimator import as_specs
from cvtmle.simulator import draw_sample, get_dgp, replicate_rng

# outcome / propensity libraries that contain the true model of each preset
CORRECT_LEARNERS = {
    "dgp-a": (("glm",), ("glm",)),
    "dgp-b": (("glm-interact",), ("glm",)),
    "dgp-c": (("glm-interact",), ("glm",)),
}


def grid_argmax_1d(f, lo=-10.0, hi=10.0, coarse=1e-3, fine=1e-6):
    """Brute-force maximiser: a coarse grid, then a 1e-6 grid around its best point."""
    grid = np.arange(lo, hi + coarse / 2, coarse)
    best = grid[np.argmax([f(e) for e in grid])]
    grid = best + np.arange(-2 * coarse, 2 * coarse + fine / 2, fine)
    vals = np.array([f(e) for e in grid])
    return float(grid[np.argmax(vals)])


def fluctuation_instance(seed, n=200):
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.05, 0.95, n)
    Y = (rng.random(n) < np.clip(q + rng.normal(0, 0.1, n), 0, 1)).astype(float)
    h = rng.normal(0, 1.5, n)
    return Y, np.log(q / (1 - q)), h


def prepared(dgp_name, n, seed, K=10):
    data = draw_sample(get_dgp(dgp_name), n, replicate_rng(seed, 0))
    plan = make_folds(n, K, seed=seed, stratify_by=data.A)
    q, g = CORRECT_LEARNERS[dgp_name]
    return data, crossfit_nuisances(data, plan, as_specs(q), as_specs(g))


@pytest.fixture(scope="session")
def dgp_b_1000():
    return prepared("dgp-b", 1000, 42)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per criterion, echoed in the terminal summary."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        ACCEPTANCE_LINES.append(line + (f" ({detail})" if detail else ""))
        print(ACCEPTANCE_LINES[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
