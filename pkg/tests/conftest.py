import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from sylkit._rng import unit_block
from sylkit.sparse import SparseMatrix, gen_convdiff_2d


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def report(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def match_error(a, b):
    """Largest distance under the best one-to-one pairing of two multisets."""
    cost = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    i, j = linear_sum_assignment(cost)
    return cost[i, j].max() if len(i) else 0.0


def random_stable(n, seed, shift=None):
    """Dense matrix with spectrum well inside the left half-plane."""
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n)) / np.sqrt(n)
    shift = 2.0 + np.abs(np.linalg.eigvals(M)).max() if shift is None else shift
    return M - shift * np.eye(n)


def random_sparse_stable(n, seed, density=0.05):
    rng = np.random.default_rng(seed)
    R = sp.random(n, n, density=density, random_state=rng, format="csr")
    R = (R - R.T) + 0.3 * R
    return SparseMatrix.from_scipy(R - 3.0 * sp.eye(n, format="csr"))


def convdiff_problem(grid=15, nu=0.1, r=1, seed=1):
    A = gen_convdiff_2d(grid, nu, "example61_A")
    B = gen_convdiff_2d(grid, nu, "example61_B")
    n = A.shape[0]
    return A, B, unit_block(n, r, seed), unit_block(n, r, seed + 1)


@pytest.fixture
def small_problem():
    return convdiff_problem()
