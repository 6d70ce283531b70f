import numpy as np
import pytest

from qopf import grid

CASE2_TEXT = """
BUS
1 gen  0.0 0.0  0.9 1.1
2 load 0.5 0.165 0.9 1.1
BRANCH
1 2 4.0 -8.0 1.0
GEN
1 0.0 2.0 -1.0 1.0
COST
1 1.0
"""

CASE3_TEXT = """
BUS
1 gen  0.0 0.0  0.9 1.1
2 load 0.3 0.1  0.9 1.1
3 load 0.2 0.05 0.9 1.1
BRANCH
1 2 4.0 -8.0 1.0
2 3 5.0 -10.0 1.0
1 3 3.0 -9.0 1.0
GEN
1 0.0 2.0 -1.0 1.0
COST
1 1.5
"""


@pytest.fixture(scope="session")
def case2():
    return grid.parse_case(CASE2_TEXT, "case2")


@pytest.fixture(scope="session")
def case3():
    return grid.parse_case(CASE3_TEXT, "case3")


@pytest.fixture(scope="session")
def ieee57():
    from qopf.harness import bundled_case_path
    return grid.load_case(bundled_case_path("ieee57"))


@pytest.fixture(scope="session")
def case2_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cases") / "case2.case"
    path.write_text(CASE2_TEXT, encoding="utf-8")
    return path


def random_hermitian(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return scale * (a + a.conj().T) / 2


def random_problem(n, m, seed, scale=1.0):
    """A QCQP with random dense Hermitian matrices; no grid semantics."""
    rng = np.random.default_rng(seed)
    m0 = random_hermitian(rng, n, scale)
    cons = tuple(
        grid.Constraint(random_hermitian(rng, n, scale),
                        float(rng.standard_normal()), "gen-limit", k)
        for k in range(m)
    )
    return grid.QcqpProblem(n=n, m=m, m0=m0, constraints=cons)


def random_state(rng, dim):
    state = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return state / np.linalg.norm(state)
