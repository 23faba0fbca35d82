import numpy as np
import pytest

from localrecon.dynamics import DiscretizedSystem, LindbladSpec
from localrecon.locality import NeighborhoodStructure, build_output_map

CHAIN_H = " + ".join(
    [f"alpha{i}*X{i} + beta{i}*Y{i} + gamma{i}*Z{i}" for i in range(1, 5)]
    + [f"delta{i}*X{i}*X{i + 1} + epsilon{i}*Z{i}*Z{i + 1}" for i in range(1, 4)]
)
CHAIN_PARAMS = {f"{n}{i}": 1.0 for n in ("alpha", "beta", "gamma") for i in range(1, 5)}
CHAIN_PARAMS.update({f"{n}{i}": 1.0 for n in ("delta", "epsilon") for i in range(1, 4)})
NOISE = [f"eta{i}*plus{i}" for i in range(1, 5)]

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def chain():
    return NeighborhoodStructure(4, [[1, 2], [2, 3], [3, 4]])


@pytest.fixture(scope="session")
def chain_output(chain):
    return build_output_map(chain, [2] * 4)


@pytest.fixture(scope="session")
def case1_spec(chain):
    return LindbladSpec.from_expressions([2] * 4, chain, CHAIN_H, [], CHAIN_PARAMS)


@pytest.fixture(scope="session")
def case2_spec(chain):
    params = dict(CHAIN_PARAMS, **{f"eta{i}": 1.0 for i in range(1, 5)})
    return LindbladSpec.from_expressions([2] * 4, chain, CHAIN_H, NOISE, params)


@pytest.fixture(scope="session")
def case1_system(case1_spec, chain_output):
    return DiscretizedSystem.from_spec(case1_spec, chain_output)


@pytest.fixture(scope="session")
def case2_system(case2_spec, chain_output):
    return DiscretizedSystem.from_spec(case2_spec, chain_output)


def random_two_qubit_spec(rng, noise=True):
    """Nearest-neighbour 2-qubit generator with random coefficients."""
    ns = NeighborhoodStructure(2, [[1, 2]])
    terms = [f"{c}{q}*{P}{q}" for q in (1, 2) for c, P in (("a", "X"), ("b", "Y"), ("c", "Z"))]
    ham = " + ".join(terms + ["d*X1*X2", "e*Z1*Z2"])
    names = [f"{c}{q}" for q in (1, 2) for c in "abc"] + ["d", "e"]
    params = {n: float(rng.standard_normal()) for n in names}
    noise_ops = []
    if noise:
        noise_ops = ["g1*minus1", "g2*Z2"]
        params.update(g1=float(abs(rng.standard_normal())), g2=float(abs(rng.standard_normal())))
    return LindbladSpec.from_expressions([2, 2], ns, ham, noise_ops, params)
