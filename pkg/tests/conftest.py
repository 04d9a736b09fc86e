import numpy as np
import pytest
import scipy.sparse as sp
import torch

from amr import KC, LEARNER
from amr.hingraph import HeteroGraph
from amr.synth import toy_fixture


@pytest.fixture
def toy():
    return toy_fixture(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(0)


def random_hin(rng, max_nodes=12, types=(LEARNER, "course", KC), density=0.35):
    """Random 3-type graph with at most ``max_nodes`` nodes and every type pair related."""
    n_total = int(rng.integers(3, max_nodes + 1))
    cuts = np.sort(rng.choice(np.arange(1, n_total), size=len(types) - 1, replace=False))
    counts = np.diff(np.concatenate([[0], cuts, [n_total]]))
    num = dict(zip(types, counts.tolist()))
    rels = {}
    for i, a in enumerate(types):
        for b in types[i + 1:]:
            m = (rng.random((num[a], num[b])) < density).astype(np.int8)
            rels[(a, b)] = sp.coo_matrix(m)
    return HeteroGraph(num, rels)


def line_graph():
    """learner0 - kc0 - learner1 - kc1 as a path."""
    R = sp.coo_matrix(np.array([[1, 0], [1, 1]], dtype=np.int8))
    return HeteroGraph({LEARNER: 2, KC: 2}, {(LEARNER, KC): R})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
