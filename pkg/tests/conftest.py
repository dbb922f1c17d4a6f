import sys
from pathlib import Path

import numpy as np
import pytest

import banditfluid as bf
from banditfluid import policy as pol

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def three_state():
    return bf.load_scenario("nonindexable-3state")


@pytest.fixture(scope="session")
def three_state_hard():
    return bf.load_scenario("nonindexable-3state-hard")


@pytest.fixture(scope="session")
def mmsm():
    return bf.load_scenario("mmsm-2class")


@pytest.fixture(scope="session")
def six_policies():
    names = ("prio1", "prio12", "prio123", "prio2", "prio21", "prio213")
    return {n: pol.single_class_policy(n, 3) for n in names}


def with_x0(model, x0, state=1):
    counts = np.zeros(model.classes[0].num_states)
    counts[state - 1] = x0
    return model.with_counts((counts,))


@pytest.fixture(scope="session")
def x0_table(three_state):
    return bf.x0_breakpoints(three_state, 10.0)
