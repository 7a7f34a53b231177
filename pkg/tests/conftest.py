import numpy as np
import pytest

from modrl.agents.config import apply_overrides, config_from_dict

# PASS/FAIL lines from the acceptance suite, echoed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def make_config(*overrides, **sections):
    data = {"agent": {"state_space": {"type": "float_box", "shape": [4]},
                      "action_space": {"type": "int_box", "num_categories": 2},
                      "network": [{"units": 16, "activation": "relu"}],
                      "dueling": True,
                      "memory": {"type": "prioritized", "capacity": 64},
                      "update": {"batch_size": 8, "n_step": 1}}}
    for key, value in sections.items():
        data.setdefault(key, {}).update(value)
    return config_from_dict(apply_overrides(data, overrides))


def random_records(n, rng, state_dim=4, num_actions=2):
    return {"states": rng.normal(size=(n, state_dim)), "actions": rng.integers(0, num_actions, n),
            "rewards": rng.normal(size=n), "terminals": rng.random(n) < 0.2,
            "next_states": rng.normal(size=(n, state_dim)), "discounts": np.full(n, 0.99)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
