import math

import numpy as np
import pytest

from modrl.envs import CartPole, GridWorld, VectorEnv, make_env
from modrl.errors import ConfigError, EnvironmentStateError, SpaceError


def cell(state, size=4):
    i = int(np.argmax(state))
    return divmod(i, size)


def test_gridworld_transitions():
    env = GridWorld()
    assert cell(env.reset()) == (0, 0)
    s, r, t = env.step(1)
    assert cell(s) == (0, 1) and r == 0.0 and not t
    s, r, t = env.step(0)  # wall
    assert cell(s) == (0, 1)
    for a in (1, 1, 2, 2, 2):
        s, r, t = env.step(a)
    assert cell(s) == (3, 3) and r == 1.0 and t
    with pytest.raises(EnvironmentStateError):
        env.step(0)


def test_gridworld_time_limit():
    env = GridWorld(max_steps=3)
    env.reset()
    assert [env.step(0)[2] for _ in range(3)] == [False, False, True]


def _euler(state, action):
    # reference dynamics written out from the documented constants
    g, mc, mp, half, f, dt = 9.8, 1.0, 0.1, 0.5, 10.0, 0.02
    x, xd, th, thd = state
    force = f if action == 1 else -f
    tmp = (force + mp * half * thd * thd * math.sin(th)) / (mc + mp)
    thacc = (g * math.sin(th) - math.cos(th) * tmp) / (half * (4 / 3 - mp * math.cos(th) ** 2 / (mc + mp)))
    xacc = tmp - mp * half * thacc * math.cos(th) / (mc + mp)
    return np.array([x + dt * xd, xd + dt * xacc, th + dt * thd, thd + dt * thacc])


def test_cartpole_matches_euler_and_terminates():
    env = CartPole(seed=3)
    s = env.reset()
    steps, done = 0, False
    while not done:
        expected = _euler(s, 1)
        s, r, done = env.step(1)
        steps += 1
        assert np.allclose(s, expected, rtol=0, atol=1e-12)
        assert r == 1.0
    assert abs(s[2]) > 12 * math.pi / 180 or abs(s[0]) > 2.4
    assert steps < 200


def test_bad_action_and_name():
    env = CartPole()
    env.reset()
    with pytest.raises(SpaceError):
        env.step(2)
    with pytest.raises(ConfigError):
        make_env("pong")


def test_vector_env():
    venv = VectorEnv.make("gridworld", 4, seed=0, max_steps=2)
    states = venv.reset()
    assert states.shape == (4, 16)
    finished = []
    for _ in range(4):
        states, rewards, terminals, successors, done = venv.step(np.zeros(4, dtype=int))
        assert len(rewards) == 4
        finished += done
        for i in np.flatnonzero(terminals):
            assert cell(states[i]) == (0, 0)
    assert len(finished) == 8
    assert sorted(i for i, _, _ in finished) == [0, 0, 1, 1, 2, 2, 3, 3]
    assert all(length == 2 for _, _, length in finished)


def test_vector_prefix_and_shape_check():
    venv = VectorEnv.make("cartpole", 3)
    venv.reset()
    out = venv.step_prefix(np.array([0, 1]))
    assert out[0].shape == (2, 4)
    with pytest.raises(SpaceError):
        venv.step(np.array([0, 1]))
