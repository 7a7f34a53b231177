"""Built-in environments and a sequential vector wrapper."""
from __future__ import annotations

import math

import numpy as np

from modrl import spaces as sp
from modrl.errors import ConfigError, EnvironmentStateError, SpaceError


class Environment:
    state_space: sp.Space
    action_space: sp.Space
    max_steps: int

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.steps = 0
        self.done = True

    def reset(self):
        self.steps = 0
        self.done = False
        return self._reset()

    def step(self, action):
        if self.done:
            raise EnvironmentStateError("step on a finished episode; call reset() first")
        if not self.action_space.contains(np.asarray(action)):
            raise SpaceError(f"action {action!r} outside {self.action_space!r}")
        state, reward, terminal = self._step(int(action))
        self.steps += 1
        if self.steps >= self.max_steps:
            terminal = True
        self.done = terminal
        return state, float(reward), bool(terminal)


class GridWorld(Environment):
    """size x size grid, start top-left, goal bottom-right. Actions: 0 up, 1 right, 2 down, 3 left.
    States are one-hot cell indicators; reaching the goal pays 1 and ends the episode."""

    MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))

    def __init__(self, size=4, max_steps=50, seed=0):
        super().__init__(seed)
        self.size = int(size)
        self.max_steps = int(max_steps)
        self.state_space = sp.FloatBox((self.size * self.size,), 0.0, 1.0)
        self.action_space = sp.IntBox(4)
        self.pos = (0, 0)

    def _obs(self):
        out = np.zeros(self.size * self.size)
        out[self.pos[0] * self.size + self.pos[1]] = 1.0
        return out

    def _reset(self):
        self.pos = (0, 0)
        return self._obs()

    def _step(self, action):
        dr, dc = self.MOVES[action]
        r = min(max(self.pos[0] + dr, 0), self.size - 1)
        c = min(max(self.pos[1] + dc, 0), self.size - 1)
        self.pos = (r, c)
        goal = self.pos == (self.size - 1, self.size - 1)
        return self._obs(), (1.0 if goal else 0.0), goal

    @property
    def optimal_steps(self) -> int:
        return 2 * (self.size - 1)


class CartPole(Environment):
    """Pole on a cart, explicit Euler with dt=0.02. Gravity 9.8, cart mass 1.0, pole mass 0.1,
    half pole length 0.5, push force 10. Ends when |x| > 2.4 or |theta| > 12 degrees; 1 reward
    per step including the last."""

    gravity = 9.8
    masscart = 1.0
    masspole = 0.1
    length = 0.5
    force_mag = 10.0
    tau = 0.02
    theta_limit = 12 * 2 * math.pi / 360
    x_limit = 2.4

    def __init__(self, max_steps=200, seed=0):
        super().__init__(seed)
        self.max_steps = int(max_steps)
        self.state_space = sp.FloatBox((4,))
        self.action_space = sp.IntBox(2)
        self.state = np.zeros(4)

    def _reset(self):
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        return self.state.copy()

    def _step(self, action):
        x, x_dot, theta, theta_dot = self.state
        force = self.force_mag if action == 1 else -self.force_mag
        total = self.masspole + self.masscart
        pole_ml = self.masspole * self.length
        cos, sin = math.cos(theta), math.sin(theta)
        temp = (force + pole_ml * theta_dot ** 2 * sin) / total
        theta_acc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos ** 2 / total))
        x_acc = temp - pole_ml * theta_acc * cos / total
        x = x + self.tau * x_dot
        x_dot = x_dot + self.tau * x_acc
        theta = theta + self.tau * theta_dot
        theta_dot = theta_dot + self.tau * theta_acc
        self.state = np.array([x, x_dot, theta, theta_dot])
        terminal = abs(x) > self.x_limit or abs(theta) > self.theta_limit
        return self.state.copy(), 1.0, terminal


ENVIRONMENTS = {"gridworld": GridWorld, "cartpole": CartPole}


def make_env(name, seed=0, **params) -> Environment:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    try:
        return cls(seed=seed, **params)
    except TypeError as e:
        raise ConfigError(f"bad parameters for {name}: {e}") from None


class VectorEnv:
    """k environments stepped one after another; finished ones reset automatically."""

    def __init__(self, envs):
        self.envs = list(envs)
        if not self.envs:
            raise ConfigError("vector env needs at least one environment")
        self.state_space = self.envs[0].state_space
        self.action_space = self.envs[0].action_space
        self.returns = np.zeros(len(self.envs))
        self.lengths = np.zeros(len(self.envs), dtype=np.int64)
        self.states = None

    @classmethod
    def make(cls, name, k, seed=0, **params):
        return cls([make_env(name, seed=seed * 1000 + i, **params) for i in range(k)])

    def __len__(self):
        return len(self.envs)

    def reset(self):
        self.returns[:] = 0.0
        self.lengths[:] = 0
        self.states = np.stack([env.reset() for env in self.envs])
        return self.states.copy()

    def step_prefix(self, actions):
        """Steps only the first ``len(actions)`` environments (used to end exactly on a budget)."""
        actions = np.asarray(actions)
        n = len(actions)
        if not 0 < n <= len(self.envs):
            raise SpaceError(f"expected between 1 and {len(self.envs)} actions, got {n}")
        return self._step(actions, n)

    def step(self, actions):
        actions = np.asarray(actions)
        if actions.shape[:1] != (len(self.envs),):
            raise SpaceError(f"expected {len(self.envs)} actions, got shape {actions.shape}")
        return self._step(actions, len(self.envs))

    def _step(self, actions, count):
        """Returns (states, rewards, terminals, next_states, finished) where ``states`` already
        holds reset states for finished envs, ``next_states`` the true successor states, and
        ``finished`` a list of (env index, return, length) for episodes that ended."""
        if self.states is None:
            raise EnvironmentStateError("reset() the vector env before stepping")
        states, rewards, terminals, successors, finished = [], [], [], [], []
        for i, (env, action) in enumerate(zip(self.envs[:count], actions)):
            s, r, t = env.step(action)
            self.returns[i] += r
            self.lengths[i] += 1
            successors.append(s)
            if t:
                finished.append((i, float(self.returns[i]), int(self.lengths[i])))
                self.returns[i] = 0.0
                self.lengths[i] = 0
                s = env.reset()
            states.append(s)
            rewards.append(r)
            terminals.append(t)
        self.states = np.concatenate([np.stack(states), self.states[count:]])
        return self.states[:count].copy(), np.array(rewards), np.array(terminals), np.stack(successors), finished
