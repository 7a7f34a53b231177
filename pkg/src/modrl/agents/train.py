"""Single-process training loop with metric lines and optional greedy evaluation."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from modrl.agents.config import Config
from modrl.agents.dqn import Agent
from modrl.envs import VectorEnv, make_env

METRICS_HEADER = "t_seconds,frames_total,fps,updates,loss,mean_return"


def metrics_line(t, frames, updates, loss, mean_return) -> str:
    fps = frames / t if t > 0 else 0.0
    loss_text = "nan" if loss is None else f"{loss:.6g}"
    ret_text = "nan" if mean_return is None else f"{mean_return:.6g}"
    return f"{t:.3f},{frames},{fps:.1f},{updates},{loss_text},{ret_text}"


@dataclass
class TrainResult:
    episode_returns: list = field(default_factory=list)
    eval_returns: list = field(default_factory=list)
    lines: list = field(default_factory=list)
    frames: int = 0
    updates: int = 0
    solved_at: int = -1

    def mean_last(self, n=50):
        tail = self.episode_returns[-n:]
        return float(np.mean(tail)) if tail else float("nan")


def evaluate(agent: Agent, env_name, params, episodes, seed):
    """Greedy episodes on a fresh environment."""
    env = make_env(env_name, seed=seed, **params)
    totals = []
    for _ in range(episodes):
        s, done, total = env.reset(), False, 0.0
        while not done:
            s, r, done = env.step(int(agent.get_actions(s, explore=False)))
            total += r
        totals.append(total)
    return float(np.mean(totals))


def train(config: Config, backend=None, seed=None, emit=None, target=None, agent=None) -> TrainResult:
    """Runs ``config.train.steps`` env frames. ``target`` stops early once reached: for
    evaluation runs it is compared with the greedy evaluation mean, otherwise with the mean
    of the last 50 training episodes."""
    seed = config.agent.seed if seed is None else int(seed)
    agent = agent or Agent(config.agent, backend=backend, seed=seed)
    tc, uc = config.train, config.agent.update
    venv = VectorEnv.make(config.env.name, tc.num_envs, seed=seed, **config.env.params)
    states = venv.reset()
    result = TrainResult()
    start = time.perf_counter()
    last_loss = None
    credit = 0.0
    next_log = tc.log_interval
    next_eval = tc.eval_interval
    if emit:
        emit(METRICS_HEADER)
    while result.frames < tc.steps:
        actions = agent.get_actions(states)
        next_states, rewards, terminals, successors, finished = venv.step(actions)
        for i in range(len(venv)):
            agent.observe(states[i], actions[i], rewards[i], terminals[i], env_id=i, next_states=successors[i])
        states = next_states
        result.frames += len(venv)
        result.episode_returns += [ret for _, ret, _ in finished]
        if result.frames >= tc.learn_start and agent.memory_size() > 0:
            credit += len(venv) / uc.update_interval
            while credit >= 1.0:
                last_loss = agent.update()
                credit -= 1.0
        result.updates = agent.updates
        if result.frames >= next_log:
            next_log += tc.log_interval
            mean = result.mean_last() if result.episode_returns else None
            line = metrics_line(time.perf_counter() - start, result.frames, agent.updates, last_loss, mean)
            result.lines.append(line)
            if emit:
                emit(line)
        if tc.eval_interval and result.frames >= next_eval:
            next_eval += tc.eval_interval
            score = evaluate(agent, config.env.name, config.env.params, tc.eval_episodes, seed + 7919)
            result.eval_returns.append((result.frames, score))
            if target is not None and score >= target:
                result.solved_at = result.frames
                break
        elif target is not None and not tc.eval_interval and len(result.episode_returns) >= 50 \
                and result.mean_last() >= target:
            result.solved_at = result.frames
            break
    result.agent = agent
    return result
