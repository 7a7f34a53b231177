"""Ape-X style runtime at desk scale: acting workers, replay shards owned by the learner.

Roles talk only through bounded queues. Workers push fixed-length fragments to the
shard queues round-robin; the learner drains those queues into its shards, samples the
shards round-robin, updates, pushes priorities back and publishes full weight
snapshots. Threads are the default transport; ``process`` runs workers in
separate processes with the same message protocol.
"""
from __future__ import annotations

import multiprocessing as mp
import queue
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from modrl import spaces as sp
from modrl.agents.config import Config, config_from_dict
from modrl.agents.dqn import Agent, record_space
from modrl.agents.train import METRICS_HEADER, metrics_line
from modrl.components.memory import PrioritizedReplay, ReplayMemory
from modrl.envs import VectorEnv
from modrl.errors import ModrlError
from modrl.graph.executor import build_executor


def _concat(batches):
    return {k: np.concatenate([b[k] for b in batches]) for k in batches[0]}


class Shard:
    """One replay shard. Slot generations make priority updates for evicted slots detectable."""

    def __init__(self, index, agent_config, seed):
        m = agent_config.memory
        self.prioritized = m.type == "prioritized"
        cls = PrioritizedReplay if self.prioritized else ReplayMemory
        kwargs = dict(alpha=m.alpha, beta=m.beta, epsilon=m.epsilon) if self.prioritized else {}
        self.capacity = m.capacity
        component = cls(f"shard-{index}", m.capacity, **kwargs)
        state = sp.space_from_spec(agent_config.state_space).with_ranks(batch=False)
        action = sp.space_from_spec(agent_config.action_space).with_ranks(batch=False)
        spaces = {"records": record_space(state, action), "num_records": sp.IntBox()}
        if self.prioritized:
            spaces.update(indices=sp.IntBox(add_batch_rank=True), td_errors=sp.FloatBox(add_batch_rank=True))
        self.executor = build_executor(component, spaces, seed=seed)
        self.generation = np.zeros(self.capacity, np.int64)
        self.cursor = 0
        self.size = 0
        self.received = 0
        self.dropped = 0

    def insert(self, records, td_errors=None):
        n = len(records["rewards"])
        idx = (self.cursor + np.arange(n)) % self.capacity
        np.add.at(self.generation, idx, 1)
        self.cursor = (self.cursor + n) % self.capacity
        self.size = min(self.size + n, self.capacity)
        self.received += n
        if td_errors is not None and self.prioritized:
            self.executor.execute("insert_records_with_priorities", records, td_errors)
        else:
            self.executor.execute("insert_records", records)

    def sample(self, batch_size):
        if self.prioritized:
            records, idx, weights = self.executor.execute("get_records", batch_size)
        else:
            records, idx = self.executor.execute("get_records", batch_size)
            weights = np.ones(len(idx))
        return records, idx, weights, self.generation[idx].copy()

    def update_priorities(self, idx, generations, td_errors):
        """Applies updates whose slots were not overwritten since sampling; returns the drop count."""
        if not self.prioritized:
            return 0
        keep = self.generation[idx] == generations
        dropped = int(np.sum(~keep))
        self.dropped += dropped
        if keep.any():
            self.executor.execute("update_records", idx[keep], td_errors[keep])
        return dropped


@dataclass
class RunMetrics:
    seconds: float = 0.0
    frames_total: int = 0
    fps: float = 0.0
    updates: int = 0
    updates_per_sec: float = 0.0
    inserted_per_shard: list = field(default_factory=list)
    produced_per_worker: list = field(default_factory=list)
    worker_frames: list = field(default_factory=list)
    worker_versions: list = field(default_factory=list)
    worker_final_versions: list = field(default_factory=list)
    learner_version: int = 0
    dropped_priority_updates: int = 0
    episode_returns: list = field(default_factory=list)
    lines: list = field(default_factory=list)
    acting_seconds: list = field(default_factory=list)
    solved_at: int = -1

    def mean_last(self, n=50):
        tail = [r for _, r in self.episode_returns[-n:]]
        return float(np.mean(tail)) if tail else float("nan")

    @property
    def acting_fps(self) -> float:
        """Env frames per wall-second of the slowest worker's acting phase."""
        slowest = max(self.acting_seconds) if self.acting_seconds else 0.0
        return self.frames_total / slowest if slowest > 0 else 0.0


def _drain_latest(inbox):
    latest = None
    while True:
        try:
            latest = inbox.get_nowait()
        except queue.Empty:
            return latest


def worker_main(wid, config_dict, backend, seed, budget, shard_queues, control, inbox):
    """Act on a vector of envs, post-process n-step returns locally, ship fragments."""
    try:
        config = config_from_dict(config_dict)
        rc = config.runner
        agent = Agent(config.agent, backend=backend, seed=seed + 7 * (wid + 1))
        venv = VectorEnv.make(config.env.name, rc.envs_per_worker, seed=seed * 100 + wid, **config.env.params)
        scored = config.agent.memory.worker_priorities and config.agent.memory.type == "prioritized"
        versions = []

        def apply(message):
            _, version, weights = message[:3]
            if versions and version < versions[-1]:
                raise ModrlError(f"worker {wid} saw weight version {version} after {versions[-1]}")
            agent.set_weights(weights)
            versions.append(version)

        apply(inbox.get())
        cap = None
        if rc.frames_per_update is not None:
            slack = rc.fragment_length + config.agent.update.n_step * rc.envs_per_worker

            def cap(version):
                learner_frames = rc.learn_start + rc.frames_per_update * (version + 1) * rc.sync_interval
                return learner_frames / rc.workers + slack
        sent = [0] * len(shard_queues)
        target = wid % len(shard_queues)
        fragment, returns = [], []
        count = 0
        frames = 0
        states = venv.reset()
        start = time.perf_counter()

        def ship(batches):
            nonlocal target, count
            records = _concat(batches)
            td = agent.executor.execute("get_td_errors", records) if scored else None
            shard_queues[target].put(("insert", wid, records, td, list(returns), frames))
            returns.clear()
            sent[target] += len(records["rewards"])
            target = (target + 1) % len(shard_queues)
            count = 0

        while frames < budget:
            k = min(len(venv), budget - frames)
            actions = agent.get_actions(states[:k])
            next_states, rewards, terminals, successors, finished = venv.step_prefix(actions)
            for i in range(k):
                for batch in agent.pop_records(i, states[i], actions[i], rewards[i], terminals[i], successors[i]):
                    fragment.append(batch)
                    count += len(batch["rewards"])
            states = np.concatenate([next_states, states[k:]])
            frames += k
            returns.extend(ret for _, ret, _ in finished)
            if count >= rc.fragment_length:
                ship(fragment)
                fragment = []
                latest = _drain_latest(inbox)
                if latest is not None:
                    apply(latest)
                # stay within reach of the learner's update count
                while cap is not None and frames < budget and frames > cap(versions[-1]):
                    apply(inbox.get())
        fragment += agent.buffers.flush_all()
        if fragment:
            ship(fragment)
        acting = time.perf_counter() - start
        control.put(("done", wid, frames, sent, acting))
        while True:
            message = inbox.get()
            apply(message)
            if message[0] == "final":
                break
        control.put(("bye", wid, versions))
    except Exception as e:  # surfaced by the learner
        control.put(("error", wid, f"{type(e).__name__}: {e}"))


def _queue_factory(transport, size):
    if transport == "process":
        ctx = mp.get_context("fork")
        return lambda bound=size: ctx.Queue(bound if bound else 0), ctx
    return lambda bound=size: queue.Queue(bound if bound else 0), None


def run(config: Config, backend=None, seed=None, emit=None, target=None, log_every=1.0) -> RunMetrics:
    """Run workers and the learner until the env-frame budget is spent."""
    rc, ac = config.runner, config.agent
    seed = ac.seed if seed is None else int(seed)
    backend = backend or ac.backend
    make_queue, ctx = _queue_factory(rc.transport, rc.queue_size)
    learner = Agent(ac, backend=backend, seed=seed)
    shards = [Shard(i, ac, seed + 1000 + i) for i in range(rc.shards)]
    shard_queues = [make_queue() for _ in range(rc.shards)]
    control = make_queue(0)
    inboxes = [make_queue(0) for _ in range(rc.workers)]
    budgets = [rc.budget // rc.workers + (1 if i < rc.budget % rc.workers else 0) for i in range(rc.workers)]
    config_dict = asdict(config)
    args = [(w, config_dict, backend, seed, budgets[w], shard_queues, control, inboxes[w]) for w in range(rc.workers)]
    if rc.transport == "process":
        roles = [ctx.Process(target=worker_main, args=a, daemon=True) for a in args]
    else:
        roles = [threading.Thread(target=worker_main, args=a, daemon=True) for a in args]

    metrics = RunMetrics(worker_frames=[0] * rc.workers, produced_per_worker=[0] * rc.workers,
                         worker_versions=[[] for _ in range(rc.workers)],
                         worker_final_versions=[None] * rc.workers, acting_seconds=[0.0] * rc.workers)
    version = 0

    def publish(kind="weights"):
        snapshot = learner.policy_weights()
        for box in inboxes:
            box.put((kind, version, snapshot))

    publish()
    start = time.perf_counter()
    for role in roles:
        role.start()
    expected = None
    done = set()
    frames_seen = [0] * rc.workers
    received_from = [[0] * rc.shards for _ in range(rc.workers)]
    last_loss = None
    next_log = start + log_every
    turn = 0
    if emit:
        emit(METRICS_HEADER)

    def receive(block):
        got = False
        for s, q in enumerate(shard_queues):
            while True:
                try:
                    msg = q.get(timeout=0.002) if block and not got and s == len(shard_queues) - 1 else q.get_nowait()
                except queue.Empty:
                    break
                _, wid, records, td, returns, frames = msg
                shards[s].insert(records, td)
                n = len(records["rewards"])
                received_from[wid][s] += n
                metrics.produced_per_worker[wid] += n
                frames_seen[wid] = frames
                total = sum(frames_seen)
                metrics.episode_returns += [(total, r) for r in returns]
                got = True
        while True:
            try:
                msg = control.get_nowait()
            except queue.Empty:
                break
            if msg[0] == "error":
                raise ModrlError(f"worker {msg[1]} failed: {msg[2]}")
            if msg[0] == "done":
                _, wid, frames, sent, acting = msg
                done.add(wid)
                metrics.worker_frames[wid] = frames
                metrics.acting_seconds[wid] = acting
                expected_sent[wid] = sent
        return got

    expected_sent = {}
    try:
        while True:
            receive(block=False)
            if len(done) == rc.workers and all(received_from[w] == expected_sent[w] for w in done):
                break
            inserted = sum(sh.received for sh in shards)
            frames_total = sum(frames_seen)
            allowed = rc.frames_per_update is None or learner.updates < frames_total / rc.frames_per_update
            shard = shards[turn % rc.shards]
            if inserted >= rc.learn_start and inserted > 0 and allowed and shard.size > 0:
                turn += 1
                records, idx, weights, generations = shard.sample(ac.update.batch_size)
                last_loss = learner.update(batch=dict(records, weights=weights))
                receive(block=False)
                shard.update_priorities(idx, generations, learner.last_td)
                if learner.updates % rc.sync_interval == 0:
                    version += 1
                    publish()
            elif inserted >= rc.learn_start and shard.size == 0:
                turn += 1
            else:
                receive(block=True)
            now = time.perf_counter()
            if now >= next_log:
                next_log = now + log_every
                line = metrics_line(now - start, sum(frames_seen), learner.updates, last_loss,
                                    metrics.mean_last() if metrics.episode_returns else None)
                metrics.lines.append(line)
                if emit:
                    emit(line)
            if target is not None and metrics.solved_at < 0 and len(metrics.episode_returns) >= 50 \
                    and metrics.mean_last() >= target:
                metrics.solved_at = sum(frames_seen)
        version += 1
        publish("final")
        byes = 0
        while byes < rc.workers:
            msg = control.get(timeout=60)
            if msg[0] == "error":
                raise ModrlError(f"worker {msg[1]} failed: {msg[2]}")
            if msg[0] == "bye":
                metrics.worker_versions[msg[1]] = msg[2]
                metrics.worker_final_versions[msg[1]] = msg[2][-1]
                byes += 1
    finally:
        for role in roles:
            role.join(timeout=5)
    metrics.seconds = time.perf_counter() - start
    metrics.frames_total = sum(metrics.worker_frames)
    metrics.fps = metrics.frames_total / metrics.seconds if metrics.seconds else 0.0
    metrics.updates = learner.updates
    metrics.updates_per_sec = learner.updates / metrics.seconds if metrics.seconds else 0.0
    metrics.inserted_per_shard = [sh.received for sh in shards]
    metrics.dropped_priority_updates = sum(sh.dropped for sh in shards)
    metrics.learner_version = version
    line = metrics_line(metrics.seconds, metrics.frames_total, learner.updates, last_loss,
                        metrics.mean_last() if metrics.episode_returns else None)
    metrics.lines.append(line)
    if emit:
        emit(line)
    metrics.learner = learner
    return metrics
