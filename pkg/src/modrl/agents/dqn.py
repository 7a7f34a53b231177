"""The DQN root component and the high-level Agent facade around it."""
from __future__ import annotations

import numpy as np

from modrl import spaces as sp
from modrl.agents.checkpoint import read_checkpoint, write_checkpoint
from modrl.agents.config import AgentConfig
from modrl.agents.nstep import NStepBuffers
from modrl.components.exploration import EpsilonExploration
from modrl.components.memory import PrioritizedReplay, ReplayMemory
from modrl.components.optimizers import OPTIMIZERS
from modrl.components.preprocessing import PreprocessorStack, make_preprocessor
from modrl.components.sync import WeightSync
from modrl.components.tower import DQNTower
from modrl.errors import CheckpointError, ExecutionError, VariableError
from modrl.graph.build import DeviceMap, apply_replica_strategy, build
from modrl.graph.component import Component, api, graph_fn
from modrl.graph.executor import GraphExecutor
from modrl.graph.meta import build_meta_graph


def record_space(state_space, action_space):
    return sp.Dict({
        "states": state_space,
        "actions": action_space,
        "rewards": sp.FloatBox(),
        "terminals": sp.BoolBox(),
        "next_states": state_space,
        "discounts": sp.FloatBox(),
    }, add_batch_rank=True)


class DQNRoot(Component):
    """Preprocessor, tower (policy, target, loss), exploration, memory, optimizer, target sync."""

    def __init__(self, config: AgentConfig, name="dqn"):
        super().__init__(name)
        self.config = config
        u, m, e = config.update, config.memory, config.exploration
        self.state_space = sp.space_from_spec(config.state_space).with_ranks(batch=False, time=False)
        self.action_space = sp.space_from_spec(config.action_space).with_ranks(batch=False, time=False)
        self.preprocessor = self.add_subcomponent(PreprocessorStack(
            "preprocessor", [make_preprocessor(p, i) for i, p in enumerate(config.preprocessing)]))
        self.tower = self.add_subcomponent(DQNTower(
            "tower", config.network, self.action_space, config.dueling, u.gamma, u.double_q, u.huber_delta))
        n = self.action_space.num_categories
        self.exploration = self.add_subcomponent(EpsilonExploration("exploration", n, e.start, e.end,
                                                                    e.decay_steps))
        if m.type == "prioritized":
            self.memory = PrioritizedReplay("memory", m.capacity, m.alpha, m.beta, m.epsilon)
        else:
            self.memory = ReplayMemory("memory", m.capacity)
        self.add_subcomponent(self.memory)
        self.optimizer = self.add_subcomponent(OPTIMIZERS[u.optimizer]("optimizer", u.learning_rate))
        self.target_sync = self.add_subcomponent(WeightSync("target-sync"))
        self.prioritized = m.type == "prioritized"
        self.replica_tower = self.tower
        self.replicas = None
        if not self.prioritized:
            self.api_methods["update_priorities"].registered = False
            self.api_methods["insert_prioritized"].registered = False

    def input_spaces(self):
        states = self.state_space.with_ranks(batch=True)
        return {
            "states": states,
            "time_step": sp.IntBox(),
            "records": record_space(self.state_space, self.action_space),
            "weights": sp.FloatBox(add_batch_rank=True),
            "batch_size": sp.IntBox(),
            "indices": sp.IntBox(add_batch_rank=True),
            "td_errors": sp.FloatBox(add_batch_rank=True),
        }

    # acting
    @api
    def get_actions(self, states, time_step):
        return self.exploration.get_action(self.tower.get_q(self.preprocessor.preprocess(states)), time_step)

    @api
    def get_actions_raw(self, states, time_step):
        return self.exploration.get_action(self.tower.get_q(states), time_step)

    @api
    def get_greedy_actions(self, states):
        return self.exploration.get_greedy_action(self.tower.get_q(self.preprocessor.apply(states)))

    @api
    def get_greedy_actions_raw(self, states):
        return self.exploration.get_greedy_action(self.tower.get_q(states))

    @api
    def get_q_values(self, states):
        return self.tower.get_q(self.preprocessor.apply(states))

    # memory
    @api
    def insert_records(self, records):
        self.memory.insert_records(records)

    @api
    def get_memory_size(self):
        return self.memory.get_size()

    @api
    def update_priorities(self, indices, td_errors):
        self.memory.update_records(indices, td_errors)

    @api
    def insert_prioritized(self, records, td_errors):
        self.memory.insert_records_with_priorities(records, td_errors)

    # learning
    def _preprocessed(self, records):
        out = {k: records[k] for k in ("actions", "rewards", "terminals", "discounts")}
        out["states"] = self.preprocessor.apply(records["states"])
        out["next_states"] = self.preprocessor.apply(records["next_states"])
        return out

    def _loss_and_grads(self, records, weights):
        records = self._preprocessed(records)
        if not self.replicas:
            return self.tower.loss_and_grads(records, weights)
        splitter, averager = self.subcomponents["splitter"], self.subcomponents["averager"]
        online, target = self.tower.policy_variables(), self.tower.target_variables()
        # one split call keeps the splitter's input space fixed
        parts = splitter.split(dict(records, weights=weights))
        tds, results = [], []
        for i, replica in enumerate(self.replicas):
            self.target_sync.sync(online, replica.policy_variables())
            self.target_sync.sync(target, replica.target_variables())
            part = parts[i]
            loss, td, grads = replica.loss_and_grads(part, part["weights"])
            tds.append(td)
            results.append({"loss": loss, "grads": grads})
        mean = averager.average(tuple(results))
        return mean["loss"], self.subcomponents["merger"].merge(tuple(tds)), mean["grads"]

    @api
    def compute_gradients(self, records, weights):
        return self._loss_and_grads(records, weights)

    @api
    def get_td_errors(self, records):
        weights = self._unit_weights(records["rewards"])
        loss, td, _ = self.tower.loss_and_grads(self._preprocessed(records), weights)
        return td

    @api
    def update_from_batch(self, records, weights):
        loss, td, grads = self._loss_and_grads(records, weights)
        self.optimizer.apply(self.tower.policy_variables(), grads)
        return loss, td

    @api
    def update_from_memory(self, batch_size):
        if self.prioritized:
            records, indices, weights = self.memory.get_records(batch_size)
        else:
            records, indices = self.memory.get_records(batch_size)
            weights = self._unit_weights(records["rewards"])
        loss, td, grads = self._loss_and_grads(records, weights)
        self.optimizer.apply(self.tower.policy_variables(), grads)
        if self.prioritized:
            self.memory.update_records(indices, td)
        return loss, indices, td

    @api
    def sync_target(self):
        self.target_sync.sync(self.tower.policy_variables(), self.tower.target_variables())

    def _unit_weights(self, like):
        return self._graph_fn_ones(like)

    @graph_fn
    def _graph_fn_ones(self, ops, like):
        return ops.ones_like(like, dtype="f64")


class Agent:
    """Listing-style facade: get_actions, observe, update, get/set weights, export/import."""

    def __init__(self, config: AgentConfig, backend=None, seed=None):
        self.config = config
        self.backend = backend or config.backend
        self.seed = config.seed if seed is None else int(seed)
        self.root = DQNRoot(config)
        graph = build_meta_graph(self.root, self.root.input_spaces())
        if config.update.replicas > 1:
            graph = apply_replica_strategy(graph, config.update.replicas)
        self.graph = graph
        self.built = build(graph, DeviceMap.from_config(config.device_map), self.backend, self.seed)
        self.executor = GraphExecutor(self.built)
        self.state_shape = self.root.state_space.shape
        self.num_actions = self.root.action_space.num_categories
        u = config.update
        self.buffers = NStepBuffers(u.n_step, u.gamma, self.state_shape, u.flush_threshold)
        self.timestep = 0
        self.updates = 0
        self.inserted = 0
        self.executor.execute("sync_target")

    @property
    def stats(self):
        return self.built.stats

    def _batched(self, states):
        states = np.asarray(states, np.float64)
        single = states.shape == self.state_shape
        return (states[None] if single else states), single

    def get_actions(self, states, explore=True, preprocess=True):
        batch, single = self._batched(states)
        if explore:
            name = "get_actions" if preprocess else "get_actions_raw"
            actions = self.executor.execute(name, batch, self.timestep)
            self.timestep += len(batch)
        else:
            actions = self.executor.execute("get_greedy_actions" if preprocess else "get_greedy_actions_raw", batch)
        return actions[0] if single else actions

    def get_q_values(self, states):
        batch, single = self._batched(states)
        q = self.executor.execute("get_q_values", batch)
        return q[0] if single else q

    def observe(self, states, actions, rewards, terminals, env_id=0, next_states=None):
        """Append one transition for ``env_id``; complete fragments go to memory."""
        for records in self.buffers.add(env_id, states, actions, rewards, terminals, next_states):
            self.insert_records(records)

    def pop_records(self, env_id, states, actions, rewards, terminals, next_states=None):
        """Like observe, but returns finished record batches instead of inserting them."""
        return self.buffers.add(env_id, states, actions, rewards, terminals, next_states)

    def insert_records(self, records):
        self.executor.execute("insert_records", records)
        self.inserted += len(records["rewards"])

    def memory_size(self) -> int:
        return int(self.executor.execute("get_memory_size"))

    def update(self, batch=None, sequence_indices=None):
        """One learning step from memory or an external batch. ``sequence_indices`` is reserved."""
        if batch is None:
            if self.memory_size() == 0:
                raise ExecutionError("update: memory is empty and no batch was given")
            loss, indices, td = self.executor.execute("update_from_memory", self.config.update.batch_size)
            self.last_indices, self.last_td = indices, td
        else:
            weights = batch.get("weights")
            records = {k: v for k, v in batch.items() if k != "weights"}
            if "discounts" not in records:
                n = len(records["rewards"])
                records["discounts"] = np.full(n, self.config.update.gamma ** self.config.update.n_step)
            if weights is None:
                weights = np.ones(len(records["rewards"]))
            loss, td = self.executor.execute("update_from_batch", records, weights)
            self.last_indices, self.last_td = None, td
        self.updates += 1
        if self.updates % self.config.update.target_sync_interval == 0:
            self.executor.execute("sync_target")
        return float(loss)

    def sync_target(self):
        self.executor.execute("sync_target")

    def get_weights(self, prefix="") -> dict:
        return dict(self.executor.read_variables(prefix))

    def policy_weights(self) -> dict:
        return self.get_weights(f"/{self.root.name}/tower/policy")

    def set_weights(self, values: dict):
        self.executor.write_variables(values)

    def export_model(self, path):
        write_checkpoint(path, self.get_weights())

    def import_model(self, path):
        values = read_checkpoint(path)
        own = set(self.executor.store.values)
        if set(values) != own:
            missing, extra = sorted(own - set(values)), sorted(set(values) - own)
            raise CheckpointError(f"checkpoint variables do not match the agent: missing {missing[:5]}, "
                                  f"unexpected {extra[:5]}")
        try:
            self.set_weights(values)
        except VariableError as e:
            raise CheckpointError(f"checkpoint does not fit the agent: {e}") from None
