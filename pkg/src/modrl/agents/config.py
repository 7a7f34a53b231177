"""Strict configuration schema. Unknown keys and out-of-range values are errors."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Optional

from modrl import spaces as sp
from modrl.errors import ConfigError, SpaceError

SECTIONS = ("agent", "env", "train", "runner")


def _check(cond, message):
    if not cond:
        raise ConfigError(message)


@dataclass
class ExplorationConfig:
    start: float = 1.0
    end: float = 0.05
    decay_steps: int = 10000

    def validate(self):
        _check(0.0 <= self.end <= 1.0 and 0.0 <= self.start <= 1.0, "exploration: epsilon must lie in [0, 1]")
        _check(self.decay_steps >= 1, "exploration.decay_steps must be >= 1")


@dataclass
class MemoryConfig:
    type: str = "prioritized"
    capacity: int = 10000
    alpha: float = 0.6
    beta: float = 0.4
    epsilon: float = 1e-6
    worker_priorities: bool = False

    def validate(self):
        _check(self.type in ("prioritized", "replay"), f"memory.type must be prioritized or replay, got {self.type!r}")
        _check(self.capacity >= 1, "memory.capacity must be >= 1")
        _check(self.alpha >= 0.0, "memory.alpha must be >= 0")
        _check(0.0 <= self.beta <= 1.0, "memory.beta must lie in [0, 1]")
        _check(self.epsilon > 0.0, "memory.epsilon must be > 0")


@dataclass
class UpdateConfig:
    batch_size: int = 32
    gamma: float = 0.99
    double_q: bool = True
    huber_delta: Optional[float] = 1.0
    n_step: int = 3
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    target_sync_interval: int = 500
    update_interval: int = 4
    replicas: int = 1
    flush_threshold: Optional[int] = None

    def validate(self):
        _check(self.batch_size >= 1, "update.batch_size must be >= 1")
        _check(0.0 <= self.gamma <= 1.0, f"update.gamma must lie in [0, 1], got {self.gamma}")
        _check(self.huber_delta is None or self.huber_delta > 0, "update.huber_delta must be > 0")
        _check(self.n_step >= 1, "update.n_step must be >= 1")
        _check(self.learning_rate > 0, "update.learning_rate must be > 0")
        _check(self.optimizer in ("sgd", "adam"), f"update.optimizer must be sgd or adam, got {self.optimizer!r}")
        _check(self.target_sync_interval >= 1, "update.target_sync_interval must be >= 1")
        _check(self.update_interval >= 1, "update.update_interval must be >= 1")
        _check(self.replicas >= 1, "update.replicas must be >= 1")
        _check(self.flush_threshold is None or self.flush_threshold >= 1, "update.flush_threshold must be >= 1")
        if self.replicas > 1:
            _check(self.batch_size % self.replicas == 0, "update.batch_size must be divisible by update.replicas")


@dataclass
class AgentConfig:
    state_space: dict
    action_space: dict
    type: str = "dqn"
    network: list = field(default_factory=lambda: [{"units": 64, "activation": "relu"},
                                                   {"units": 64, "activation": "relu"}])
    dueling: bool = True
    preprocessing: list = field(default_factory=list)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    device_map: dict = field(default_factory=dict)
    seed: int = 0
    backend: str = "staged"

    def validate(self):
        _check(self.type == "dqn", f"agent.type must be 'dqn', got {self.type!r}")
        _check(self.backend in ("staged", "define_by_run"), f"agent.backend must be staged or define_by_run")
        try:
            state = sp.space_from_spec(self.state_space)
            action = sp.space_from_spec(self.action_space)
        except SpaceError as e:
            raise ConfigError(f"agent spaces: {e}") from None
        _check(isinstance(state, sp.FloatBox), "agent.state_space must be a float_box")
        _check(isinstance(action, sp.IntBox) and action.num_categories > 0 and action.shape == (),
               "agent.action_space must be a scalar categorical int_box")
        _check(isinstance(self.network, list) and self.network, "agent.network must be a nonempty layer list")
        for i, layer in enumerate(self.network):
            _check(isinstance(layer, dict) and set(layer) <= {"units", "activation"} and "units" in layer,
                   f"agent.network[{i}] needs 'units' and optional 'activation'")
            _check(int(layer["units"]) >= 1, f"agent.network[{i}].units must be >= 1")
            _check(layer.get("activation", "relu") in ("relu", "tanh", "linear"),
                   f"agent.network[{i}].activation unknown")
        for i, pre in enumerate(self.preprocessing):
            _check(isinstance(pre, dict) and pre.get("type") in ("scale", "clip", "flatten", "normalize"),
                   f"agent.preprocessing[{i}] has an unknown type")
        _check(isinstance(self.device_map, dict) and set(self.device_map) <= {"ops", "variables", "default"},
               "agent.device_map keys must be ops, variables, default")
        self.exploration.validate()
        self.memory.validate()
        self.update.validate()


@dataclass
class EnvConfig:
    name: str = "gridworld"
    params: dict = field(default_factory=dict)

    def validate(self):
        _check(self.name in ("gridworld", "cartpole"), f"env.name must be gridworld or cartpole, got {self.name!r}")


@dataclass
class TrainConfig:
    steps: int = 30000
    num_envs: int = 1
    learn_start: int = 500
    eval_interval: int = 0
    eval_episodes: int = 10
    log_interval: int = 1000

    def validate(self):
        _check(self.steps >= 1 and self.num_envs >= 1, "train.steps and train.num_envs must be >= 1")
        _check(self.learn_start >= 0 and self.eval_interval >= 0, "train intervals must be >= 0")
        _check(self.eval_episodes >= 1 and self.log_interval >= 1, "train.eval_episodes and log_interval must be >= 1")


@dataclass
class RunnerConfig:
    workers: int = 2
    envs_per_worker: int = 2
    shards: int = 2
    fragment_length: int = 50
    sync_interval: int = 10
    learn_start: int = 500
    budget: int = 20000
    transport: str = "thread"
    queue_size: int = 16
    frames_per_update: Optional[float] = None

    def validate(self):
        for name in ("workers", "envs_per_worker", "shards", "fragment_length", "sync_interval", "budget",
                     "queue_size"):
            _check(getattr(self, name) >= 1, f"runner.{name} must be >= 1")
        _check(self.learn_start >= 0, "runner.learn_start must be >= 0")
        _check(self.transport in ("thread", "process"), "runner.transport must be thread or process")
        _check(self.frames_per_update is None or self.frames_per_update > 0, "runner.frames_per_update must be > 0")


@dataclass
class Config:
    agent: AgentConfig
    env: EnvConfig = field(default_factory=EnvConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    runner: RunnerConfig = field(default_factory=RunnerConfig)

    def validate(self):
        self.agent.validate()
        self.env.validate()
        self.train.validate()
        self.runner.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)


_NESTED = {
    AgentConfig: {"exploration": ExplorationConfig, "memory": MemoryConfig, "update": UpdateConfig},
    Config: {"agent": AgentConfig, "env": EnvConfig, "train": TrainConfig, "runner": RunnerConfig},
}


def _from_dict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        kwargs[key] = _from_dict(sub, value, f"{where}.{key}" if where else key) if sub else copy.deepcopy(value)
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{where or 'config'}: {e}") from None


def _coerce(cls, where):
    """Numeric fields given as the wrong JSON type are schema errors."""
    for f in fields(cls):
        value = getattr(cls, f.name)
        if is_dataclass(value):
            _coerce(value, f"{where}.{f.name}")
        elif f.type in ("int", "float") and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"{where}.{f.name}: expected a number, got {value!r}")
        elif f.type == "int" and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"{where}.{f.name}: expected an integer, got {value!r}")
            setattr(cls, f.name, int(value))
        elif f.type == "bool" and not isinstance(value, bool):
            raise ConfigError(f"{where}.{f.name}: expected true/false, got {value!r}")


def config_from_dict(data: dict) -> Config:
    cfg = _from_dict(Config, data, "")
    _coerce(cfg, "config")
    return cfg.validate()


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like KEY=VALUE")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for text in overrides or ():
        key, value = parse_override(text)
        path = key.split(".")
        if path[0] not in SECTIONS:
            path = ["agent"] + path
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} walks into a non-object")
        node[path[-1]] = value
    return data


def load_config(path, overrides=()) -> Config:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return config_from_dict(apply_overrides(data, overrides))
