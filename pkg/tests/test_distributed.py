import numpy as np
import pytest

from modrl.agents.dqn import Agent
from modrl.agents.config import load_config
from modrl.distributed import Shard, run

from conftest import make_config, random_records


def grid(*overrides):
    return load_config("configs/dqn_gridworld.json", list(overrides))


def test_single_worker_conservation():
    m = run(grid("runner.workers=1", "runner.shards=1", "runner.budget=1000", "runner.fragment_length=50"))
    assert m.frames_total == 1000
    assert m.inserted_per_shard == [1000]
    assert m.produced_per_worker == [1000]


@pytest.mark.parametrize("transport", ["thread", "process"])
def test_four_workers_versions(transport):
    m = run(grid("runner.workers=4", "runner.shards=2", "runner.budget=2000",
                 f"runner.transport=\"{transport}\""))
    assert m.frames_total == 2000 and sum(m.worker_frames) == 2000
    assert sum(m.inserted_per_shard) == sum(m.produced_per_worker) == 2000
    for versions in m.worker_versions:
        assert versions == sorted(versions)
    assert all(v == m.learner_version for v in m.worker_final_versions)
    assert m.updates > 0


def test_learn_start_threshold():
    m = run(grid("runner.workers=1", "runner.shards=1", "runner.budget=99", "runner.learn_start=100"))
    assert sum(m.inserted_per_shard) == 99
    assert m.updates == 0


def test_stale_priority_updates_dropped(rng):
    cfg = make_config("memory.capacity=8").agent
    shard = Shard(0, cfg, seed=0)
    shard.insert(random_records(8, rng))
    _, idx, _, gens = shard.sample(4)
    shard.insert(random_records(8, rng))  # overwrites every slot
    assert shard.update_priorities(idx, gens, np.ones(4)) == 4
    _, idx, _, gens = shard.sample(4)
    assert shard.update_priorities(idx, gens, np.ones(4)) == 0


def test_stale_weights_still_valid_actions(rng):
    cfg = make_config().agent
    learner, worker = Agent(cfg, seed=1), Agent(cfg, seed=2)
    worker.set_weights(learner.policy_weights())
    learner.insert_records(random_records(32, rng))
    for _ in range(3):
        learner.update()
    actions = worker.get_actions(rng.normal(size=(16, 4)))
    assert set(actions.tolist()) <= {0, 1}


def test_metric_lines():
    lines = []
    run(grid("runner.workers=2", "runner.budget=400"), emit=lines.append)
    assert lines[0] == "t_seconds,frames_total,fps,updates,loss,mean_return"
    assert lines[-1].split(",")[1] == "400"
    assert all(len(line.split(",")) == 6 for line in lines)
