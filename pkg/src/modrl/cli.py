"""Command line: modrl VERB --config PATH [--seed N] [--out PATH] [--backend B] [--set K=V ...]."""
from __future__ import annotations

import argparse
import copy
import json
import sys
import time

import numpy as np

from modrl.errors import ConfigError, ModrlError

VERBS = ("train", "train-distributed", "bench-build", "bench-act", "test-component", "export-dot")
BACKENDS = ("staged", "define_by_run")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modrl", description="Modular RL components, agents and benchmarks.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output file (metrics, DOT, report)")
    p.add_argument("--backend", choices=BACKENDS, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable")
    p.add_argument("--batch-sizes", default="1,4,16,64", help="bench-act: comma separated batch sizes")
    p.add_argument("--frames", type=int, default=2000, help="bench-act: env frames per batch size")
    return p


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None


def _set_path(data, overrides):
    from modrl.agents.config import parse_override

    data = copy.deepcopy(data)
    for text in overrides:
        key, value = parse_override(text)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} walks into a non-object")
        node[parts[-1]] = value
    return data


def _load(args):
    """Agent configs become Config objects; single-component configs stay dicts."""
    from modrl.agents.config import apply_overrides, config_from_dict

    data = _read_json(args.config)
    if isinstance(data, dict) and "component" in data:
        return "component", _set_path(data, args.overrides)
    return "agent", config_from_dict(apply_overrides(data, args.overrides))


def _build_component(spec, backend, seed):
    from modrl import spaces as sp
    from modrl.components.catalog import CATALOG
    from modrl.graph.build import DeviceMap, build
    from modrl.graph.meta import build_meta_graph

    name = spec["component"]
    if name not in CATALOG:
        raise ConfigError(f"unknown component {name!r}; known: {', '.join(sorted(CATALOG))}")
    entry = CATALOG[name]
    component = entry.make(**dict(entry.params, **spec.get("params", {})))
    spaces = spec.get("spaces") or (component.input_spaces() if entry.spaces is None else entry.spaces)
    graph = build_meta_graph(component, {k: sp.space_from_spec(v) for k, v in spaces.items()})
    return build(graph, DeviceMap(), backend, seed)


def _build_agent(config, backend, seed):
    from modrl.agents.dqn import Agent

    return Agent(config.agent, backend=backend, seed=seed).built


class _Output:
    def __init__(self, path):
        self.file = open(path, "w") if path else None

    def __call__(self, line):
        print(line, flush=True)
        if self.file:
            self.file.write(line + "\n")

    def close(self):
        if self.file:
            self.file.close()


def cmd_train(args, kind, cfg):
    from modrl.agents.train import train

    if kind != "agent":
        raise ConfigError("train needs an agent config")
    out = _Output(args.out)
    try:
        result = train(cfg, backend=args.backend, seed=args.seed, emit=out)
    finally:
        out.close()
    tail = result.mean_last()
    print(f"# frames={result.frames} updates={result.updates} episodes={len(result.episode_returns)} "
          f"mean_last_50={tail:.4g}", file=sys.stderr)
    if result.eval_returns:
        print(f"# eval={result.eval_returns[-1][1]:.4g}", file=sys.stderr)


def cmd_train_distributed(args, kind, cfg):
    from modrl.distributed import run

    if kind != "agent":
        raise ConfigError("train-distributed needs an agent config")
    out = _Output(args.out)
    try:
        m = run(cfg, backend=args.backend, seed=args.seed, emit=out)
    finally:
        out.close()
    print(f"# frames={m.frames_total} per_worker={m.worker_frames} inserted={m.inserted_per_shard} "
          f"updates={m.updates} version={m.learner_version} acting_fps={m.acting_fps:.1f}", file=sys.stderr)


def cmd_bench_build(args, kind, cfg):
    seed = 0 if args.seed is None else args.seed
    if kind == "component":
        built = _build_component(cfg, args.backend or "staged", seed)
    else:
        built = _build_agent(cfg, args.backend, cfg.agent.seed if args.seed is None else seed)
    s = built.stats
    text = s.to_text() + f"total_seconds={s.meta_graph_seconds + s.build_seconds}\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)


def cmd_bench_act(args, kind, cfg):
    from modrl.agents.dqn import Agent
    from modrl.envs import VectorEnv

    if kind != "agent":
        raise ConfigError("bench-act needs an agent config")
    try:
        sizes = [int(x) for x in args.batch_sizes.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad --batch-sizes {args.batch_sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError("batch sizes must be positive")
    seed = cfg.agent.seed if args.seed is None else args.seed
    agent = Agent(cfg.agent, backend=args.backend, seed=seed)
    out = _Output(args.out)
    out("batch_size,actions_per_sec,env_frames_per_sec")
    try:
        for n in sizes:
            venv = VectorEnv.make(cfg.env.name, n, seed=seed, **cfg.env.params)
            states = venv.reset()
            agent.get_actions(states)  # warm the compiled plan
            act_time, frames = 0.0, 0
            start = time.perf_counter()
            while frames < args.frames:
                t = time.perf_counter()
                actions = agent.get_actions(states)
                act_time += time.perf_counter() - t
                states = venv.step(actions)[0]
                frames += n
            total = time.perf_counter() - start
            out(f"{n},{frames / act_time:.1f},{frames / total:.1f}")
    finally:
        out.close()


def cmd_test_component(args, kind, cfg):
    from modrl.components.catalog import CATALOG, compare_backends, run_entry

    if kind != "component":
        raise ConfigError('test-component needs a config with a "component" key')
    name = cfg["component"]
    if name not in CATALOG:
        raise ConfigError(f"unknown component {name!r}; known: {', '.join(sorted(CATALOG))}")
    seed = 0 if args.seed is None else args.seed
    params, spaces = cfg.get("params"), cfg.get("spaces")
    out = _Output(args.out)
    try:
        outputs, variables = run_entry(name, args.backend or "staged", seed, params, spaces)
        for api_name, value in outputs:
            out(f"{api_name}: {_summary(value)}")
        out(f"variables: {len(variables)}")
        if args.backend is None:
            diff = compare_backends(name, seed, params, spaces)
            out(f"backend max rel diff: {diff:.3g}")
            if not diff <= 1e-9:
                raise ModrlError(f"backends disagree on {name}: {diff:.3g}")
    finally:
        out.close()


def _summary(value):
    from modrl import spaces as sp

    if value is None:
        return "-"
    parts = []
    for key, leaf in sp.flatten(value).items():
        arr = np.asarray(leaf)
        parts.append(f"{key or '/'} {arr.dtype}{list(arr.shape)}")
    return ", ".join(parts)


def cmd_export_dot(args, kind, cfg):
    from modrl.graph.meta import export_dot

    seed = 0 if args.seed is None else args.seed
    if kind == "component":
        built = _build_component(cfg, args.backend or "staged", seed)
    else:
        built = _build_agent(cfg, args.backend, cfg.agent.seed if args.seed is None else seed)
    text = export_dot(built.graph)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}: {built.stats.component_count} components", file=sys.stderr)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "train": cmd_train,
    "train-distributed": cmd_train_distributed,
    "bench-build": cmd_bench_build,
    "bench-act": cmd_bench_act,
    "test-component": cmd_test_component,
    "export-dot": cmd_export_dot,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        kind, cfg = _load(args)
        COMMANDS[args.verb](args, kind, cfg)
    except (ModrlError, OSError, ValueError) as e:
        print(f"modrl {args.verb}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
