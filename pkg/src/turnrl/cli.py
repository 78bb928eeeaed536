"""Command-line front end.

Config grammar: one `key.path = value` per line, `#` starts a comment, blank
lines ignored.  Values are parsed as JSON literals when possible (numbers,
booleans, quoted strings, arrays) and kept as bare strings otherwise.  The
same grammar serializes back out, so the copy persisted into the run
directory is directly reusable.  `--override key=value` applies after the
file, last one wins.

Exit codes: 0 ok, 2 config error (message names the offending key),
3 checkpoint error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .approx import CheckpointError, DivergenceError, load_scorer, make_encoder
from .actor import TokenPolicy
from .envs import generate_offline_dataset, make_env
from .fpe import FunctionClass, compare_levels, sweep_summary
from .hmdp import load_trajectories, save_trajectories
from .presets import fpe_sweep_spec
from .trainer import (ConfigError, TrainConfig, chai_train, evaluate,
                      filtered_bc_train, train)

_ENV_PRESETS = ("guess10", "guess32", "chain5")


def parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, ValueError):
        return raw


def parse_config_text(text: str) -> dict:
    """Flat dict of dotted keys.  Later assignments win."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        out[key] = parse_value(raw)
    return out


def serialize_config(flat: dict) -> str:
    lines = [f"{k} = {json.dumps(flat[k])}" for k in sorted(flat)]
    return "\n".join(lines) + "\n"


def load_config(path: str | None, overrides: list[str]) -> dict:
    flat: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e}")
        flat.update(parse_config_text(text))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError("override", f"expected key=value, got {ov!r}")
        key, raw = ov.split("=", 1)
        flat[key.strip()] = parse_value(raw)
    return flat


_INT_FIELDS = {f for f in TrainConfig.__dataclass_fields__
               if TrainConfig.__dataclass_fields__[f].type == "int"}
_FLOAT_FIELDS = {f for f in TrainConfig.__dataclass_fields__
                 if TrainConfig.__dataclass_fields__[f].type == "float"}
_BOOL_FIELDS = {f for f in TrainConfig.__dataclass_fields__
                if TrainConfig.__dataclass_fields__[f].type == "bool"}


def build_train_config(flat: dict) -> TrainConfig:
    kwargs = {}
    for key, value in flat.items():
        if not key.startswith("train."):
            continue
        name = key[len("train."):]
        if name not in TrainConfig.__dataclass_fields__:
            raise ConfigError(key, "unknown training key")
        if name in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ConfigError(key, f"expected an integer, got {value!r}")
            value = int(value)
        elif name in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(key, f"expected a number, got {value!r}")
            value = float(value)
        elif name in _BOOL_FIELDS:
            if not isinstance(value, bool):
                raise ConfigError(key, f"expected true or false, got {value!r}")
        kwargs[name] = value
    cfg = TrainConfig(**kwargs)
    cfg.validate()
    return cfg


def build_env(flat: dict):
    preset = flat.get("env.preset")
    if preset is None:
        raise ConfigError("env.preset", "missing (one of %s)" % (", ".join(_ENV_PRESETS)))
    if preset not in _ENV_PRESETS:
        raise ConfigError("env.preset", f"unknown preset {preset!r}")
    return make_env(preset)


def _resolved_with_defaults(flat: dict, cfg: TrainConfig) -> dict:
    out = dict(flat)
    for name in TrainConfig.__dataclass_fields__:
        out[f"train.{name}"] = getattr(cfg, name)
    out["meta.version"] = __version__
    return out


def _run_dir(flat: dict, required: bool = True) -> str | None:
    d = flat.get("run.dir")
    if d is None:
        if required:
            raise ConfigError("run.dir", "missing output directory")
        return None
    return str(d)


def cmd_train(config_path: str | None, overrides: list[str]) -> int:
    flat = load_config(config_path, overrides)
    cfg = build_train_config(flat)
    env = build_env(flat)
    dataset = None
    if cfg.mode == "offline":
        path = flat.get("dataset.path")
        if path is None:
            raise ConfigError("dataset.path", "offline mode needs a trajectory file")
        dataset = load_trajectories(str(path))
    run_dir = _run_dir(flat)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.txt"), "w") as fh:
        fh.write(serialize_config(_resolved_with_defaults(flat, cfg)))
    runner = {"archer": train, "filtered_bc": filtered_bc_train, "chai": chai_train}[cfg.algorithm]
    metrics = runner(cfg, env=env, dataset=dataset, run_dir=run_dir)
    final = metrics.records[-1] if metrics.records else None
    if final is not None:
        print(f"final eval_return={final['eval_return']} success_rate={final['success_rate']}")
    print(f"metrics written to {os.path.join(run_dir, 'metrics.csv')}")
    return 0


def cmd_eval(config_path: str | None, overrides: list[str]) -> int:
    flat = load_config(config_path, overrides)
    cfg = build_train_config(flat)
    env = build_env(flat)
    ckpt = flat.get("eval.checkpoint")
    if ckpt is None:
        raise ConfigError("eval.checkpoint", "missing actor checkpoint path")
    scorer = load_scorer(str(ckpt))
    enc = make_encoder(cfg.encoder, vocab_size=env.vocab.size, dim=cfg.encoder_dim,
                       buckets=cfg.encoder_buckets, window=cfg.encoder_window)
    if scorer.heads != env.vocab.size:
        raise CheckpointError(
            f"checkpoint has {scorer.heads} heads but the vocabulary needs {env.vocab.size}")
    if scorer.descriptor().get("in_dim", enc.out_dim) != enc.out_dim:
        raise CheckpointError("checkpoint input width does not match the configured encoder")
    policy = TokenPolicy(scorer, enc, env.vocab, env.utterance_len)
    episodes = int(flat.get("eval.episodes", 20))
    seed = int(flat.get("eval.seed", cfg.seed))
    decode = str(flat.get("eval.decode", "greedy"))
    result = evaluate(policy, env, episodes, seed=seed, decode=decode)
    print(f"mean_return={result.mean_return} success_rate={result.success_rate}")
    run_dir = _run_dir(flat, required=False)
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        path = os.path.join(run_dir, "eval.csv")
        with open(path, "w") as fh:
            fh.write("episode,return\n")
            for i, r in enumerate(result.returns):
                fh.write(f"{i},{r!r}\n")
        print(f"per-episode table written to {path}")
    return 0


def cmd_fpe(config_path: str | None, overrides: list[str]) -> int:
    flat = load_config(config_path, overrides)
    spec = fpe_sweep_spec(int(flat.get("fpe.instance_seed", 0)))
    grid = flat.get("fpe.grid", list(spec["grid"]))
    if not isinstance(grid, list) or not grid or not all(
            isinstance(n, int) and n >= 1 for n in grid):
        raise ConfigError("fpe.grid", "expected a nonempty array of positive integers")
    n_seeds = int(flat.get("fpe.seeds", len(spec["seeds"])))
    if n_seeds < 1:
        raise ConfigError("fpe.seeds", "must be >= 1")
    k_policy = flat.get("fpe.rounds", spec["k_policy"])
    fclass = spec["fclass"]
    if "fpe.family" in flat or "fpe.dim" in flat:
        fclass = FunctionClass(family=str(flat.get("fpe.family", fclass.family)),
                               dim=int(flat.get("fpe.dim", fclass.dim)),
                               seed=fclass.seed)
    rows = compare_levels(spec["mdp"], spec["pi"], grid, range(n_seeds), fclass,
                          k_policy=k_policy, ridge=float(flat.get("fpe.ridge", spec["ridge"])))
    run_dir = _run_dir(flat)
    os.makedirs(run_dir, exist_ok=True)
    table = os.path.join(run_dir, "sweep.csv")
    with open(table, "w") as fh:
        fh.write("view,N,K,M,seed,advantage_error\n")
        for r in rows:
            fh.write(f"{r['view']},{r['N']},{r['K']},{r['M']},{r['seed']},{r['advantage_error']!r}\n")
    summary = sweep_summary(rows)
    medians: dict = {}
    for srow in summary:
        medians[(srow["view"], srow["N"])] = srow["median_error"]
        print(f"view={srow['view']} N={srow['N']} median_error={srow['median_error']}")
    max_n = max(grid)
    ok = medians[("token", max_n)] >= medians[("utterance", max_n)]
    print(f"token_median_ge_utterance_at_max_N={ok}")
    print(f"sweep table written to {table}")
    return 0 if ok else 1


def cmd_gen_dataset(config_path: str | None, overrides: list[str]) -> int:
    flat = load_config(config_path, overrides)
    env = build_env(flat)
    out = flat.get("dataset.out")
    if out is None:
        raise ConfigError("dataset.out", "missing output path")
    epsilon = float(flat.get("dataset.epsilon", 0.5))
    episodes = int(flat.get("dataset.episodes", 1000))
    seed = int(flat.get("dataset.seed", 0))
    gamma = float(flat.get("dataset.gamma", 0.95))
    if not (0.0 <= epsilon <= 1.0):
        raise ConfigError("dataset.epsilon", "must lie in [0, 1]")
    if episodes < 1:
        raise ConfigError("dataset.episodes", "must be >= 1")
    trajs = generate_offline_dataset(env, epsilon, episodes, seed, gamma=gamma)
    save_trajectories(str(out), trajs)
    mean_ret = float(np.mean([t.reward_sum() for t in trajs]))
    print(f"wrote {len(trajs)} episodes to {out} (mean return {mean_ret})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="turnrl",
        description="Train and analyze utterance-level actor-critic agents on token-sequence games.",
    )
    parser.add_argument("--version", action="version", version=f"turnrl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("train", "run a training loop from a config file"),
        ("eval", "evaluate a saved actor checkpoint"),
        ("fpe", "run the two-level fitted policy evaluation sweep"),
        ("gen-dataset", "roll a scripted mixture and save trajectories"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", "-c", default=None, help="path to a key = value config file")
        p.add_argument("--override", "-o", action="append", default=[],
                       help="key=value, applied after the config file (repeatable)")
    args = parser.parse_args(argv)
    handler = {
        "train": cmd_train,
        "eval": cmd_eval,
        "fpe": cmd_fpe,
        "gen-dataset": cmd_gen_dataset,
    }[args.command]
    try:
        return handler(args.config, args.override)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 3
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
