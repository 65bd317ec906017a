"""Command-line front end.

Subcommands: simulate (emit datasets), fit (train a model from dataset
files), infer (recovered transitions / bound envelopes for a history), eval
(JS / reward of a saved model), experiment (full sweep), report (aggregate
CSVs from a results file).  Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import causal, environments, evaluation, experiments, latent, planning, pomdp
from .seeding import split_rng


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we want 1
        raise _UsageError(message)


def _add_common(p):
    p.add_argument("--env", default="door", choices=("door", "tiger"))
    p.add_argument("--scenario", default="noisy_good")
    p.add_argument("--master-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causalpomdp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample regime-tagged datasets")
    _add_common(p)
    p.add_argument("--n-obs", type=int, default=512)
    p.add_argument("--n-int", type=int, default=512)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="train a model from dataset files")
    _add_common(p)
    p.add_argument("--data", nargs="+", required=True, help="dataset .jsonl files")
    p.add_argument("--latent-size", type=int, default=32)
    p.add_argument("--method", default="em", choices=("em", "grad"))
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=500)
    p.add_argument("--setting", default="augmented", choices=experiments.SETTINGS,
                   help="how to combine regimes before fitting")
    p.add_argument("--out", required=True, help="model .json path")

    p = sub.add_parser("infer", help="recovered transitions and bounds for a history")
    p.add_argument("--model", required=True)
    p.add_argument("--history", default="", help="comma-separated o0,a0,o1,...")
    p.add_argument("--action", type=int, default=None)
    p.add_argument("--bounds", action="store_true",
                   help="also emit Theorem-style bound envelopes per (action, next obs)")
    p.add_argument("--data", default=None,
                   help="dataset for empirical (data-mode) bounds; omit for model-based")
    p.add_argument("--out", default=None, help="bounds CSV path (default stdout)")

    p = sub.add_parser("eval", help="JS divergence / expected reward of a saved model")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--metric", default="both", choices=("js", "reward", "both"))
    p.add_argument("--mode", default=None, choices=("exact", "monte_carlo"))
    p.add_argument("--n-trajectories", type=int, default=100)
    p.add_argument("--dream-epochs", type=int, default=1000)

    p = sub.add_parser("experiment", help="full sweep over settings and sample sizes")
    _add_common(p)
    p.add_argument("--config", default=None, help="JSON file mirroring ExperimentConfig")
    p.add_argument("--setting", nargs="+", default=None, choices=experiments.SETTINGS)
    p.add_argument("--n-obs", type=int, nargs="+", default=None)
    p.add_argument("--n-int", type=int, nargs="+", default=None)
    p.add_argument("--seeds", type=int, default=None)
    p.add_argument("--latent-size", type=int, default=None)
    p.add_argument("--method", default=None, choices=("em", "grad"))
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("report", help="aggregate a results.csv into summary CSVs")
    p.add_argument("--results", required=True)
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_simulate(args) -> int:
    env, scenario = environments.make_environment(args.env, args.scenario)
    os.makedirs(args.out, exist_ok=True)
    obs_data = pomdp.sample_dataset(
        env, scenario.privileged_policy, 0, args.n_obs, args.master_seed, key=(0, 0, 0))
    int_data = pomdp.sample_dataset(
        env, scenario.standard_policy, 1, args.n_int, args.master_seed, key=(0, 0, 1))
    pomdp.write_dataset(obs_data, os.path.join(args.out, "obs.jsonl"))
    pomdp.write_dataset(int_data, os.path.join(args.out, "int.jsonl"))
    scenarios = {
        name: environments.make_environment(args.env, name)[1]
        for name in environments.scenario_names(args.env)
    }
    environments.write_environment(env, scenarios, os.path.join(args.out, "environment.json"))
    print(f"wrote {len(obs_data)} observational and {len(int_data)} interventional "
          f"episodes to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    env, _ = environments.make_environment(args.env, args.scenario)
    parts = [pomdp.read_dataset(path, n_obs=env.n_obs, n_actions=env.n_actions)
             for path in args.data]
    obs_eps = pomdp.RegimeDataset(tuple(ep for d in parts for ep in d if ep.regime == 0))
    int_eps = pomdp.RegimeDataset(tuple(ep for d in parts for ep in d if ep.regime == 1))
    data = experiments.build_training_set(obs_eps, int_eps, args.setting)
    if len(data) == 0:
        raise ValueError("no episodes to fit after applying the setting")
    config = latent.FitConfig(
        method={"em": "em", "grad": "gradient"}[args.method],
        n_restarts=args.restarts,
        max_epochs=args.max_epochs,
        latent_size=args.latent_size,
        seed=args.master_seed,
    )
    model = latent.fit(data, config)
    latent.save_model(model, args.out)
    print(f"fitted |Z|={args.latent_size} model on {len(data)} episodes -> {args.out}")
    return 0


def _cmd_infer(args) -> int:
    model = latent.load_model(args.model)
    history = [int(tok) for tok in args.history.split(",") if tok.strip() != ""]
    if args.action is not None:
        vec = causal.recovered_transition(model, history, args.action)
        print(json.dumps({"history": history, "action": args.action,
                          "recovered_transition": vec.tolist()}))
    if args.bounds:
        reference = pomdp.read_dataset(args.data) if args.data else model
        envelopes, products = {}, {}
        obs_hist = history[0::2] if history else [int(np.argmax(model.latent_prior @ model.emission))]
        act_hist = history[1::2]
        for a in range(model.n_actions):
            for o in range(model.n_obs):
                observations = obs_hist + [o]
                actions = act_hist + [a]
                if isinstance(reference, latent.AugmentedModel):
                    try:
                        probs = causal.observational_sequence_probs(reference, observations, actions)
                    except pomdp.ImpossibleHistoryError:
                        probs = None
                else:
                    probs = causal.empirical_sequence_probs(reference, observations, actions)
                key = (a, o)
                if probs is None:
                    envelopes[key] = causal.BoundEnvelope(0.0, 1.0, conditioning=key,
                                                          supported=False)
                else:
                    envelopes[key] = causal.theorem1_bounds(probs[0], probs[1], conditioning=key)
                products[key] = causal.recovered_sequence_product(model, observations, actions)
        causal.write_bound_report(envelopes, products, args.out or sys.stdout)
    if args.action is None and not args.bounds:
        raise _UsageError("infer needs --action and/or --bounds")
    return 0


def _cmd_eval(args) -> int:
    env, _ = environments.make_environment(args.env, args.scenario)
    model = latent.load_model(args.model)
    mode = args.mode or ("exact" if env.horizon == 1 else "monte_carlo")
    out = {}
    if args.metric in ("js", "both"):
        rng = split_rng(args.master_seed, 0)
        out["js"] = evaluation.js_divergence(
            model, env, mode=mode, n_trajectories=args.n_trajectories, rng=rng)
    if args.metric in ("reward", "both"):
        if env.horizon == 1:
            action = planning.plan_bandit(model, env.reward)
            out["planned_action"] = action
            out["reward"] = evaluation.expected_reward(action, env, mode="exact")
        else:
            net = planning.train_actor_critic(
                model, env.reward,
                planning.DreamConfig(horizon=env.horizon, max_epochs=args.dream_epochs),
                split_rng(args.master_seed, 1),
            )
            out["reward"] = evaluation.expected_reward(
                planning.BeliefPolicy(model, net), env, mode="monte_carlo",
                n_trajectories=args.n_trajectories, rng=split_rng(args.master_seed, 2))
    print(json.dumps(out))
    return 0


def _cmd_experiment(args) -> int:
    fields = {f.name for f in dataclasses.fields(experiments.ExperimentConfig)}
    base = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            loaded = json.load(f)
        unknown = set(loaded) - fields
        if unknown:
            raise _UsageError(f"unknown config keys {sorted(unknown)}")
        base.update(loaded)
    overrides = {
        "environment": args.env,
        "scenario": args.scenario,
        "master_seed": args.master_seed,
        "out_dir": args.out,
    }
    if args.setting is not None:
        overrides["settings"] = tuple(args.setting)
    if args.n_obs is not None:
        overrides["n_obs_grid"] = tuple(args.n_obs)
    if args.n_int is not None:
        overrides["n_int_grid"] = tuple(args.n_int)
    if args.seeds is not None:
        overrides["n_seeds"] = args.seeds
    if args.latent_size is not None:
        overrides["latent_size"] = args.latent_size
    if args.method is not None:
        overrides["fit_method"] = {"em": "em", "grad": "gradient"}[args.method]
    if args.restarts is not None:
        overrides["n_restarts"] = args.restarts
    if args.workers is not None:
        overrides["workers"] = args.workers
    # environment-aware defaults first, then file, then flags
    merged = dataclasses.asdict(
        experiments.default_config(overrides.get("environment", base.get("environment", "door"))))
    merged.update(base)
    merged.update(overrides)
    merged = {k: v for k, v in merged.items() if k in fields}
    config = experiments.ExperimentConfig(**merged)
    rows = experiments.run_experiment(config)
    n_failed = sum(1 for r in rows if r.error)
    print(f"{len(rows)} result rows ({n_failed} failed) -> {config.out_dir}")
    return 0


def _cmd_report(args) -> int:
    rows = experiments.read_results(args.results)
    paths = experiments.emit_report(rows, args.out)
    print(json.dumps({k: v for k, v in paths.items()}))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "experiment": _cmd_experiment,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
