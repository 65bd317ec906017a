"""End-to-end sweep harness: scenario x setting x sample-size x seed.

Each grid cell samples one observational and one interventional dataset that
all three training settings share, so comparisons are paired.  Every random
draw descends from the master seed through fixed spawn keys
(cell, seed, purpose), making results byte-reproducible regardless of worker
count or completion order.  Wall times are recorded separately from
results.csv so the latter stays byte-identical across reruns.
"""

from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Sequence, Union

import numpy as np

from .environments import make_environment
from .evaluation import DegenerateSamplesError, expected_reward, js_divergence, welch_t_test
from .latent import FitConfig, fit
from .planning import BeliefPolicy, DreamConfig, plan_bandit, train_actor_critic
from .pomdp import RegimeDataset, sample_dataset
from .seeding import split_rng

SETTINGS = ("no_obs", "naive", "augmented")

# spawn-key purpose codes (documented in the README)
_PURPOSE_OBS_DATA = 0
_PURPOSE_INT_DATA = 1
_PURPOSE_FIT = 10      # + setting index
_PURPOSE_EVAL = 20     # + setting index
_PURPOSE_PLAN = 30     # + setting index

DOOR_GRID = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)
TIGER_GRID = DOOR_GRID + (1024, 2048, 4096, 8192)


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str = "door"
    scenario: str = "noisy_good"
    settings: tuple = SETTINGS
    n_obs_grid: tuple = (512,)
    n_int_grid: tuple = DOOR_GRID
    n_seeds: int = 10
    latent_size: int = 32
    fit_method: str = "em"
    n_restarts: int = 10
    max_epochs: int = 500
    eval_mode: str = "exact"
    n_trajectories: int = 100
    dream_epochs: int = 1000
    master_seed: int = 0
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.n_obs_grid or not self.n_int_grid:
            raise ValueError("sample-size grids must be nonempty")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        unknown = set(self.settings) - set(SETTINGS)
        if unknown:
            raise ValueError(f"unknown settings {sorted(unknown)}; known: {SETTINGS}")
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(self, "n_obs_grid", tuple(int(n) for n in self.n_obs_grid))
        object.__setattr__(self, "n_int_grid", tuple(int(n) for n in self.n_int_grid))


@dataclass(frozen=True)
class ResultRow:
    environment: str
    scenario: str
    setting: str
    n_obs: int
    n_int: int
    seed: int
    js: float
    reward: float
    wall_time_seconds: float
    error: str = ""


def default_config(environment: str, scenario: str = "noisy_good", **overrides) -> ExperimentConfig:
    """The per-environment defaults used in the reported sweeps."""
    base = dict(environment=environment, scenario=scenario)
    if environment == "tiger":
        base.update(n_int_grid=TIGER_GRID, eval_mode="monte_carlo")
    base.update(overrides)
    return ExperimentConfig(**base)


def build_training_set(obs: RegimeDataset, int_: RegimeDataset, setting: str) -> RegimeDataset:
    """no_obs: interventional only.  naive: observational episodes relabeled
    as interventional (confounding ignored).  augmented: the union, regimes
    kept."""
    if any(ep.regime != 0 for ep in obs):
        raise ValueError("observational dataset must contain only regime-0 episodes")
    if any(ep.regime != 1 for ep in int_):
        raise ValueError("interventional dataset must contain only regime-1 episodes")
    if setting == "no_obs":
        return int_
    if setting == "naive":
        return int_ + obs.relabeled(1)
    if setting == "augmented":
        return int_ + obs
    raise ValueError(f"unknown setting {setting!r}; known: {SETTINGS}")


def _cells(config: ExperimentConfig):
    return [
        (idx, n_obs, n_int)
        for idx, (n_obs, n_int) in enumerate(
            (o, i) for o in config.n_obs_grid for i in config.n_int_grid
        )
    ]


def _evaluate(config, pomdp, model, cell_idx, seed_idx, setting_idx):
    rng_js = split_rng(config.master_seed, cell_idx, seed_idx, _PURPOSE_EVAL + setting_idx, 0)
    js = js_divergence(
        model, pomdp, mode=config.eval_mode, n_trajectories=config.n_trajectories, rng=rng_js
    )
    if pomdp.horizon == 1:
        action = plan_bandit(model, pomdp.reward)
        reward = expected_reward(action, pomdp, mode="exact")
    else:
        rng_plan = split_rng(config.master_seed, cell_idx, seed_idx, _PURPOSE_PLAN + setting_idx)
        net = train_actor_critic(
            model, pomdp.reward,
            DreamConfig(horizon=pomdp.horizon, max_epochs=config.dream_epochs),
            rng_plan,
        )
        rng_rew = split_rng(config.master_seed, cell_idx, seed_idx, _PURPOSE_EVAL + setting_idx, 1)
        reward = expected_reward(
            BeliefPolicy(model, net), pomdp, mode="monte_carlo",
            n_trajectories=config.n_trajectories, rng=rng_rew,
        )
    return js, reward


def _run_cell_seed(config: ExperimentConfig, cell_idx: int, n_obs: int, n_int: int,
                   seed_idx: int) -> list:
    pomdp, scenario = make_environment(config.environment, config.scenario)
    obs_data = sample_dataset(
        pomdp, scenario.privileged_policy, 0, n_obs,
        config.master_seed, key=(cell_idx, seed_idx, _PURPOSE_OBS_DATA),
    )
    int_data = sample_dataset(
        pomdp, scenario.standard_policy, 1, n_int,
        config.master_seed, key=(cell_idx, seed_idx, _PURPOSE_INT_DATA),
    )
    rows = []
    for setting in config.settings:
        setting_idx = SETTINGS.index(setting)
        start = time.perf_counter()
        try:
            training = build_training_set(obs_data, int_data, setting)
            fit_cfg = FitConfig(
                method=config.fit_method,
                n_restarts=config.n_restarts,
                max_epochs=config.max_epochs,
                latent_size=config.latent_size,
            )
            rng_fit = split_rng(config.master_seed, cell_idx, seed_idx, _PURPOSE_FIT + setting_idx)
            model = fit(training, fit_cfg, rng=rng_fit)
            js, reward = _evaluate(config, pomdp, model, cell_idx, seed_idx, setting_idx)
            error = ""
        except Exception as exc:  # a cell failure must not abort the sweep
            js, reward, error = float("nan"), float("nan"), f"{type(exc).__name__}: {exc}"
        rows.append(
            ResultRow(
                environment=config.environment,
                scenario=config.scenario,
                setting=setting,
                n_obs=n_obs,
                n_int=n_int,
                seed=seed_idx,
                js=js,
                reward=reward,
                wall_time_seconds=time.perf_counter() - start,
                error=error,
            )
        )
    return rows


def run_experiment(config: ExperimentConfig) -> list:
    """Run the whole sweep; returns ResultRows in deterministic cell order.

    With workers > 1, grid tasks execute in a process pool; rows are merged
    in task order, independent of completion order.
    """
    tasks = [
        (config, cell_idx, n_obs, n_int, seed_idx)
        for cell_idx, n_obs, n_int in _cells(config)
        for seed_idx in range(config.n_seeds)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    if config.out_dir is not None:
        emit_report(rows, config.out_dir)
    return rows


def _run_task(task):
    config, cell_idx, n_obs, n_int, seed_idx = task
    return _run_cell_seed(config, cell_idx, n_obs, n_int, seed_idx)


# ---------------------------------------------------------------------------
# reporting


def _cell_key(row: ResultRow):
    return (row.environment, row.scenario, row.n_obs, row.n_int)


def _setting_order(setting: str) -> int:
    return SETTINGS.index(setting) if setting in SETTINGS else len(SETTINGS)


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return repr(float(x)) if isinstance(x, float) else str(x)


def _mean_se(values):
    vals = [v for v in values if not math.isnan(v)]
    if not vals:
        return float("nan"), float("nan")
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return mean, se


def _welch_cell(a, b):
    """p-value against a baseline, or None (missing) / 'degenerate'."""
    a = [v for v in a if not math.isnan(v)]
    b = [v for v in b if not math.isnan(v)]
    if len(a) < 2 or len(b) < 2:
        return None
    try:
        _, p = welch_t_test(a, b)
    except DegenerateSamplesError:
        return "degenerate"
    return p


def emit_report(rows: Sequence[ResultRow], out_dir: str) -> dict:
    """Write results.csv, timings.csv, summary.csv and plot_long.csv.

    results.csv carries one row per (cell, setting, seed) and is byte-stable
    for a fixed master seed; timing goes to its own file.  summary.csv
    aggregates mean and standard error per cell/setting and reports Welch
    p-values of augmented against each baseline (JS metric; the long-format
    file carries both metrics).  Significance flags fire exactly at p < 0.05.
    """
    if not rows:
        raise ValueError("no rows to report")
    os.makedirs(out_dir, exist_ok=True)
    rows = sorted(
        rows, key=lambda r: (_cell_key(r), _setting_order(r.setting), r.seed)
    )
    paths = {name: os.path.join(out_dir, f"{name}.csv")
             for name in ("results", "timings", "summary", "plot_long")}

    with open(paths["results"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["environment", "scenario", "setting", "n_obs", "n_int", "seed",
                    "js", "reward", "error"])
        for r in rows:
            w.writerow([r.environment, r.scenario, r.setting, r.n_obs, r.n_int, r.seed,
                        _fmt(r.js), _fmt(r.reward), r.error])

    with open(paths["timings"], "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["environment", "scenario", "setting", "n_obs", "n_int", "seed",
                    "wall_time_seconds"])
        for r in rows:
            w.writerow([r.environment, r.scenario, r.setting, r.n_obs, r.n_int, r.seed,
                        _fmt(r.wall_time_seconds)])

    # group by cell, then by setting
    by_cell: dict = {}
    for r in rows:
        by_cell.setdefault(_cell_key(r), {}).setdefault(r.setting, []).append(r)

    def p_columns(cell_rows, metric):
        """Welch p of augmented vs each baseline for this cell and metric."""
        out = {}
        for baseline in ("no_obs", "naive"):
            if "augmented" not in cell_rows or baseline not in cell_rows:
                out[baseline] = None
                continue
            aug = [getattr(r, metric) for r in cell_rows["augmented"]]
            base = [getattr(r, metric) for r in cell_rows[baseline]]
            out[baseline] = _welch_cell(aug, base)
        return out

    def p_fmt(p):
        return "" if p is None else (p if isinstance(p, str) else _fmt(p))

    def sig_fmt(p):
        if p is None:
            return ""
        if isinstance(p, str):
            return p  # "degenerate"
        return "yes" if p < 0.05 else "no"

    with open(paths["summary"], "w", encoding="utf-8", newline="") as f, \
            open(paths["plot_long"], "w", encoding="utf-8", newline="") as g:
        w = csv.writer(f)
        w.writerow(["environment", "scenario", "setting", "n_obs", "n_int", "n",
                    "js_mean", "js_se", "reward_mean", "reward_se",
                    "p_js_vs_no_obs", "p_js_vs_naive",
                    "sig_js_vs_no_obs", "sig_js_vs_naive"])
        wl = csv.writer(g)
        wl.writerow(["environment", "scenario", "setting", "n_obs", "n_int", "metric",
                     "mean", "se", "p_vs_no_obs", "p_vs_naive",
                     "sig_vs_no_obs", "sig_vs_naive"])
        for key in sorted(by_cell):
            cell_rows = by_cell[key]
            env, scen, n_obs, n_int = key
            p_js = p_columns(cell_rows, "js")
            p_rew = p_columns(cell_rows, "reward")
            for setting in sorted(cell_rows, key=_setting_order):
                srows = cell_rows[setting]
                js_mean, js_se = _mean_se([r.js for r in srows])
                rew_mean, rew_se = _mean_se([r.reward for r in srows])
                w.writerow([env, scen, setting, n_obs, n_int, len(srows),
                            _fmt(js_mean), _fmt(js_se), _fmt(rew_mean), _fmt(rew_se),
                            p_fmt(p_js["no_obs"]), p_fmt(p_js["naive"]),
                            sig_fmt(p_js["no_obs"]), sig_fmt(p_js["naive"])])
                for metric, mean, se, pcols in (
                    ("js", js_mean, js_se, p_js),
                    ("reward", rew_mean, rew_se, p_rew),
                ):
                    wl.writerow([env, scen, setting, n_obs, n_int, metric,
                                 _fmt(mean), _fmt(se),
                                 p_fmt(pcols["no_obs"]), p_fmt(pcols["naive"]),
                                 sig_fmt(pcols["no_obs"]), sig_fmt(pcols["naive"])])
    return paths


def read_results(source: Union[str, IO[str]]) -> list:
    """Load a results.csv back into ResultRows (timings are not restored)."""
    close = False
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        f = open(source, "r", encoding="utf-8", newline="")
        close = True
    else:
        f = source
    try:
        rows = []
        for rec in csv.DictReader(f):
            rows.append(
                ResultRow(
                    environment=rec["environment"],
                    scenario=rec["scenario"],
                    setting=rec["setting"],
                    n_obs=int(rec["n_obs"]),
                    n_int=int(rec["n_int"]),
                    seed=int(rec["seed"]),
                    js=float(rec["js"]),
                    reward=float(rec["reward"]),
                    wall_time_seconds=float("nan"),
                    error=rec.get("error", ""),
                )
            )
        return rows
    finally:
        if close:
            f.close()
