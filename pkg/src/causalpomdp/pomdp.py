"""Tabular POMDPs, regime-tagged episodes, and trajectory generation.

An environment is a set of discrete probability tables (initial state,
state transition, observation emission) plus a reward map over observations
and a fixed horizon.  Episodes carry a regime indicator: 1 means the acting
policy saw only the observable history (interventional data), 0 means it may
have used the hidden state (observational, potentially confounded data).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence, Union

import numpy as np

ROW_ATOL = 1e-12


class PomdpValidationError(ValueError):
    """A probability table violates a shape or normalization invariant."""


class DatasetFormatError(ValueError):
    """A dataset record is malformed; message carries the line number."""


class ImpossibleHistoryError(ValueError):
    """A conditioning history has zero probability under the model."""


def _frozen(x, dtype=float) -> np.ndarray:
    a = np.array(x, dtype=dtype)
    a.setflags(write=False)
    return a


def _check_rows(name: str, table: np.ndarray, atol: float = ROW_ATOL) -> None:
    """Raise on the first negative/oversized entry or non-normalized row."""
    flat = np.asarray(table, dtype=float).reshape(-1, table.shape[-1])
    for i, row in enumerate(flat):
        j = np.argmin(row)
        if row[j] < 0.0:
            raise PomdpValidationError(f"{name}: negative entry {row[j]!r} at row {i}, col {j}")
        j = np.argmax(row)
        if row[j] > 1.0 + atol:
            raise PomdpValidationError(f"{name}: entry {row[j]!r} > 1 at row {i}, col {j}")
        s = row.sum()
        if abs(s - 1.0) > atol:
            raise PomdpValidationError(f"{name}: row {i} sums to {s!r}, expected 1")


@dataclass(frozen=True)
class TabularPOMDP:
    """Discrete POMDP: alphabets are 0-based integer ranges.

    init    -- (n_states,) initial state distribution
    trans   -- (n_states, n_actions, n_states) state transition table
    obs     -- (n_states, n_obs) observation emission table
    reward  -- (n_obs,) reward of each observation symbol
    horizon -- number of actions per episode; episodes hold horizon+1 observations
    """

    init: np.ndarray
    trans: np.ndarray
    obs: np.ndarray
    reward: np.ndarray
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "init", _frozen(self.init))
        object.__setattr__(self, "trans", _frozen(self.trans))
        object.__setattr__(self, "obs", _frozen(self.obs))
        object.__setattr__(self, "reward", _frozen(self.reward))

    @property
    def n_states(self) -> int:
        return self.init.shape[0]

    @property
    def n_actions(self) -> int:
        return self.trans.shape[1]

    @property
    def n_obs(self) -> int:
        return self.obs.shape[1]


def validate_pomdp(spec: TabularPOMDP) -> TabularPOMDP:
    """Check all invariants; return the spec unchanged if they hold."""
    s, a, o = spec.init.shape[0], spec.trans.shape[1], spec.obs.shape[1]
    if spec.init.shape != (s,):
        raise PomdpValidationError(f"init: expected shape ({s},), got {spec.init.shape}")
    if spec.trans.shape != (s, a, s):
        raise PomdpValidationError(f"trans: expected shape ({s}, {a}, {s}), got {spec.trans.shape}")
    if spec.obs.shape != (s, o):
        raise PomdpValidationError(f"obs: expected shape ({s}, {o}), got {spec.obs.shape}")
    if spec.reward.shape != (o,):
        raise PomdpValidationError(
            f"reward: must be total on the observation alphabet, expected shape ({o},), "
            f"got {spec.reward.shape}"
        )
    if spec.horizon < 1:
        raise PomdpValidationError(f"horizon must be >= 1, got {spec.horizon}")
    _check_rows("init", spec.init[None, :])
    _check_rows("trans", spec.trans)
    _check_rows("obs", spec.obs)
    return spec


@dataclass(frozen=True)
class Policy:
    """Action-probability table.

    kind "standard" rows are indexed by the current observation (the policy
    sees only the observable history); kind "privileged" rows are indexed by
    the hidden state.  ``exploratory`` declares strict positivity, required
    wherever every action must remain reachable.
    """

    kind: str
    probs: np.ndarray
    exploratory: bool = False

    def __post_init__(self):
        if self.kind not in ("standard", "privileged"):
            raise PomdpValidationError(f"unknown policy kind {self.kind!r}")
        object.__setattr__(self, "probs", _frozen(self.probs))
        _check_rows(f"{self.kind} policy", self.probs)
        if self.exploratory and np.any(self.probs <= 0.0):
            raise PomdpValidationError("policy declared exploratory but has a zero entry")

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


def uniform_policy(n_rows: int, n_actions: int, kind: str = "standard") -> Policy:
    probs = np.full((n_rows, n_actions), 1.0 / n_actions)
    return Policy(kind=kind, probs=probs, exploratory=True)


@dataclass(frozen=True)
class Episode:
    """One trajectory (o_0, a_0, ..., o_T) with its regime tag.

    ``weight`` defaults to 1 for sampled data; exact-distribution fitting
    stores the trajectory probability there instead.
    """

    observations: tuple
    actions: tuple
    regime: int
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(int(o) for o in self.observations))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.actions) != len(self.observations) - 1:
            raise PomdpValidationError(
                f"episode has {len(self.observations)} observations and "
                f"{len(self.actions)} actions; expected |actions| = |observations| - 1"
            )
        if self.regime not in (0, 1):
            raise PomdpValidationError(f"regime must be 0 or 1, got {self.regime}")
        if not self.weight >= 0.0:
            raise PomdpValidationError(f"weight must be >= 0, got {self.weight}")

    @property
    def n_steps(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class RegimeDataset:
    """An ordered collection of episodes, possibly mixing both regimes."""

    episodes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "episodes", tuple(self.episodes))

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self.episodes)

    def __add__(self, other: "RegimeDataset") -> "RegimeDataset":
        return RegimeDataset(self.episodes + tuple(other))

    def regimes(self) -> set:
        return {ep.regime for ep in self.episodes}

    def relabeled(self, regime: int) -> "RegimeDataset":
        return RegimeDataset(
            tuple(
                Episode(ep.observations, ep.actions, regime, ep.weight)
                for ep in self.episodes
            )
        )

    def deduplicated(self) -> "RegimeDataset":
        """Merge identical (observations, actions, regime) episodes, summing weights.

        The likelihood objective is linear in weights, so this is lossless for
        fitting and turns e.g. thousands of bandit episodes into a handful.
        """
        merged: dict = {}
        for ep in self.episodes:
            key = (ep.observations, ep.actions, ep.regime)
            merged[key] = merged.get(key, 0.0) + ep.weight
        return RegimeDataset(
            tuple(Episode(obs, acts, reg, w) for (obs, acts, reg), w in merged.items())
        )

    def total_weight(self) -> float:
        return float(sum(ep.weight for ep in self.episodes))


def _draw(rng: np.random.Generator, probs: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))


def sample_episode(
    pomdp: TabularPOMDP, policy: Policy, regime: int, rng: np.random.Generator
) -> Episode:
    """Ancestral sample of one episode under the given regime.

    Regime 1 draws actions from the observable side only (standard policy on
    the current observation); regime 0 may use a privileged state-conditioned
    policy, which is what creates confounding in the data.
    """
    if regime not in (0, 1):
        raise PomdpValidationError(f"regime must be 0 or 1, got {regime}")
    if policy.kind == "privileged" and regime != 0:
        raise PomdpValidationError("privileged policy is only allowed in the observational regime")
    state = _draw(rng, pomdp.init)
    obs = [_draw(rng, pomdp.obs[state])]
    actions = []
    for _ in range(pomdp.horizon):
        if policy.kind == "privileged":
            row = policy.probs[state]
        else:
            row = policy.probs[obs[-1]]
        a = _draw(rng, row)
        actions.append(a)
        state = _draw(rng, pomdp.trans[state, a])
        obs.append(_draw(rng, pomdp.obs[state]))
    return Episode(tuple(obs), tuple(actions), regime)


def sample_dataset(
    pomdp: TabularPOMDP,
    policy: Policy,
    regime: int,
    n_episodes: int,
    seed: int,
    key: tuple = (),
) -> RegimeDataset:
    """n_episodes independent draws, split deterministically per episode index.

    ``key`` prefixes the per-episode spawn key, so a sweep can carve
    non-overlapping streams per (cell, seed, purpose) out of one master seed.
    """
    from .seeding import split_rng

    return RegimeDataset(
        tuple(
            sample_episode(pomdp, policy, regime, split_rng(seed, *key, i))
            for i in range(n_episodes)
        )
    )


def split_history(history: Sequence[int]) -> tuple:
    """Split a flat alternating (o_0, a_0, o_1, ..., o_t) sequence."""
    history = [int(x) for x in history]
    if len(history) % 2 == 0 and len(history) > 0:
        raise ValueError(
            f"history must alternate o, a, ..., o (odd length or empty), got length {len(history)}"
        )
    return history[0::2], history[1::2]


def state_filter(pomdp: TabularPOMDP, history: Sequence[int]) -> np.ndarray:
    """Exact posterior over hidden states given a history, on the true tables.

    The empty history returns the initial distribution (no conditioning).
    """
    obs, acts = split_history(history)
    belief = pomdp.init.copy()
    if not obs:
        return belief
    belief = belief * pomdp.obs[:, obs[0]]
    total = belief.sum()
    if total <= 0.0:
        raise ImpossibleHistoryError(f"history impossible at step 0 (observation {obs[0]})")
    belief /= total
    for t, (a, o) in enumerate(zip(acts, obs[1:])):
        belief = (belief @ pomdp.trans[:, a, :]) * pomdp.obs[:, o]
        total = belief.sum()
        if total <= 0.0:
            raise ImpossibleHistoryError(f"history impossible at step {t + 1} (observation {o})")
        belief /= total
    return belief


def true_transition(pomdp: TabularPOMDP, history: Sequence[int], action: int) -> np.ndarray:
    """Exact next-observation distribution p(o_{t+1} | h_t, a_t, i=1).

    Ground-truth oracle for evaluating learned models: Bayesian filtering on
    the true state space, independent of any learned-model inference path.
    """
    belief = state_filter(pomdp, history)
    next_state = belief @ pomdp.trans[:, action, :]
    return next_state @ pomdp.obs


def write_dataset(episodes: RegimeDataset, sink: Union[str, IO[str]]) -> None:
    """One JSON object per line: {"regime", "obs", "actions"[, "weight"]}."""
    close = False
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        f = open(sink, "w", encoding="utf-8")
        close = True
    else:
        f = sink
    try:
        for ep in episodes:
            rec = {"regime": ep.regime, "obs": list(ep.observations), "actions": list(ep.actions)}
            if ep.weight != 1.0:
                rec["weight"] = ep.weight
            f.write(json.dumps(rec) + "\n")
    finally:
        if close:
            f.close()


def read_dataset(
    source: Union[str, IO[str]],
    n_obs: int | None = None,
    n_actions: int | None = None,
) -> RegimeDataset:
    """Parse a line-oriented dataset; alphabet sizes enable range checks."""
    close = False
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        f = open(source, "r", encoding="utf-8")
        close = True
    else:
        f = source
    episodes = []
    try:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            for key in ("regime", "obs", "actions"):
                if key not in rec:
                    raise DatasetFormatError(f"line {lineno}: missing field {key!r}")
            obs = rec["obs"]
            acts = rec["actions"]
            if n_obs is not None and any(not 0 <= o < n_obs for o in obs):
                raise DatasetFormatError(f"line {lineno}: observation symbol out of range [0, {n_obs})")
            if n_actions is not None and any(not 0 <= a < n_actions for a in acts):
                raise DatasetFormatError(f"line {lineno}: action symbol out of range [0, {n_actions})")
            if any(o < 0 for o in obs) or any(a < 0 for a in acts):
                raise DatasetFormatError(f"line {lineno}: negative symbol index")
            try:
                episodes.append(
                    Episode(tuple(obs), tuple(acts), rec["regime"], float(rec.get("weight", 1.0)))
                )
            except PomdpValidationError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from exc
    finally:
        if close:
            f.close()
    return RegimeDataset(tuple(episodes))
