"""The two experiment metrics and the significance test.

Model quality is the expected Jensen-Shannon divergence (natural log)
between recovered and true next-observation distributions along trajectories
drawn under a uniformly random policy; task quality is the expected true-
environment return of the planned policy.  Both have an exact enumeration
mode for small problems and a Monte-Carlo mode for the rest.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .causal import recovered_transition
from .latent import AugmentedModel
from .pomdp import (
    ImpossibleHistoryError,
    Policy,
    TabularPOMDP,
    _draw,
    uniform_policy,
)

_FLOOR = 1e-12
_EXACT_CAP = 200_000  # max enumerated trajectories in exact mode


class DegenerateSamplesError(ValueError):
    """Samples too small or with zero variance for a Welch test."""


# ---------------------------------------------------------------------------
# policies as sequential drivers: initial_state(o0) / step_state / action_probs


class _ConstantDriver:
    def __init__(self, action: int, n_actions: int):
        self.row = np.zeros(n_actions)
        self.row[action] = 1.0

    def initial_state(self, obs):
        return None

    def step_state(self, state, action, obs):
        return None

    def action_probs(self, state):
        return self.row


class _ReactiveDriver:
    def __init__(self, policy: Policy):
        if policy.kind != "standard":
            raise ValueError("only observation-conditioned policies can drive evaluation")
        self.policy = policy

    def initial_state(self, obs):
        return int(obs)

    def step_state(self, state, action, obs):
        return int(obs)

    def action_probs(self, state):
        return self.policy.probs[state]


def _as_driver(policy, n_actions: int):
    if isinstance(policy, (int, np.integer)):
        return _ConstantDriver(int(policy), n_actions)
    if isinstance(policy, Policy):
        return _ReactiveDriver(policy)
    if all(hasattr(policy, m) for m in ("initial_state", "step_state", "action_probs")):
        return policy
    raise TypeError(f"unsupported policy type {type(policy)!r}")


# ---------------------------------------------------------------------------
# expected reward


def expected_reward(
    policy,
    pomdp: TabularPOMDP,
    mode: str = "exact",
    n_trajectories: int = 100,
    rng: np.random.Generator | None = None,
) -> float:
    """E[sum_t r(o_t)] on the true environment under the given policy.

    Exact mode propagates the hidden-state marginal, which is valid for
    constant or observation-reactive policies (the action may depend on at
    most the current observation).  History-dependent policies need
    monte_carlo mode.
    """
    if mode == "exact":
        return _expected_reward_exact(policy, pomdp)
    if mode != "monte_carlo":
        raise ValueError(f"mode must be 'exact' or 'monte_carlo', got {mode!r}")
    if rng is None:
        raise ValueError("monte_carlo mode needs an rng")
    driver = _as_driver(policy, pomdp.n_actions)
    total = 0.0
    for _ in range(n_trajectories):
        state = _draw(rng, pomdp.init)
        o = _draw(rng, pomdp.obs[state])
        ret = pomdp.reward[o]
        pstate = driver.initial_state(o)
        for _ in range(pomdp.horizon):
            a = _draw(rng, driver.action_probs(pstate))
            state = _draw(rng, pomdp.trans[state, a])
            o = _draw(rng, pomdp.obs[state])
            ret += pomdp.reward[o]
            pstate = driver.step_state(pstate, a, o)
        total += ret
    return total / n_trajectories


def _expected_reward_exact(policy, pomdp: TabularPOMDP) -> float:
    if isinstance(policy, (int, np.integer)):
        act_given_obs = np.zeros((pomdp.n_obs, pomdp.n_actions))
        act_given_obs[:, int(policy)] = 1.0
    elif isinstance(policy, Policy) and policy.kind == "standard":
        act_given_obs = policy.probs
    else:
        raise ValueError(
            "exact mode supports constant or observation-reactive policies only; "
            "use monte_carlo for history-dependent policies"
        )
    state_marginal = pomdp.init.copy()
    total = float(state_marginal @ pomdp.obs @ pomdp.reward)
    act_given_state = pomdp.obs @ act_given_obs  # (S, A)
    for _ in range(pomdp.horizon):
        state_marginal = np.einsum("s,sa,sat->t", state_marginal, act_given_state, pomdp.trans)
        total += float(state_marginal @ pomdp.obs @ pomdp.reward)
    return total


# ---------------------------------------------------------------------------
# Jensen-Shannon divergence between recovered and true transition models


class _TrueFilter:
    """Incremental interventional filter on the true tables; goes dead (and
    predicts all-zeros) once the history is impossible."""

    def __init__(self, pomdp: TabularPOMDP):
        self.pomdp = pomdp

    def initial(self, obs: int):
        belief = self.pomdp.init * self.pomdp.obs[:, obs]
        total = belief.sum()
        return belief / total if total > 0.0 else None

    def predict(self, belief, action: int) -> np.ndarray:
        if belief is None:
            return np.zeros(self.pomdp.n_obs)
        return (belief @ self.pomdp.trans[:, action, :]) @ self.pomdp.obs

    def advance(self, belief, action: int, obs: int):
        if belief is None:
            return None
        belief = (belief @ self.pomdp.trans[:, action, :]) * self.pomdp.obs[:, obs]
        total = belief.sum()
        return belief / total if total > 0.0 else None

    def initial_marginal(self) -> np.ndarray:
        return self.pomdp.init @ self.pomdp.obs


class _ModelFilter:
    def __init__(self, model: AugmentedModel):
        self.model = model

    def initial(self, obs: int):
        belief = self.model.latent_prior * self.model.emission[:, obs]
        total = belief.sum()
        return belief / total if total > 0.0 else None

    def predict(self, belief, action: int) -> np.ndarray:
        if belief is None:
            return np.zeros(self.model.n_obs)
        return (belief @ self.model.latent_trans[:, action, :]) @ self.model.emission

    def advance(self, belief, action: int, obs: int):
        if belief is None:
            return None
        belief = (belief @ self.model.latent_trans[:, action, :]) * self.model.emission[:, obs]
        total = belief.sum()
        return belief / total if total > 0.0 else None

    def initial_marginal(self) -> np.ndarray:
        return self.model.latent_prior @ self.model.emission


def _log_ratio(num: float, mix: float) -> float:
    return math.log(max(num, _FLOOR)) - math.log(max(mix, _FLOOR))


def js_divergence(
    model: AugmentedModel,
    pomdp: TabularPOMDP,
    mode: str = "exact",
    n_trajectories: int = 100,
    rng: np.random.Generator | None = None,
    policy: Policy | None = None,
) -> float:
    """Expected JS divergence (nats) between q-hat(o_{t+1}|h_t,a_t,i=1) and
    p(o_{t+1}|h_t,a_t,i=1), giving every trajectory its o_0 term plus one
    term per transition, under a uniformly random action policy by default.
    """
    if pomdp.n_obs != model.n_obs or pomdp.n_actions != model.n_actions:
        raise ValueError("model and environment alphabets disagree")
    if policy is None:
        policy = uniform_policy(pomdp.n_obs, pomdp.n_actions)
    if policy.kind != "standard":
        raise ValueError("the JS trajectory policy must be observation-conditioned")
    p_side = _TrueFilter(pomdp)
    q_side = _ModelFilter(model)
    if mode == "exact":
        n_leaves = (pomdp.n_obs * pomdp.n_actions) ** pomdp.horizon * pomdp.n_obs
        if n_leaves > _EXACT_CAP:
            raise ValueError(
                f"exact mode would enumerate {n_leaves} trajectories; use monte_carlo"
            )
        return _js_exact(p_side, q_side, policy, pomdp.horizon)
    if mode != "monte_carlo":
        raise ValueError(f"mode must be 'exact' or 'monte_carlo', got {mode!r}")
    if rng is None:
        raise ValueError("monte_carlo mode needs an rng")
    half_p = _js_monte_carlo_side(p_side, q_side, p_side, policy, pomdp.horizon,
                                  n_trajectories, rng, p_is_num=True)
    half_q = _js_monte_carlo_side(p_side, q_side, q_side, policy, pomdp.horizon,
                                  n_trajectories, rng, p_is_num=False)
    return 0.5 * half_p + 0.5 * half_q


def _js_exact(p_side, q_side, policy, horizon) -> float:
    p0 = p_side.initial_marginal()
    q0 = q_side.initial_marginal()
    m0 = 0.5 * (p0 + q0)
    total = 0.0
    # DFS over (o_0, a_0, ..., o_H), carrying both filters and both brackets
    stack = []
    for o0 in range(len(p0)):
        if m0[o0] <= 0.0:
            continue
        stack.append((
            0, o0,
            float(p0[o0]), float(q0[o0]),
            p_side.initial(o0) if p0[o0] > 0 else None,
            q_side.initial(o0) if q0[o0] > 0 else None,
            _log_ratio(p0[o0], m0[o0]) if p0[o0] > 0 else 0.0,
            _log_ratio(q0[o0], m0[o0]) if q0[o0] > 0 else 0.0,
        ))
    while stack:
        t, obs, p_prob, q_prob, p_belief, q_belief, p_bracket, q_bracket = stack.pop()
        if p_prob <= 0.0 and q_prob <= 0.0:
            continue
        if t == horizon:
            total += 0.5 * p_prob * p_bracket + 0.5 * q_prob * q_bracket
            continue
        act_row = policy.probs[obs]
        for a in range(len(act_row)):
            pi_a = float(act_row[a])
            if pi_a <= 0.0:
                continue
            p_next = p_side.predict(p_belief, a)
            q_next = q_side.predict(q_belief, a)
            mix = 0.5 * (p_next + q_next)
            for o in range(len(p_next)):
                if mix[o] <= 0.0:
                    continue
                stack.append((
                    t + 1, o,
                    p_prob * pi_a * float(p_next[o]),
                    q_prob * pi_a * float(q_next[o]),
                    p_side.advance(p_belief, a, o) if p_next[o] > 0 else None,
                    q_side.advance(q_belief, a, o) if q_next[o] > 0 else None,
                    p_bracket + (_log_ratio(p_next[o], mix[o]) if p_next[o] > 0 else 0.0),
                    q_bracket + (_log_ratio(q_next[o], mix[o]) if q_next[o] > 0 else 0.0),
                ))
    return total


def _js_monte_carlo_side(p_side, q_side, sampler, policy, horizon,
                         n_trajectories, rng, p_is_num: bool) -> float:
    """Average bracket of one expectation side, sampling from ``sampler``."""
    total = 0.0
    p0 = p_side.initial_marginal()
    q0 = q_side.initial_marginal()
    m0 = 0.5 * (p0 + q0)
    for _ in range(n_trajectories):
        o = _draw(rng, sampler.initial_marginal())
        num0 = p0[o] if p_is_num else q0[o]
        bracket = _log_ratio(float(num0), float(m0[o]))
        p_belief = p_side.initial(o)
        q_belief = q_side.initial(o)
        s_belief = p_belief if sampler is p_side else q_belief
        for _ in range(horizon):
            a = _draw(rng, policy.probs[o])
            p_next = p_side.predict(p_belief, a)
            q_next = q_side.predict(q_belief, a)
            o = _draw(rng, sampler.predict(s_belief, a))
            mix = 0.5 * (float(p_next[o]) + float(q_next[o]))
            num = float(p_next[o]) if p_is_num else float(q_next[o])
            bracket += _log_ratio(num, mix)
            p_belief = p_side.advance(p_belief, a, o)
            q_belief = q_side.advance(q_belief, a, o)
            s_belief = p_belief if sampler is p_side else q_belief
        total += bracket
    return total / n_trajectories


# ---------------------------------------------------------------------------
# Welch's t-test


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]):
    """Two-sided Welch's t-test.

    Returns (t, p) with Welch-Satterthwaite degrees of freedom and the
    p-value from the regularized incomplete beta function.
    """
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise DegenerateSamplesError("both samples need at least 2 points")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va <= 0.0 or vb <= 0.0:
        raise DegenerateSamplesError("both samples need positive variance")
    se2 = va / a.size + vb / b.size
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2**2 / ((va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t))) if t != 0.0 else 1.0
    return float(t), p
