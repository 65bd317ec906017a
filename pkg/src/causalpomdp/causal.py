"""Recovering interventional queries from a fitted model, plus causal bounds.

The interventional transition estimate comes from a forward recursion over
the latent chain that never touches the observational policy table: beliefs
are filtered as if actions were externally forced.  The same model also
answers observational-regime queries (policy factor included), which is what
the product-form bound envelopes are built from.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Sequence, Union

import numpy as np

from .latent import AugmentedModel
from .pomdp import ImpossibleHistoryError, RegimeDataset, split_history


@dataclass(frozen=True)
class BeliefVector:
    """Filtered posterior over latent symbols after observing a history."""

    probs: np.ndarray
    step: int

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class BoundEnvelope:
    """Interval guaranteed to contain the product of recovered interventional
    transition probabilities for a conditioning cell.  ``supported`` is False
    when the cell has zero observational probability, which makes the bounds
    vacuous [0, 1]."""

    lower: float
    upper: float
    conditioning: tuple = ()
    supported: bool = True

    def __post_init__(self):
        if not (0.0 <= self.lower <= self.upper <= 1.0 + 1e-12):
            raise ValueError(
                f"bounds must satisfy 0 <= lower <= upper <= 1, got [{self.lower}, {self.upper}]"
            )

    def contains(self, value: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= value <= self.upper + slack


def filter_belief(model: AugmentedModel, history: Sequence[int]) -> BeliefVector:
    """Interventional-regime latent posterior q(z_t | h_t, i=1).

    Pure forward recursion: prior times emission, then per step a transition
    mixed by the recorded action and an emission update, renormalizing each
    time.  Actions contribute no policy factor here.
    """
    obs, acts = split_history(history)
    if not obs:
        raise ValueError("history must contain at least the first observation")
    belief = model.latent_prior * model.emission[:, obs[0]]
    total = belief.sum()
    if total <= 0.0:
        raise ImpossibleHistoryError(f"history impossible under model at step 0 (observation {obs[0]})")
    belief = belief / total
    for t, (a, o) in enumerate(zip(acts, obs[1:])):
        belief = (belief @ model.latent_trans[:, a, :]) * model.emission[:, o]
        total = belief.sum()
        if total <= 0.0:
            raise ImpossibleHistoryError(
                f"history impossible under model at step {t + 1} (observation {o})"
            )
        belief = belief / total
    return BeliefVector(belief, step=len(acts))


def recovered_transition(
    model: AugmentedModel, history: Sequence[int], action: int
) -> np.ndarray:
    """Estimated causal query q(o_{t+1} | h_t, do(a_t)) = q(o_{t+1}|h_t,a_t,i=1).

    The empty history conditions on nothing: the belief is the latent prior.
    """
    obs, _ = split_history(history)
    if not obs:
        belief = model.latent_prior
    else:
        belief = filter_belief(model, history).probs
    return (belief @ model.latent_trans[:, action, :]) @ model.emission


def deconfound_bandit(prior: np.ndarray, conditional: np.ndarray) -> np.ndarray:
    """Backdoor adjustment for a one-step bandit.

    prior       -- (C,) marginal of the confounder
    conditional -- (C, A, O) outcome table given confounder and action
    returns     -- (A, O) interventional outcome distribution per action
    """
    prior = np.asarray(prior, dtype=float)
    conditional = np.asarray(conditional, dtype=float)
    if prior.ndim != 1 or conditional.ndim != 3 or conditional.shape[0] != prior.shape[0]:
        raise ValueError("expected prior (C,) and conditional (C, A, O)")
    if abs(prior.sum() - 1.0) > 1e-9 or np.any(np.abs(conditional.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("prior and conditional rows must be normalized")
    return np.einsum("c,cao->ao", prior, conditional)


def theorem1_bounds(
    obs_policy_probs: Sequence[float],
    obs_transition_probs: Sequence[float],
    conditioning: tuple = (),
) -> BoundEnvelope:
    """Envelope for the product of recovered interventional transitions.

    Given per-step observational quantities p(a_t|h_t, i=0) and
    p(o_{t+1}|h_t, a_t, i=0) for t = 0..T-1:

        lower = prod_t p(a_t|h_t,0) * p(o_{t+1}|h_t,a_t,0)
        upper = lower + 1 - prod_t p(a_t|h_t,0)

    A zero action-probability anywhere removes observational support and the
    envelope degenerates to the vacuous [0, 1], flagged via ``supported``.
    """
    pol = np.asarray(obs_policy_probs, dtype=float)
    trans = np.asarray(obs_transition_probs, dtype=float)
    if pol.shape != trans.shape or pol.ndim != 1 or pol.size < 1:
        raise ValueError("need equal-length nonempty probability sequences (T >= 1)")
    if np.any(pol < 0) or np.any(pol > 1) or np.any(trans < 0) or np.any(trans > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    pol_product = float(np.prod(pol))
    if pol_product <= 0.0:
        return BoundEnvelope(0.0, 1.0, conditioning=tuple(conditioning), supported=False)
    lower = float(np.prod(pol * trans))
    upper = min(lower + 1.0 - pol_product, 1.0)
    return BoundEnvelope(lower, upper, conditioning=tuple(conditioning), supported=True)


# ---------------------------------------------------------------------------
# per-cell probability extraction used to instantiate the bounds


def observational_sequence_probs(model: AugmentedModel, observations, actions):
    """Per-step q(a_t|h_t, i=0) and q(o_{t+1}|h_t, a_t, i=0) along a trajectory.

    Filtering here includes the observational policy factor, because in that
    regime the recorded actions carry information about the latent state.
    """
    observations = [int(o) for o in observations]
    actions = [int(a) for a in actions]
    if len(observations) != len(actions) + 1 or not actions:
        raise ValueError("need T+1 observations and T >= 1 actions")
    belief = model.latent_prior * model.emission[:, observations[0]]
    total = belief.sum()
    if total <= 0.0:
        raise ImpossibleHistoryError("trajectory impossible under model at step 0")
    belief = belief / total
    policy_probs, transition_probs = [], []
    for t, (a, o) in enumerate(zip(actions, observations[1:])):
        p_action = float(belief @ model.obs_policy[:, a])
        if p_action <= 0.0:
            raise ImpossibleHistoryError(f"action {a} impossible at step {t} in regime 0")
        policy_probs.append(p_action)
        belief = belief * model.obs_policy[:, a] / p_action
        predicted = (belief @ model.latent_trans[:, a, :]) @ model.emission
        transition_probs.append(float(predicted[o]))
        belief = (belief @ model.latent_trans[:, a, :]) * model.emission[:, o]
        total = belief.sum()
        if total <= 0.0:
            raise ImpossibleHistoryError(f"trajectory impossible at step {t + 1} in regime 0")
        belief = belief / total
    return np.array(policy_probs), np.array(transition_probs)


def recovered_sequence_product(model: AugmentedModel, observations, actions) -> float:
    """prod_t q(o_{t+1} | h_t, a_t, i=1) along a trajectory, the quantity the
    Theorem-1 envelope brackets."""
    observations = [int(o) for o in observations]
    actions = [int(a) for a in actions]
    product = 1.0
    history = [observations[0]]
    for a, o in zip(actions, observations[1:]):
        product *= float(recovered_transition(model, history, a)[o])
        history.extend((a, o))
    return product


def empirical_sequence_probs(data: RegimeDataset, observations, actions):
    """Empirical p-hat(a_t|h_t) and p-hat(o_{t+1}|h_t,a_t) by prefix counting
    over regime-0 episodes (data mode for the bounds; an estimate, unlike the
    exact analysis mode)."""
    observations = [int(o) for o in observations]
    actions = [int(a) for a in actions]
    episodes = [ep for ep in data if ep.regime == 0]
    if not episodes:
        raise ValueError("no regime-0 episodes to estimate from")
    policy_probs, transition_probs = [], []
    for t in range(len(actions)):
        match_h = [
            ep for ep in episodes
            if ep.observations[: t + 1] == tuple(observations[: t + 1])
            and ep.actions[:t] == tuple(actions[:t])
        ]
        w_h = sum(ep.weight for ep in match_h)
        if w_h <= 0.0:
            return None  # no observational support for this cell
        match_a = [ep for ep in match_h if ep.actions[t] == actions[t]]
        w_a = sum(ep.weight for ep in match_a)
        policy_probs.append(w_a / w_h)
        if w_a <= 0.0:
            return None
        w_o = sum(ep.weight for ep in match_a if ep.observations[t + 1] == observations[t + 1])
        transition_probs.append(w_o / w_a)
    return np.array(policy_probs), np.array(transition_probs)


def bandit_bound_table(model_or_data, n_actions: int, n_obs: int, initial_obs: int = 0):
    """T=1 envelopes for every (action, next observation) cell.

    ``model_or_data`` is either an AugmentedModel queried exactly (analysis
    mode) or a RegimeDataset counted empirically (data mode).
    """
    envelopes = {}
    for a in range(n_actions):
        for o in range(n_obs):
            traj = ([initial_obs, o], [a])
            if isinstance(model_or_data, AugmentedModel):
                try:
                    probs = observational_sequence_probs(model_or_data, *traj)
                except ImpossibleHistoryError:
                    probs = None
            else:
                probs = empirical_sequence_probs(model_or_data, *traj)
            if probs is None:
                envelopes[(a, o)] = BoundEnvelope(0.0, 1.0, conditioning=(a, o), supported=False)
            else:
                envelopes[(a, o)] = theorem1_bounds(probs[0], probs[1], conditioning=(a, o))
    return envelopes


def write_bound_report(
    envelopes: dict, products: dict, sink: Union[str, IO[str]]
) -> None:
    """CSV rows: cell key, lower, upper, product-estimate."""
    close = False
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        f = open(sink, "w", encoding="utf-8", newline="")
        close = True
    else:
        f = sink
    try:
        writer = csv.writer(f)
        writer.writerow(["cell", "lower", "upper", "product_estimate", "supported"])
        for key in sorted(envelopes):
            env = envelopes[key]
            product = products.get(key, float("nan"))
            writer.writerow(
                ["/".join(str(k) for k in env.conditioning), repr(env.lower),
                 repr(env.upper), repr(float(product)), env.supported]
            )
    finally:
        if close:
            f.close()
