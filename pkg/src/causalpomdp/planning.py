"""Turning a fitted model into behaviour.

For one-step bandits the plan is an exact argmax over recovered
interventional outcome distributions.  For sequential problems an
actor-critic network is trained purely on rollouts imagined from the model,
with the filtered latent belief as its input features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .latent import AugmentedModel
from .pomdp import Policy, _draw
from .causal import recovered_transition


class TrainingDivergedError(RuntimeError):
    """Value loss blew past the guard threshold during training."""


@dataclass(frozen=True)
class DreamConfig:
    """Imagination-training knobs: batches of 8 rollouts, discount 0.9,
    learning rate 1e-2, at most 1000 epochs."""

    horizon: int
    batch_size: int = 8
    discount: float = 0.9
    learning_rate: float = 1e-2
    max_epochs: int = 1000
    hidden: int = 32
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    plateau_window: int = 25
    plateau_patience: int = 200
    value_loss_guard: float = 1e6

    def __post_init__(self):
        if not 0.0 < self.discount <= 1.0:
            raise ValueError("discount must be in (0, 1]")
        for name in ("horizon", "batch_size", "max_epochs", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")


class ActorCriticNet:
    """Two hidden tanh layers feeding a softmax policy head and a scalar
    value head.  Parameters live in plain arrays; gradients are hand-rolled
    backprop so they can be checked against finite differences."""

    def __init__(self, n_inputs: int, n_actions: int, hidden: int = 32,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.n_inputs = n_inputs
        self.n_actions = n_actions
        self.hidden = hidden
        self.value_coef = 0.5
        self.entropy_coef = 0.0

        def layer(n_in, n_out):
            return rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out))

        self.params = {
            "W1": layer(n_inputs, hidden), "b1": np.zeros(hidden),
            "W2": layer(hidden, hidden), "b2": np.zeros(hidden),
            "Wp": layer(hidden, n_actions), "bp": np.zeros(n_actions),
            "Wv": layer(hidden, 1), "bv": np.zeros(1),
        }

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k in sorted(self.params):
            p = self.params[k]
            self.params[k] = flat[i:i + p.size].reshape(p.shape).copy()
            i += p.size

    def _forward(self, x: np.ndarray):
        p = self.params
        h1 = np.tanh(x @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        logits = h2 @ p["Wp"] + p["bp"]
        logits = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        values = (h2 @ p["Wv"] + p["bv"]).ravel()
        return probs, values, (x, h1, h2)

    def policy_value(self, beliefs: np.ndarray):
        probs, values, _ = self._forward(np.atleast_2d(beliefs))
        return probs, values

    def action_probs(self, belief: np.ndarray) -> np.ndarray:
        probs, _, _ = self._forward(np.atleast_2d(belief))
        return probs[0]

    def loss_and_grads(self, beliefs, actions, advantages, value_targets):
        """Combined actor-critic loss on a fixed batch and its gradient.

        loss = -mean(log pi(a|x) * adv) + value_coef * mean((V - target)^2)
               - entropy_coef * mean(entropy(pi))
        Advantages and targets are treated as constants.
        """
        n = beliefs.shape[0]
        probs, values, (x, h1, h2) = self._forward(beliefs)
        idx = np.arange(n)
        logp = np.log(np.maximum(probs[idx, actions], 1e-300))
        entropy = -(probs * np.log(np.maximum(probs, 1e-300))).sum(axis=1)
        value_err = values - value_targets
        actor_loss = -float(logp @ advantages) / n
        value_loss = float(value_err @ value_err) / n
        loss = actor_loss + self.value_coef * value_loss - self.entropy_coef * entropy.mean()

        one_hot = np.zeros_like(probs)
        one_hot[idx, actions] = 1.0
        d_logits = -(one_hot - probs) * advantages[:, None] / n
        if self.entropy_coef:
            d_entropy = -probs * (np.log(np.maximum(probs, 1e-300)) + entropy[:, None])
            d_logits -= self.entropy_coef * d_entropy / n
        d_values = 2.0 * self.value_coef * value_err / n

        p = self.params
        grads = {}
        d_h2 = d_logits @ p["Wp"].T + d_values[:, None] * p["Wv"].T
        grads["Wp"] = h2.T @ d_logits
        grads["bp"] = d_logits.sum(axis=0)
        grads["Wv"] = h2.T @ d_values[:, None]
        grads["bv"] = np.array([d_values.sum()])
        d_pre2 = d_h2 * (1.0 - h2 * h2)
        grads["W2"] = h1.T @ d_pre2
        grads["b2"] = d_pre2.sum(axis=0)
        d_h1 = d_pre2 @ p["W2"].T
        d_pre1 = d_h1 * (1.0 - h1 * h1)
        grads["W1"] = x.T @ d_pre1
        grads["b1"] = d_pre1.sum(axis=0)
        return loss, grads, value_loss


def plan_bandit(model: AugmentedModel, reward_map: np.ndarray,
                initial_obs: int | None = None) -> int:
    """Exact one-step plan: argmax_a of the expected reward of the recovered
    interventional outcome distribution; ties break to the lowest index."""
    reward_map = np.asarray(reward_map, dtype=float)
    if initial_obs is None:
        initial_obs = int(np.argmax(model.latent_prior @ model.emission))
    values = np.array([
        float(recovered_transition(model, [initial_obs], a) @ reward_map)
        for a in range(model.n_actions)
    ])
    return int(np.argmax(values))  # argmax takes the first maximum


def _policy_probs_for_rollout(policy, belief, last_obs, n_actions):
    if isinstance(policy, ActorCriticNet):
        return policy.action_probs(belief)
    if isinstance(policy, Policy):
        if policy.kind != "standard":
            raise ValueError("imagination requires an observation-conditioned policy")
        return policy.probs[last_obs]
    if isinstance(policy, (int, np.integer)):
        row = np.zeros(n_actions)
        row[int(policy)] = 1.0
        return row
    raise TypeError(f"unsupported rollout policy type {type(policy)!r}")


def imagine_rollout(model: AugmentedModel, policy, horizon: int,
                    rng: np.random.Generator, reward_map: np.ndarray):
    """One trajectory sampled from the model's interventional regime.

    o_0 comes from the model marginal, then per step: act from the policy
    (belief features for a net, the current observation for a table), sample
    o_{t+1} from the recovered transition, update the belief.  Rewards are
    read off the sampled observations.  Returns (beliefs, actions, rewards)
    with horizon+1 belief rows and rewards and horizon actions.
    """
    reward_map = np.asarray(reward_map, dtype=float)
    obs_marginal = model.latent_prior @ model.emission
    o = _draw(rng, obs_marginal)
    belief = model.latent_prior * model.emission[:, o]
    belief = belief / belief.sum()
    beliefs = [belief]
    actions, rewards = [], [reward_map[o]]
    for _ in range(horizon):
        row = _policy_probs_for_rollout(policy, belief, o, model.n_actions)
        a = _draw(rng, row)
        predicted = (belief @ model.latent_trans[:, a, :]) @ model.emission
        o = _draw(rng, predicted)
        belief = (belief @ model.latent_trans[:, a, :]) * model.emission[:, o]
        belief = belief / belief.sum()
        beliefs.append(belief)
        actions.append(a)
        rewards.append(reward_map[o])
    return np.array(beliefs), np.array(actions, dtype=np.int64), np.array(rewards)


def _imagine_batch(model, net, horizon, rng, reward_map, batch_size):
    """Vectorized rollouts for training: all batch members advance together."""
    z = model.n_latent
    obs_marginal = model.latent_prior @ model.emission
    cum_obs = np.cumsum(obs_marginal)
    obs0 = np.searchsorted(cum_obs, rng.random(batch_size), side="right")
    belief = model.latent_prior[None, :] * model.emission.T[obs0]
    belief /= belief.sum(axis=1, keepdims=True)
    beliefs = np.empty((batch_size, horizon + 1, z))
    actions = np.empty((batch_size, horizon), dtype=np.int64)
    rewards = np.empty((batch_size, horizon + 1))
    beliefs[:, 0] = belief
    rewards[:, 0] = reward_map[obs0]
    for t in range(horizon):
        probs, _, _ = net._forward(belief)
        u = rng.random(batch_size)
        acts = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
        acts = np.minimum(acts, model.n_actions - 1)
        propagated = np.empty_like(belief)
        for a in range(model.n_actions):
            rows = acts == a
            if rows.any():
                propagated[rows] = belief[rows] @ model.latent_trans[:, a, :]
        predicted = propagated @ model.emission
        predicted /= predicted.sum(axis=1, keepdims=True)
        u = rng.random(batch_size)
        obs = (predicted.cumsum(axis=1) < u[:, None]).sum(axis=1)
        obs = np.minimum(obs, model.n_obs - 1)
        belief = propagated * model.emission.T[obs]
        belief /= belief.sum(axis=1, keepdims=True)
        beliefs[:, t + 1] = belief
        actions[:, t] = acts
        rewards[:, t + 1] = reward_map[obs]
    return beliefs, actions, rewards


def train_actor_critic(model: AugmentedModel, reward_map: np.ndarray,
                       config: DreamConfig, rng: np.random.Generator) -> ActorCriticNet:
    """Advantage actor-critic on imagined rollouts.

    One-step TD residuals weight the policy gradient; the value head
    regresses to bootstrapped targets.  Training stops on a moving-average
    return plateau or at max_epochs; a runaway value loss aborts.
    """
    reward_map = np.asarray(reward_map, dtype=float)
    net = ActorCriticNet(model.n_latent, model.n_actions, config.hidden, rng)
    net.value_coef = config.value_coef
    net.entropy_coef = config.entropy_coef
    adam_m = {k: np.zeros_like(v) for k, v in net.params.items()}
    adam_v = {k: np.zeros_like(v) for k, v in net.params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    gamma = config.discount

    returns_history: list[float] = []
    best_smoothed = -np.inf
    epochs_since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        beliefs, actions, rewards = _imagine_batch(
            model, net, config.horizon, rng, reward_map, config.batch_size)
        b, t_max = actions.shape
        flat_beliefs = beliefs.reshape(b * (t_max + 1), -1)
        _, values = net.policy_value(flat_beliefs)
        values = values.reshape(b, t_max + 1)
        targets = rewards[:, 1:] + gamma * np.concatenate(
            [values[:, 1:-1], np.zeros((b, 1))], axis=1)  # terminal bootstraps to 0
        advantages = targets - values[:, :-1]

        x = beliefs[:, :-1].reshape(b * t_max, -1)
        a = actions.reshape(-1)
        loss, grads, value_loss = net.loss_and_grads(
            x, a, advantages.reshape(-1), targets.reshape(-1))
        if value_loss > config.value_loss_guard:
            raise TrainingDivergedError(
                f"value loss {value_loss:.3e} exceeded guard {config.value_loss_guard:.1e} "
                f"at epoch {epoch}"
            )
        for k in net.params:
            adam_m[k] = beta1 * adam_m[k] + (1 - beta1) * grads[k]
            adam_v[k] = beta2 * adam_v[k] + (1 - beta2) * grads[k] ** 2
            m_hat = adam_m[k] / (1 - beta1**epoch)
            v_hat = adam_v[k] / (1 - beta2**epoch)
            net.params[k] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)

        returns_history.append(float(rewards.sum(axis=1).mean()))
        window = returns_history[-config.plateau_window:]
        smoothed = float(np.mean(window))
        if len(returns_history) >= config.plateau_window:
            if smoothed > best_smoothed + 1e-9:
                best_smoothed = smoothed
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.plateau_patience:
                    break
    return net


class BeliefPolicy:
    """Act on a real environment with belief features from a fitted model.

    Histories the model finds impossible reset the belief to the latent
    prior; a planner must keep acting even where its model assigns no mass.
    """

    def __init__(self, model: AugmentedModel, net: ActorCriticNet):
        self.model = model
        self.net = net

    def initial_state(self, obs: int) -> np.ndarray:
        belief = self.model.latent_prior * self.model.emission[:, obs]
        total = belief.sum()
        if total <= 0.0:
            return self.model.latent_prior.copy()
        return belief / total

    def step_state(self, state: np.ndarray, action: int, obs: int) -> np.ndarray:
        belief = (state @ self.model.latent_trans[:, action, :]) * self.model.emission[:, obs]
        total = belief.sum()
        if total <= 0.0:
            return self.model.latent_prior.copy()
        return belief / total

    def action_probs(self, state: np.ndarray) -> np.ndarray:
        return self.net.action_probs(state)
