"""Latent-variable model of the augmented (regime-indicator) POMDP.

The model q factorizes as a latent prior, an emission table, an
action-conditioned latent transition table, and an observational-regime
policy table over latent symbols.  Interventional episodes (regime 1) omit
the policy factor: it does not depend on the latent state and is constant in
the model parameters, so it drops out of the likelihood maximization.  The
regime prior is likewise never fitted; it is stored only so that imagination
sampling can mix regimes if asked.

Fitting maximizes the weighted episode log-likelihood either with
Baum-Welch-style EM updates or with Adam on unconstrained row scores mapped
through a softmax.  Both paths share one forward-backward routine, so the
analytic gradient (expected counts minus row totals times probabilities) is
exactly the quantity the E-step already produces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import IO, NamedTuple, Sequence, Union

import numpy as np

from .pomdp import Episode, Policy, RegimeDataset, TabularPOMDP, _frozen
from .seeding import split_rng

EPS = 1e-12
_BLOCK = 4096  # episodes per forward-backward block, bounds peak memory


class ModelValidationError(ValueError):
    """An AugmentedModel table violates shape or normalization invariants."""


@dataclass(frozen=True)
class AugmentedModel:
    """Tabular model over a discrete latent alphabet Z.

    latent_prior -- (Z,) distribution of the first latent symbol
    emission     -- (Z, n_obs) observation distribution per latent symbol
    latent_trans -- (Z, n_actions, Z) latent transition per action
    obs_policy   -- (Z, n_actions) action distribution in the observational regime
    regime_prior -- probability of the interventional regime (never fitted,
                    kept at the empirical regime frequency for sampling)
    """

    latent_prior: np.ndarray
    emission: np.ndarray
    latent_trans: np.ndarray
    obs_policy: np.ndarray
    regime_prior: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "latent_prior", _frozen(self.latent_prior))
        object.__setattr__(self, "emission", _frozen(self.emission))
        object.__setattr__(self, "latent_trans", _frozen(self.latent_trans))
        object.__setattr__(self, "obs_policy", _frozen(self.obs_policy))
        z = self.latent_prior.shape[0]
        if self.emission.shape[0] != z or self.latent_trans.shape[0] != z \
                or self.latent_trans.shape[2] != z or self.obs_policy.shape[0] != z:
            raise ModelValidationError("inconsistent latent alphabet size across tables")
        if self.latent_trans.shape[1] != self.obs_policy.shape[1]:
            raise ModelValidationError("inconsistent action alphabet size across tables")
        for name, table in (
            ("latent_prior", self.latent_prior[None, :]),
            ("emission", self.emission),
            ("latent_trans", self.latent_trans),
            ("obs_policy", self.obs_policy),
        ):
            sums = table.sum(axis=-1)
            if np.any(table < 0.0) or np.any(np.abs(sums - 1.0) > 1e-6):
                raise ModelValidationError(f"{name}: rows must be probability vectors")
        if not 0.0 <= self.regime_prior <= 1.0:
            raise ModelValidationError(f"regime_prior must be in [0, 1], got {self.regime_prior}")

    @property
    def n_latent(self) -> int:
        return self.latent_prior.shape[0]

    @property
    def n_obs(self) -> int:
        return self.emission.shape[1]

    @property
    def n_actions(self) -> int:
        return self.obs_policy.shape[1]


@dataclass(frozen=True)
class FitConfig:
    """Training knobs; numeric defaults mirror the experiment recipe:
    latent size 32, learning rate 1e-2, 500 epochs of 50 steps with
    minibatches of 32, reduce-on-plateau after 10, early stop after 20."""

    method: str = "em"
    n_restarts: int = 10
    max_epochs: int = 500
    steps_per_epoch: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-2
    plateau_patience: int = 10
    stop_patience: int = 20
    seed: int = 0
    latent_size: int = 32
    tol: float = 1e-9
    init_noise: float = 0.5

    def __post_init__(self):
        if self.method not in ("em", "gradient"):
            raise ValueError(f"method must be 'em' or 'gradient', got {self.method!r}")
        for name in ("n_restarts", "max_epochs", "steps_per_epoch", "batch_size", "latent_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive count")
        if self.method == "gradient" and not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0 for the gradient method")


class ForwardResult(NamedTuple):
    log_prob: float
    beliefs: np.ndarray | None
    failed_step: int | None


# ---------------------------------------------------------------------------
# batched forward-backward


class _Batch(NamedTuple):
    obs: np.ndarray      # (N, T+1) int
    acts: np.ndarray     # (N, T) int
    observational: np.ndarray  # (N,) bool, True when regime == 0
    weights: np.ndarray  # (N,)


def _as_batches(data: RegimeDataset) -> list[_Batch]:
    """Group episodes by length so each group is a rectangular array."""
    by_len: dict[int, list[Episode]] = {}
    for ep in data:
        by_len.setdefault(ep.n_steps, []).append(ep)
    batches = []
    for n_steps in sorted(by_len):
        eps = by_len[n_steps]
        batches.append(
            _Batch(
                obs=np.array([ep.observations for ep in eps], dtype=np.int64),
                acts=np.array([ep.actions for ep in eps], dtype=np.int64).reshape(len(eps), n_steps),
                observational=np.array([ep.regime == 0 for ep in eps]),
                weights=np.array([ep.weight for ep in eps]),
            )
        )
    return batches


def _forward_block(model: AugmentedModel, batch: _Batch, keep_alphas: bool):
    """Scaled forward pass over one rectangular block.

    Returns (log_liks, alphas, norms): per-episode log q(tau | i), normalized
    filtered posteriors (N, T+1, Z) if requested, and the per-step scale
    factors (N, T+1).  Episodes with zero forward mass get log_lik -inf and a
    nonnegative entry in the returned failed_steps array.
    """
    obs, acts, observational, _ = batch
    n, t_max = acts.shape
    z = model.n_latent
    em_t = model.emission.T  # (O, Z)
    alpha = model.latent_prior[None, :] * em_t[obs[:, 0]]
    norms = np.empty((n, t_max + 1))
    failed = np.full(n, -1, dtype=np.int64)
    alphas = np.empty((n, t_max + 1, z)) if keep_alphas else None

    c = alpha.sum(axis=1)
    dead = c <= 0.0
    failed[dead] = 0
    c_safe = np.where(dead, 1.0, c)
    alpha = alpha / c_safe[:, None]
    alpha[dead] = 0.0
    norms[:, 0] = c
    if keep_alphas:
        alphas[:, 0] = alpha

    for t in range(t_max):
        src = alpha.copy()
        rows_obs = observational
        if rows_obs.any():
            src[rows_obs] *= model.obs_policy.T[acts[rows_obs, t]]
        nxt = np.empty_like(src)
        for a in range(model.n_actions):
            rows = acts[:, t] == a
            if rows.any():
                nxt[rows] = src[rows] @ model.latent_trans[:, a, :]
        nxt *= em_t[obs[:, t + 1]]
        c = nxt.sum(axis=1)
        newly_dead = (c <= 0.0) & (failed < 0)
        failed[newly_dead] = t + 1
        c_safe = np.where(c <= 0.0, 1.0, c)
        alpha = nxt / c_safe[:, None]
        alpha[c <= 0.0] = 0.0
        norms[:, t + 1] = c
        if keep_alphas:
            alphas[:, t + 1] = alpha

    with np.errstate(divide="ignore"):
        log_liks = np.where(failed >= 0, -np.inf, np.log(np.maximum(norms, 1e-300)).sum(axis=1))
    return log_liks, alphas, norms, failed


class _Counts(NamedTuple):
    prior: np.ndarray    # (Z,)
    emission: np.ndarray  # (Z, O)
    trans: np.ndarray    # (Z, A, Z)
    policy: np.ndarray   # (Z, A)


def _zero_counts(z: int, o: int, a: int) -> _Counts:
    return _Counts(np.zeros(z), np.zeros((z, o)), np.zeros((z, a, z)), np.zeros((z, a)))


def _add_grouped(table: np.ndarray, symbols: np.ndarray, weighted_gamma: np.ndarray) -> None:
    """table[:, sym] += column sums of weighted_gamma grouped by symbol."""
    for sym in np.unique(symbols):
        rows = symbols == sym
        table[:, sym] += weighted_gamma[rows].sum(axis=0)


def _accumulate_counts(model: AugmentedModel, batch: _Batch, counts: _Counts) -> float:
    """One E-step over a batch: weighted expected table counts, in place.

    Backward recursion runs step-by-step against stored forward posteriors,
    so memory stays O(block * T * Z).
    """
    total_loglik = 0.0
    em_t = model.emission.T
    for start in range(0, batch.obs.shape[0], _BLOCK):
        sl = slice(start, start + _BLOCK)
        obs, acts, observational, w = (
            batch.obs[sl], batch.acts[sl], batch.observational[sl], batch.weights[sl])
        log_liks, alphas, norms, failed = _forward_block(
            model, _Batch(obs, acts, observational, w), keep_alphas=True)
        if np.any(failed >= 0):
            bad = int(np.argmax(failed >= 0))
            raise FloatingPointError(
                f"zero-probability episode at step {failed[bad]} during count accumulation"
            )
        total_loglik += float(w @ log_liks)
        n, t_max = acts.shape
        beta = np.ones((n, model.n_latent))
        # last-step observation counts; earlier ones fall out of the loop below
        _add_grouped(counts.emission, obs[:, t_max], w[:, None] * alphas[:, t_max] * beta)
        for t in range(t_max - 1, -1, -1):
            right = em_t[obs[:, t + 1]] * beta / norms[:, t + 1][:, None]
            left = alphas[:, t].copy()
            if observational.any():
                left[observational] *= model.obs_policy.T[acts[observational, t]]
            beta_prev = np.empty_like(beta)
            for a in range(model.n_actions):
                rows = acts[:, t] == a
                if rows.any():
                    pair = (left[rows] * w[rows, None]).T @ right[rows]
                    counts.trans[:, a, :] += pair * model.latent_trans[:, a, :]
                    beta_prev[rows] = right[rows] @ model.latent_trans[:, a, :].T
            if observational.any():
                beta_prev[observational] *= model.obs_policy.T[acts[observational, t]]
            beta = beta_prev
            gamma = alphas[:, t] * beta  # posterior of z_t given the whole episode
            _add_grouped(counts.emission, obs[:, t], w[:, None] * gamma)
            if observational.any():
                _add_grouped(
                    counts.policy, acts[observational, t],
                    w[observational, None] * gamma[observational],
                )
        if t_max == 0:
            gamma = alphas[:, 0] * beta
        counts.prior[...] += w @ gamma
    return total_loglik


def _normalized_or_kept(counts: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Row-normalize expected counts; rows with zero mass keep the old row."""
    counts = np.asarray(counts, dtype=float)
    flat = counts.reshape(-1, counts.shape[-1])
    prev = np.asarray(previous, dtype=float).reshape(flat.shape)
    totals = flat.sum(axis=1)
    out = np.where(totals[:, None] > 0.0, flat / np.where(totals == 0.0, 1.0, totals)[:, None], prev)
    out = np.maximum(out, EPS)
    out /= out.sum(axis=1, keepdims=True)
    return out.reshape(counts.shape)


# ---------------------------------------------------------------------------
# public operations


def forward_log_likelihood(model: AugmentedModel, episode: Episode) -> ForwardResult:
    """log q(tau | i) and the filtered latent posteriors, by scaled forward
    recursion.  The regime prior is excluded (it factors out of the
    objective); regime-0 episodes include the observational policy factor.
    An episode with zero probability reports -inf and the offending step."""
    if max(episode.observations) >= model.n_obs or max(episode.actions, default=0) >= model.n_actions:
        raise ValueError("episode symbols outside the model alphabets")
    batch = _as_batches(RegimeDataset((episode,)))[0]
    log_liks, alphas, _, failed = _forward_block(model, batch, keep_alphas=True)
    if failed[0] >= 0:
        return ForwardResult(-np.inf, None, int(failed[0]))
    return ForwardResult(float(log_liks[0]), alphas[0], None)


def dataset_objective(model: AugmentedModel, data: RegimeDataset) -> float:
    """Weight-weighted sum of per-episode log-likelihoods."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    total = 0.0
    for batch in _as_batches(data):
        log_liks, _, _, failed = _forward_block(model, batch, keep_alphas=False)
        if np.any((failed >= 0) & (batch.weights > 0)):
            return -np.inf
        total += float(batch.weights @ np.where(failed >= 0, 0.0, log_liks))
    return total


def em_step(model: AugmentedModel, data: RegimeDataset) -> AugmentedModel:
    """One Baum-Welch update: forward-backward expected counts, then row
    normalization with floor.  Never decreases the dataset objective (up to
    the epsilon floor)."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    counts = _zero_counts(model.n_latent, model.n_obs, model.n_actions)
    for batch in _as_batches(data):
        _accumulate_counts(model, batch, counts)
    return _model_from_counts(model, counts)


def _model_from_counts(model: AugmentedModel, counts: _Counts) -> AugmentedModel:
    return AugmentedModel(
        latent_prior=_normalized_or_kept(counts.prior[None, :], model.latent_prior[None, :])[0],
        emission=_normalized_or_kept(counts.emission, model.emission),
        latent_trans=_normalized_or_kept(counts.trans, model.latent_trans),
        obs_policy=_normalized_or_kept(counts.policy, model.obs_policy),
        regime_prior=model.regime_prior,
    )


def init_model(
    rng: np.random.Generator,
    n_latent: int,
    n_obs: int,
    n_actions: int,
    noise: float = 0.5,
    regime_prior: float = 0.5,
) -> AugmentedModel:
    """Near-uniform rows with uniform noise to break symmetry."""

    def rows(*shape):
        r = 1.0 + noise * rng.random(shape)
        return r / r.sum(axis=-1, keepdims=True)

    return AugmentedModel(
        latent_prior=rows(n_latent),
        emission=rows(n_latent, n_obs),
        latent_trans=rows(n_latent, n_actions, n_latent),
        obs_policy=rows(n_latent, n_actions),
        regime_prior=regime_prior,
    )


def _empirical_regime_frequency(data: RegimeDataset) -> float:
    tot = data.total_weight()
    if tot <= 0.0:
        return 0.5
    return float(sum(ep.weight for ep in data if ep.regime == 1) / tot)


def _fit_em(data, batches, config, rng):
    model = init_model(
        rng, config.latent_size, _alphabet(batches), _n_actions(batches), config.init_noise
    )
    # the E-step's forward pass already yields the current model's objective,
    # so convergence is checked on consecutive E-step log-likelihoods
    previous = -np.inf
    for _ in range(config.max_epochs):
        counts = _zero_counts(model.n_latent, model.n_obs, model.n_actions)
        objective = 0.0
        for batch in batches:
            objective += _accumulate_counts(model, batch, counts)
        model = _model_from_counts(model, counts)
        if abs(objective - previous) < config.tol:
            break
        previous = objective
    return model, dataset_objective(model, data)


def _alphabet(batches):
    return int(max(batch.obs.max() for batch in batches)) + 1


def _n_actions(batches):
    return int(max(batch.acts.max() for batch in batches)) + 1


class _ScoreTables(NamedTuple):
    prior: np.ndarray
    emission: np.ndarray
    trans: np.ndarray
    policy: np.ndarray


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _scores_to_model(scores: _ScoreTables, regime_prior: float) -> AugmentedModel:
    return AugmentedModel(
        latent_prior=_softmax_rows(scores.prior),
        emission=_softmax_rows(scores.emission),
        latent_trans=_softmax_rows(scores.trans),
        obs_policy=_softmax_rows(scores.policy),
        regime_prior=regime_prior,
    )


def objective_score_gradient(scores: _ScoreTables, data: RegimeDataset) -> tuple:
    """(objective, gradient) of the weighted log-likelihood w.r.t. row scores.

    Uses the expected-count identity: d logq / d score = E[counts] minus the
    expected row total times the softmax probabilities.
    """
    model = _scores_to_model(scores, 0.5)
    counts = _zero_counts(model.n_latent, model.n_obs, model.n_actions)
    objective = 0.0
    for batch in _as_batches(data):
        objective += _accumulate_counts(model, batch, counts)

    def row_grad(c, probs):
        return c - c.sum(axis=-1, keepdims=True) * probs

    grad = _ScoreTables(
        prior=row_grad(counts.prior, model.latent_prior),
        emission=row_grad(counts.emission, model.emission),
        trans=row_grad(counts.trans, model.latent_trans),
        policy=row_grad(counts.policy, model.obs_policy),
    )
    return objective, grad


def _fit_gradient(data, batches, config, rng):
    episodes = tuple(data)
    n = len(episodes)
    z = config.latent_size
    model0 = init_model(rng, z, _alphabet(batches), _n_actions(batches), config.init_noise)
    scores = _ScoreTables(
        prior=np.log(model0.latent_prior),
        emission=np.log(model0.emission),
        trans=np.log(model0.latent_trans),
        policy=np.log(model0.obs_policy),
    )
    adam_m = _ScoreTables(*(np.zeros_like(t) for t in scores))
    adam_v = _ScoreTables(*(np.zeros_like(t) for t in scores))
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    lr = config.learning_rate
    step_count = 0

    best_objective = -np.inf
    best_scores = scores
    epochs_since_best = 0
    for _ in range(config.max_epochs):
        for _ in range(config.steps_per_epoch):
            idx = rng.choice(n, size=config.batch_size, replace=n < config.batch_size)
            minibatch = RegimeDataset(tuple(episodes[i] for i in idx))
            total_w = max(minibatch.total_weight(), EPS)
            _, grad = objective_score_gradient(scores, minibatch)
            step_count += 1
            new_tables = []
            for name in scores._fields:
                g = -getattr(grad, name) / total_w  # descent on the mean NLL
                m = beta1 * getattr(adam_m, name) + (1 - beta1) * g
                v = beta2 * getattr(adam_v, name) + (1 - beta2) * g * g
                adam_m = adam_m._replace(**{name: m})
                adam_v = adam_v._replace(**{name: v})
                m_hat = m / (1 - beta1**step_count)
                v_hat = v / (1 - beta2**step_count)
                s = getattr(scores, name) - lr * m_hat / (np.sqrt(v_hat) + adam_eps)
                s = s - s.max(axis=-1, keepdims=True)  # softmax shift invariance
                new_tables.append(s)
            scores = _ScoreTables(*new_tables)
        objective = dataset_objective(_scores_to_model(scores, 0.5), data)
        if objective > best_objective + 1e-12:
            best_objective = objective
            best_scores = scores
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.stop_patience:
                break
            if epochs_since_best % config.plateau_patience == 0:
                lr /= 10.0
    model = _scores_to_model(best_scores, 0.5)
    return model, best_objective


def fit(
    data: RegimeDataset, config: FitConfig, rng: np.random.Generator | None = None
) -> AugmentedModel:
    """Best-of-n_restarts maximum-likelihood fit of the augmented model."""
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if config.latent_size < 1:
        raise ValueError("latent_size must be >= 1")
    data = data.deduplicated()
    batches = _as_batches(data)
    if rng is None:
        rng = split_rng(config.seed)
    restart_seeds = rng.integers(0, 2**63 - 1, size=config.n_restarts)

    best_model, best_objective = None, -np.inf
    for seed in restart_seeds:
        restart_rng = np.random.default_rng(int(seed))
        if config.method == "em":
            model, objective = _fit_em(data, batches, config, restart_rng)
        else:
            model, objective = _fit_gradient(data, batches, config, restart_rng)
        if objective > best_objective or best_model is None:
            best_model, best_objective = model, objective
    return replace(best_model, regime_prior=_empirical_regime_frequency(data))


def embed_pomdp(
    pomdp: TabularPOMDP, privileged_policy: Policy | None = None, regime_prior: float = 0.5
) -> AugmentedModel:
    """The true environment expressed in the model family (latent = state)."""
    if privileged_policy is None:
        n_a = pomdp.n_actions
        policy_probs = np.full((pomdp.n_states, n_a), 1.0 / n_a)
    else:
        policy_probs = privileged_policy.probs
    return AugmentedModel(
        latent_prior=pomdp.init,
        emission=pomdp.obs,
        latent_trans=pomdp.trans,
        obs_policy=policy_probs,
        regime_prior=regime_prior,
    )


def save_model(model: AugmentedModel, sink: Union[str, IO[str]]) -> None:
    doc = {
        "n_latent": model.n_latent,
        "n_obs": model.n_obs,
        "n_actions": model.n_actions,
        "latent_prior": model.latent_prior.tolist(),
        "emission": model.emission.tolist(),
        "latent_trans": model.latent_trans.tolist(),
        "obs_policy": model.obs_policy.tolist(),
        "regime_prior": model.regime_prior,
    }
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "w", encoding="utf-8") as f:
            json.dump(doc, f)
    else:
        json.dump(doc, sink)


def load_model(source: Union[str, IO[str]]) -> AugmentedModel:
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as f:
            doc = json.load(f)
    else:
        doc = json.load(source)
    return AugmentedModel(
        latent_prior=np.array(doc["latent_prior"]),
        emission=np.array(doc["emission"]),
        latent_trans=np.array(doc["latent_trans"]),
        obs_policy=np.array(doc["obs_policy"]),
        regime_prior=float(doc["regime_prior"]),
    )
