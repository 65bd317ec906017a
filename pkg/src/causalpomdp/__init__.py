"""Deconfounded POMDP transition-model learning from mixed-regime data.

Learn a latent-variable model that jointly explains confounded observational
trajectories and clean interventional ones, then recover the interventional
(causal) transition model by forward filtering, with product-form bound
envelopes, model-based planning, and a reproducible experiment harness.
"""

from .pomdp import (
    DatasetFormatError,
    Episode,
    ImpossibleHistoryError,
    Policy,
    PomdpValidationError,
    RegimeDataset,
    TabularPOMDP,
    read_dataset,
    sample_dataset,
    sample_episode,
    state_filter,
    true_transition,
    uniform_policy,
    validate_pomdp,
    write_dataset,
)
from .environments import (
    Scenario,
    make_door,
    make_environment,
    make_tiger,
    read_environment,
    scenario_names,
    write_environment,
)
from .latent import (
    AugmentedModel,
    FitConfig,
    ForwardResult,
    dataset_objective,
    em_step,
    embed_pomdp,
    fit,
    forward_log_likelihood,
    init_model,
    load_model,
    save_model,
)
from .causal import (
    BeliefVector,
    BoundEnvelope,
    bandit_bound_table,
    deconfound_bandit,
    empirical_sequence_probs,
    filter_belief,
    observational_sequence_probs,
    recovered_sequence_product,
    recovered_transition,
    theorem1_bounds,
    write_bound_report,
)
from .planning import (
    ActorCriticNet,
    BeliefPolicy,
    DreamConfig,
    TrainingDivergedError,
    imagine_rollout,
    plan_bandit,
    train_actor_critic,
)
from .evaluation import (
    DegenerateSamplesError,
    expected_reward,
    js_divergence,
    welch_t_test,
)
from .experiments import (
    ExperimentConfig,
    ResultRow,
    build_training_set,
    default_config,
    emit_report,
    read_results,
    run_experiment,
)

__version__ = "0.1.0"
