"""The two benchmark environments and their observed-agent scenarios.

Rewards are folded into the observation alphabet, so the hidden state is
expanded just enough that the emission table stays a function of the current
state: the tiger state carries (position, last reward event) and the door
adds terminal door-outcome states after the single button press.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Union

import numpy as np

from .pomdp import Policy, TabularPOMDP, uniform_policy, validate_pomdp

# door alphabets
DOOR_ACTION_A, DOOR_ACTION_B = 0, 1
DOOR_OBS_DUMMY, DOOR_OBS_CLOSED, DOOR_OBS_OPEN = 0, 1, 2
DOOR_STATE_RED, DOOR_STATE_GREEN, DOOR_STATE_CLOSED, DOOR_STATE_OPEN = 0, 1, 2, 3

# tiger alphabets: state = 3*position + reward event, obs = 3*roar side + reward event
TIGER_LISTEN, TIGER_OPEN_LEFT, TIGER_OPEN_RIGHT = 0, 1, 2
TIGER_LEFT, TIGER_RIGHT = 0, 1
REV_LISTEN, REV_TIGER, REV_TREASURE = 0, 1, 2  # rewards -1, -100, +10
TIGER_REWARDS = (-1.0, -100.0, 10.0)
TIGER_ROAR_ACCURACY = 0.85


@dataclass(frozen=True)
class Scenario:
    """A named pair (privileged data-collection policy, standard policy)."""

    name: str
    privileged_policy: Policy
    standard_policy: Policy


# privileged tables: rows = light color (red, green), cols = button (A, B)
DOOR_SCENARIOS = {
    "noisy_good": [[0.9, 0.1], [0.4, 0.6]],
    "random": [[0.5, 0.5], [0.5, 0.5]],
    "perfect_good": [[1.0, 0.0], [0.0, 1.0]],
    "perfect_bad": [[0.0, 1.0], [1.0, 0.0]],
    "positively_biased": [[0.8, 0.2], [1.0, 0.0]],
    "negatively_biased": [[1.0, 0.0], [0.8, 0.2]],
}

# privileged tables: rows = tiger position (left, right),
# cols = action (listen, open left, open right); 1/3 is exact, not 0.33
THIRD = 1.0 / 3.0
TIGER_SCENARIOS = {
    "noisy_good": [[0.05, 0.3, 0.65], [0.05, 0.8, 0.15]],
    "random": [[THIRD, THIRD, THIRD], [THIRD, THIRD, THIRD]],
    "very_good": [[0.05, 0.0, 0.95], [0.05, 0.95, 0.0]],
    "very_bad": [[0.05, 0.95, 0.0], [0.05, 0.0, 0.95]],
    "optimistic_right_biased": [[0.05, 0.20, 0.75], [0.05, 0.95, 0.00]],
    "pessimistic_right_biased": [[0.05, 0.95, 0.0], [0.05, 0.20, 0.75]],
}


def make_door(scenario_name: str):
    """Door bandit: light is red 60% of the time, buttons open the door
    deterministically given the light.  Encoded as an H=1 POMDP with a
    constant dummy first observation."""
    if scenario_name not in DOOR_SCENARIOS:
        raise KeyError(
            f"unknown door scenario {scenario_name!r}; known: {sorted(DOOR_SCENARIOS)}"
        )
    init = np.array([0.6, 0.4, 0.0, 0.0])
    trans = np.zeros((4, 2, 4))
    # red + A opens, red + B stays closed; green is the reverse
    trans[DOOR_STATE_RED, DOOR_ACTION_A, DOOR_STATE_OPEN] = 1.0
    trans[DOOR_STATE_RED, DOOR_ACTION_B, DOOR_STATE_CLOSED] = 1.0
    trans[DOOR_STATE_GREEN, DOOR_ACTION_A, DOOR_STATE_CLOSED] = 1.0
    trans[DOOR_STATE_GREEN, DOOR_ACTION_B, DOOR_STATE_OPEN] = 1.0
    trans[DOOR_STATE_CLOSED, :, DOOR_STATE_CLOSED] = 1.0
    trans[DOOR_STATE_OPEN, :, DOOR_STATE_OPEN] = 1.0
    obs = np.zeros((4, 3))
    obs[DOOR_STATE_RED, DOOR_OBS_DUMMY] = 1.0
    obs[DOOR_STATE_GREEN, DOOR_OBS_DUMMY] = 1.0
    obs[DOOR_STATE_CLOSED, DOOR_OBS_CLOSED] = 1.0
    obs[DOOR_STATE_OPEN, DOOR_OBS_OPEN] = 1.0
    reward = np.array([0.0, 0.0, 1.0])
    pomdp = validate_pomdp(TabularPOMDP(init, trans, obs, reward, horizon=1))

    table = np.array(DOOR_SCENARIOS[scenario_name])
    prv = np.full((4, 2), 0.5)
    prv[DOOR_STATE_RED] = table[0]
    prv[DOOR_STATE_GREEN] = table[1]
    scenario = Scenario(
        name=scenario_name,
        privileged_policy=Policy("privileged", prv),
        standard_policy=uniform_policy(3, 2),
    )
    return pomdp, scenario


def _tiger_state(position: int, rev: int) -> int:
    return 3 * position + rev


def make_tiger(scenario_name: str):
    """Tiger POMDP, horizon 50, with the reward event carried in the state.

    Listening keeps the tiger in place; opening either door resets it to a
    fair coin.  The roar points at the true position with accuracy 0.85.
    Observation = (roar side, reward event of the previous action).
    """
    if scenario_name not in TIGER_SCENARIOS:
        raise KeyError(
            f"unknown tiger scenario {scenario_name!r}; known: {sorted(TIGER_SCENARIOS)}"
        )
    n_states, n_obs, n_actions = 6, 6, 3
    init = np.zeros(n_states)
    init[_tiger_state(TIGER_LEFT, REV_LISTEN)] = 0.5
    init[_tiger_state(TIGER_RIGHT, REV_LISTEN)] = 0.5

    # p(position' | position, action): listen keeps, open resets
    pos_trans = np.empty((2, 3, 2))
    pos_trans[TIGER_LEFT, TIGER_LISTEN] = [1.0, 0.0]
    pos_trans[TIGER_RIGHT, TIGER_LISTEN] = [0.0, 1.0]
    pos_trans[:, TIGER_OPEN_LEFT] = [0.5, 0.5]
    pos_trans[:, TIGER_OPEN_RIGHT] = [0.5, 0.5]

    def reward_event(position: int, action: int) -> int:
        if action == TIGER_LISTEN:
            return REV_LISTEN
        opened_left = action == TIGER_OPEN_LEFT
        tiger_behind = (position == TIGER_LEFT) == opened_left
        return REV_TIGER if tiger_behind else REV_TREASURE

    trans = np.zeros((n_states, n_actions, n_states))
    for pos in (TIGER_LEFT, TIGER_RIGHT):
        for rev in (REV_LISTEN, REV_TIGER, REV_TREASURE):
            for action in range(n_actions):
                rev_next = reward_event(pos, action)
                for pos_next in (TIGER_LEFT, TIGER_RIGHT):
                    trans[_tiger_state(pos, rev), action, _tiger_state(pos_next, rev_next)] = (
                        pos_trans[pos, action, pos_next]
                    )

    obs = np.zeros((n_states, n_obs))
    acc = TIGER_ROAR_ACCURACY
    for pos in (TIGER_LEFT, TIGER_RIGHT):
        for rev in (REV_LISTEN, REV_TIGER, REV_TREASURE):
            for roar in (TIGER_LEFT, TIGER_RIGHT):
                p_roar = acc if roar == pos else 1.0 - acc
                obs[_tiger_state(pos, rev), 3 * roar + rev] = p_roar

    reward = np.array([TIGER_REWARDS[o % 3] for o in range(n_obs)])
    pomdp = validate_pomdp(TabularPOMDP(init, trans, obs, reward, horizon=50))

    table = np.array(TIGER_SCENARIOS[scenario_name])
    prv = np.empty((n_states, n_actions))
    for pos in (TIGER_LEFT, TIGER_RIGHT):
        for rev in (REV_LISTEN, REV_TIGER, REV_TREASURE):
            prv[_tiger_state(pos, rev)] = table[pos]
    scenario = Scenario(
        name=scenario_name,
        privileged_policy=Policy("privileged", prv),
        standard_policy=uniform_policy(n_obs, n_actions),
    )
    return pomdp, scenario


def make_environment(environment: str, scenario_name: str):
    if environment == "door":
        return make_door(scenario_name)
    if environment == "tiger":
        return make_tiger(scenario_name)
    raise KeyError(f"unknown environment {environment!r}; known: door, tiger")


def scenario_names(environment: str):
    return sorted(DOOR_SCENARIOS if environment == "door" else TIGER_SCENARIOS)


def write_environment(
    pomdp: TabularPOMDP, scenarios: dict, sink: Union[str, IO[str]]
) -> None:
    """JSON document with all five tables, reward map, horizon and sizes."""
    doc = {
        "n_states": pomdp.n_states,
        "n_obs": pomdp.n_obs,
        "n_actions": pomdp.n_actions,
        "horizon": pomdp.horizon,
        "init": pomdp.init.tolist(),
        "trans": pomdp.trans.tolist(),
        "obs": pomdp.obs.tolist(),
        "reward": pomdp.reward.tolist(),
        "scenarios": {
            name: {
                "privileged": sc.privileged_policy.probs.tolist(),
                "standard": sc.standard_policy.probs.tolist(),
            }
            for name, sc in scenarios.items()
        },
    }
    if isinstance(sink, (str, bytes)) or hasattr(sink, "__fspath__"):
        with open(sink, "w", encoding="utf-8") as f:
            json.dump(doc, f)
    else:
        json.dump(doc, sink)


def read_environment(source: Union[str, IO[str]]):
    """Inverse of write_environment; returns (pomdp, {name: Scenario})."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "r", encoding="utf-8") as f:
            doc = json.load(f)
    else:
        doc = json.load(source)
    pomdp = validate_pomdp(
        TabularPOMDP(
            np.array(doc["init"]),
            np.array(doc["trans"]),
            np.array(doc["obs"]),
            np.array(doc["reward"]),
            horizon=int(doc["horizon"]),
        )
    )
    scenarios = {
        name: Scenario(
            name=name,
            privileged_policy=Policy("privileged", np.array(entry["privileged"])),
            standard_policy=Policy("standard", np.array(entry["standard"])),
        )
        for name, entry in doc.get("scenarios", {}).items()
    }
    return pomdp, scenarios
