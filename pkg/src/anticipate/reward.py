"""Joint human-robot reward over a tabular world model.

A plan is a list of simultaneous (human, robot) action pairs. Its total
reward rolls the state forward from the initial state and adds
``R(S_i, (h_i, r_i))`` for every pair, one term per pair: a plan indexed
``0..N`` has ``N + 1`` pairs and ``N + 1`` terms.

Scenario files are JSON::

    {"format": "anticipate-scenario", "version": 1,
     "states": [...], "human_actions": [...], "robot_actions": [...],
     "initial_state": "s0", "horizon": 2,
     "transitions": [{"state": .., "human": .., "robot": .., "next": ..}, ...],
     "rewards": [{"state": .., "human": .., "robot": .., "reward": 1.5}, ...],
     "action_map": {"<predictor symbol>": "<human action>"},
     "observation": [[...feature row...], ...]}

Transitions must cover every (state, human, robot) triple. Reward triples
that are not listed are 0. ``action_map`` and ``observation`` are optional;
unmapped predictor symbols must name a human action directly.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .decoder import BeamSet
from .errors import InvalidArgumentError, ParseError, ResourceLimitError, SchemaError

SCENARIO_FORMAT = "anticipate-scenario"
SCENARIO_VERSION = 1
PLAN_CAP = 10**5


@dataclass
class WorldModel:
    states: tuple[str, ...]
    human_actions: tuple[str, ...]
    robot_actions: tuple[str, ...]
    transition: np.ndarray  # (S, H, R) -> next state index
    reward: np.ndarray      # (S, H, R) -> float
    initial_state: str
    horizon: int | None = None
    action_map: dict[str, str] = field(default_factory=dict)
    observation: np.ndarray | None = None

    def __post_init__(self):
        self.states = tuple(self.states)
        self.human_actions = tuple(self.human_actions)
        self.robot_actions = tuple(self.robot_actions)
        for name, items in (("states", self.states), ("human_actions", self.human_actions),
                            ("robot_actions", self.robot_actions)):
            if not items or len(set(items)) != len(items):
                raise InvalidArgumentError(f"{name} must be non-empty and unique")
        shape = (len(self.states), len(self.human_actions), len(self.robot_actions))
        self.transition = np.asarray(self.transition, dtype=np.intp)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        if self.transition.shape != shape or self.reward.shape != shape:
            raise InvalidArgumentError(f"transition and reward tables must have shape {shape}")
        if np.any(self.transition < 0) or np.any(self.transition >= len(self.states)):
            raise InvalidArgumentError("transition table points outside the state set")
        if not np.all(np.isfinite(self.reward)):
            raise InvalidArgumentError("reward table must be finite")
        if self.initial_state not in self.states:
            raise InvalidArgumentError(f"initial state {self.initial_state!r} is not a state")
        for sym, target in self.action_map.items():
            if target not in self.human_actions:
                raise InvalidArgumentError(f"action_map sends {sym!r} to unknown human action {target!r}")
        self._s = {s: i for i, s in enumerate(self.states)}
        self._h = {a: i for i, a in enumerate(self.human_actions)}
        self._r = {a: i for i, a in enumerate(self.robot_actions)}

    @classmethod
    def from_tables(cls, states, human_actions, robot_actions, transitions: Mapping, rewards: Mapping,
                    initial_state, **kw) -> "WorldModel":
        """Build from ``{(state, human, robot): next}`` and ``{(state, human, robot): reward}``."""
        S = {s: i for i, s in enumerate(states)}
        Hs = {a: i for i, a in enumerate(human_actions)}
        Rs = {a: i for i, a in enumerate(robot_actions)}
        shape = (len(S), len(Hs), len(Rs))
        T = np.full(shape, -1, dtype=np.intp)
        R = np.zeros(shape)
        for (s, h, r), nxt in transitions.items():
            T[S[s], Hs[h], Rs[r]] = S[nxt]
        for (s, h, r), val in rewards.items():
            R[S[s], Hs[h], Rs[r]] = val
        if np.any(T < 0):
            s, h, r = np.argwhere(T < 0)[0]
            raise InvalidArgumentError(
                f"transition missing for ({states[s]}, {human_actions[h]}, {robot_actions[r]})")
        return cls(states, human_actions, robot_actions, T, R, initial_state, **kw)

    def with_reward(self, reward: np.ndarray) -> "WorldModel":
        return WorldModel(self.states, self.human_actions, self.robot_actions, self.transition,
                          reward, self.initial_state, self.horizon, dict(self.action_map), self.observation)

    def human_index(self, action: str) -> int:
        try:
            return self._h[action]
        except KeyError:
            raise InvalidArgumentError(f"unknown human action {action!r}") from None

    def robot_index(self, action: str) -> int:
        try:
            return self._r[action]
        except KeyError:
            raise InvalidArgumentError(f"unknown robot action {action!r}") from None

    def map_predicted(self, symbol: str) -> str:
        target = self.action_map.get(symbol, symbol)
        if target not in self._h:
            raise InvalidArgumentError(f"predicted action {symbol!r} has no human-action mapping")
        return target


@dataclass(frozen=True)
class JointPlan:
    human: tuple[str, ...]
    robot: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "human", tuple(self.human))
        object.__setattr__(self, "robot", tuple(self.robot))
        if len(self.human) != len(self.robot):
            raise InvalidArgumentError(
                f"human ({len(self.human)}) and robot ({len(self.robot)}) sequences differ in length")


def _rollout(world: WorldModel, h_idx: Sequence[int], r_idx: Sequence[int]) -> float:
    s = world._s[world.initial_state]
    total = 0.0
    for h, r in zip(h_idx, r_idx):
        total += world.reward[s, h, r]
        s = world.transition[s, h, r]
    return float(total)


def total_reward(world: WorldModel, plan: JointPlan) -> float:
    return _rollout(world, [world.human_index(a) for a in plan.human],
                    [world.robot_index(a) for a in plan.robot])


def expected_reward_exhaustive(world: WorldModel, robot_seq: Sequence[str],
                               human_dist: Mapping[Sequence[str], float]) -> float:
    """Expected total reward under an explicit distribution over human sequences."""
    probs = list(human_dist.values())
    if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"human distribution must be non-negative and sum to 1, got {math.fsum(probs)}")
    r_idx = [world.robot_index(a) for a in robot_seq]
    terms = []
    for seq, p in human_dist.items():
        if len(seq) != len(r_idx):
            raise InvalidArgumentError("human sequence length differs from the robot sequence")
        terms.append(_rollout(world, [world.human_index(a) for a in seq], r_idx) * p)
    return math.fsum(terms)


def beam_human_sequences(world: WorldModel, beams: BeamSet) -> list[tuple[str, ...]]:
    if beams.vocabulary is None:
        return [tuple(world.human_actions[a] for a in b.actions) for b in beams]
    return [tuple(world.map_predicted(s) for s in beams.vocabulary.decode(b.actions)) for b in beams]


def _beam_terms(world, beams):
    if len(beams) == 0:
        raise InvalidArgumentError("beam set is empty; the estimate has no normalizer")
    seqs = [[world.human_index(a) for a in s] for s in beam_human_sequences(world, beams)]
    weights = np.array([b.log_prob for b in beams])
    # normalize in log space; a common factor on all beam probabilities cancels
    weights = np.exp(weights - weights.max())
    return seqs, weights


def _estimate(world, r_idx, seqs, weights) -> float:
    num = math.fsum(_rollout(world, h, r_idx) * w for h, w in zip(seqs, weights))
    return num / math.fsum(weights)


def expected_reward_beam(world: WorldModel, robot_seq: Sequence[str], beams: BeamSet) -> float:
    """Probability-weighted mean reward over the beams, normalized by their total mass."""
    seqs, weights = _beam_terms(world, beams)
    if any(len(h) != len(robot_seq) for h in seqs):
        raise InvalidArgumentError("beam horizon differs from the robot sequence length")
    return _estimate(world, [world.robot_index(a) for a in robot_seq], seqs, weights)


def select_robot_plan(world: WorldModel, beams: BeamSet, robot_actions: Sequence[str] | None = None,
                      horizon: int | None = None, cap: int = PLAN_CAP) -> tuple[tuple[str, ...], float]:
    """Robot sequence maximizing the beam estimate; the lexicographically first wins ties."""
    robot_actions = list(world.robot_actions if robot_actions is None else robot_actions)
    horizon = beams.horizon if horizon is None else horizon
    n = len(robot_actions) ** horizon
    if n > cap:
        raise ResourceLimitError(
            f"{len(robot_actions)} robot actions over horizon {horizon} give {n} plans, above the cap of {cap}")
    seqs, weights = _beam_terms(world, beams)
    if any(len(h) != horizon for h in seqs):
        raise InvalidArgumentError("beam horizon differs from the planning horizon")
    order = sorted(range(len(robot_actions)), key=lambda i: robot_actions[i])
    best, best_val = None, -math.inf
    for combo in itertools.product(order, repeat=horizon):
        plan = tuple(robot_actions[i] for i in combo)
        val = _estimate(world, [world.robot_index(a) for a in plan], seqs, weights)
        if val > best_val:
            best, best_val = plan, val
    return best, best_val


def example_scenario_path() -> Path:
    """The bundled handover world: 4 states, 3 human and 2 robot actions, horizon 2."""
    return Path(__file__).with_name("resources") / "handover.json"


def load_scenario(path) -> WorldModel:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path.name} is not valid JSON: {exc}") from None
    return scenario_from_dict(d)


def scenario_from_dict(d: dict) -> WorldModel:
    if not isinstance(d, dict) or d.get("format") != SCENARIO_FORMAT:
        raise SchemaError(f"scenario format must be {SCENARIO_FORMAT!r}")
    if d.get("version") != SCENARIO_VERSION:
        raise SchemaError(f"unsupported scenario version {d.get('version')!r}")
    known = {"format", "version", "states", "human_actions", "robot_actions", "initial_state", "horizon",
             "transitions", "rewards", "action_map", "observation"}
    unknown = set(d) - known
    if unknown:
        raise SchemaError(f"unknown scenario keys: {sorted(unknown)}")
    try:
        states, hs, rs = list(d["states"]), list(d["human_actions"]), list(d["robot_actions"])
        trans = {(t["state"], t["human"], t["robot"]): t["next"] for t in d["transitions"]}
        rew = {(t["state"], t["human"], t["robot"]): float(t["reward"]) for t in d.get("rewards", [])}
        for (s, h, r), nxt in trans.items():
            if s not in states or h not in hs or r not in rs or nxt not in states:
                raise SchemaError(f"transition ({s}, {h}, {r}) -> {nxt} uses an undeclared name")
        for (s, h, r) in rew:
            if s not in states or h not in hs or r not in rs:
                raise SchemaError(f"reward ({s}, {h}, {r}) uses an undeclared name")
        obs = d.get("observation")
        obs = None if obs is None else np.asarray(obs, dtype=np.float64)
        return WorldModel.from_tables(states, hs, rs, trans, rew, d["initial_state"],
                                      horizon=d.get("horizon"), action_map=dict(d.get("action_map", {})),
                                      observation=obs)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgumentError):
            raise SchemaError(str(exc)) from None
        raise SchemaError(f"malformed scenario: {exc!r}") from None


def scenario_to_dict(world: WorldModel) -> dict:
    trans, rew = [], []
    for s, h, r in itertools.product(range(len(world.states)), range(len(world.human_actions)),
                                     range(len(world.robot_actions))):
        key = {"state": world.states[s], "human": world.human_actions[h], "robot": world.robot_actions[r]}
        trans.append({**key, "next": world.states[world.transition[s, h, r]]})
        if world.reward[s, h, r] != 0.0:
            rew.append({**key, "reward": float(world.reward[s, h, r])})
    out = {"format": SCENARIO_FORMAT, "version": SCENARIO_VERSION, "states": list(world.states),
           "human_actions": list(world.human_actions), "robot_actions": list(world.robot_actions),
           "initial_state": world.initial_state, "horizon": world.horizon,
           "transitions": trans, "rewards": rew}
    if world.action_map:
        out["action_map"] = dict(world.action_map)
    if world.observation is not None:
        out["observation"] = world.observation.tolist()
    return out
