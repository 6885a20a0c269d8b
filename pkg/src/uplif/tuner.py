"""Q-learning structure tuner.

The agent observes a bucketed snapshot of the tree (height, granularity,
gap scaling, model count, backend), picks one of three maintenance actions
(keep / retrain-prune / convert backend), charges the action's cost into the
measured throughput of the following operation batch, and updates a tabular
Q function with the standard one-step Bellman rule.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from enum import IntEnum
from itertools import islice
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from .bmat import Backend, PerfMeasures
from .model import train

__all__ = [
    "Action",
    "State",
    "QTable",
    "AgentConfig",
    "StepReport",
    "QLearningTuner",
    "observe_state",
    "select_action",
    "reward",
    "update_q",
    "save_qtable",
    "load_qtable",
]


class Action(IntEnum):
    KEEP = 1
    RETRAIN = 2
    CONVERT = 3


ALL_ACTIONS: tuple[Action, ...] = (Action.KEEP, Action.RETRAIN, Action.CONVERT)

HEIGHT_BUCKET_WIDTH = 8
HEIGHT_BUCKET_MAX = 7
GRANULARITY_BUCKET_MAX = 20
ALPHA_THRESHOLDS = (1.0, 2.0, 4.0, 8.0)
MODEL_BUCKET_MAX = 6


@dataclass(frozen=True)
class State:
    s1_height: int
    s2_granularity: int
    s3_error_scaling: int
    s4_model_count: int
    s5_backend: int

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.s1_height, self.s2_granularity, self.s3_error_scaling,
                self.s4_model_count, self.s5_backend)


def observe_state(pm: PerfMeasures, backend: Backend) -> State:
    """Deterministic bucketing of the raw performance measures."""
    s1 = min(max(pm.height - 1, 0) // HEIGHT_BUCKET_WIDTH, HEIGHT_BUCKET_MAX)
    s2 = min(int(pm.granularity).bit_length(), GRANULARITY_BUCKET_MAX)
    s3 = sum(1 for t in ALPHA_THRESHOLDS if pm.error_scaling > t)
    s4 = min(len(str(max(pm.model_count, 1))) - 1, MODEL_BUCKET_MAX)
    s5 = 0 if backend is Backend.RBMAT else 1
    return State(s1, s2, s3, s4, s5)


class QTable:
    """State-action values with visit counts; missing entries read as 0."""

    def __init__(self):
        self.values: dict[tuple[tuple, int], float] = {}
        self.visits: dict[tuple[tuple, int], int] = {}

    def get(self, s: State, a: Action) -> float:
        return self.values.get((s.as_tuple(), int(a)), 0.0)

    def set(self, s: State, a: Action, value: float) -> None:
        self.values[(s.as_tuple(), int(a))] = value

    def visit(self, s: State, a: Action) -> None:
        key = (s.as_tuple(), int(a))
        self.visits[key] = self.visits.get(key, 0) + 1

    def best_value(self, s: State, actions: Sequence[Action] = ALL_ACTIONS) -> float:
        return max(self.get(s, a) for a in actions)

    def greedy_action(self, s: State, actions: Sequence[Action] = ALL_ACTIONS) -> Action:
        best = None
        best_v = None
        for a in sorted(actions):
            v = self.get(s, a)
            if best_v is None or v > best_v:
                best, best_v = a, v
        return best

    def states(self) -> set[tuple]:
        return {sk for sk, _ in self.values.keys()}

    def __len__(self) -> int:
        return len(self.values)


def select_action(
    q: QTable,
    s: State,
    available: Sequence[Action],
    epsilon: float,
    rng: random.Random,
) -> Action:
    """Epsilon-greedy choice; greedy ties break toward the lowest action."""
    if not available:
        raise ValueError("no available actions")
    if rng.random() < epsilon:
        return available[rng.randrange(len(available))]
    return q.greedy_action(s, available)


def reward(throughput: float, max_throughput: float, mem_used: float, total_mem: float, eta: float) -> float:
    """Weighted throughput share minus weighted memory share."""
    if max_throughput <= 0 or total_mem <= 0:
        raise ValueError("non-positive normalizer")
    return eta * (throughput / max_throughput) - (1.0 - eta) * (mem_used / total_mem)


def update_q(q: QTable, s: State, a: Action, r_next: float, s_next: State, alpha: float, gamma: float) -> None:
    """One-step Bellman update of Q(s, a)."""
    target = r_next + gamma * q.best_value(s_next)
    q.set(s, a, (1.0 - alpha) * q.get(s, a) + alpha * target)
    q.visit(s, a)


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 0.8
    gamma: float = 0.2
    epsilon: float = 1.0
    epsilon_decay: float = 0.99
    epsilon_min: float = 0.05
    eta: float = 0.7
    ops_per_step: int = 1000

    def __post_init__(self) -> None:
        for name in ("alpha", "gamma", "epsilon", "eta"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1]")
        if self.ops_per_step < 1:
            raise ValueError("ops_per_step must be >= 1")


@dataclass
class StepReport:
    state: State
    action: Action
    substituted: bool
    reward: float
    epsilon: float
    throughput: float
    memory_bytes: int
    ops_run: int
    elapsed: float


class QLearningTuner:
    """Drives observe / act / measure / update rounds against a live index.

    Normalizers for the reward are running maxima of the throughput and
    memory seen so far, keeping the reward within [-(1 - eta), eta].
    """

    def __init__(
        self,
        cfg: Optional[AgentConfig] = None,
        table: Optional[QTable] = None,
        allowed: Iterable[Action] = ALL_ACTIONS,
        seed: int = 0,
    ):
        self.cfg = cfg or AgentConfig()
        self.table = table or QTable()
        self.allowed = tuple(sorted(set(allowed)))
        if Action.KEEP not in self.allowed:
            raise ValueError("KEEP must stay available")
        self.rng = random.Random(seed)
        self.epsilon = self.cfg.epsilon
        self.max_throughput = 0.0
        self.max_memory = 0.0

    def available_actions(self, idx) -> list[Action]:
        acts = [Action.KEEP]
        if Action.RETRAIN in self.allowed and idx.bmat.height >= 2:
            acts.append(Action.RETRAIN)
        if Action.CONVERT in self.allowed:
            acts.append(Action.CONVERT)
        return acts

    def tuning_step(self, idx, op_source: Iterator) -> StepReport:
        s = observe_state(idx.bmat.stats(), idx.bmat.backend)
        available = self.available_actions(idx)
        action = select_action(self.table, s, available, self.epsilon, self.rng)

        substituted = False
        t0 = time.perf_counter()  # action cost is charged to this step
        try:
            self._execute(idx, action)
        except ValueError:
            action = Action.KEEP
            substituted = True

        ops = 0
        for op in islice(op_source, self.cfg.ops_per_step):
            apply_op(idx, op)
            ops += 1
        elapsed = time.perf_counter() - t0

        throughput = ops / elapsed if elapsed > 0 else 0.0
        memory = idx.memory_usage()
        self.max_throughput = max(self.max_throughput, throughput)
        self.max_memory = max(self.max_memory, float(memory))
        r = reward(throughput, max(self.max_throughput, 1e-9), memory, max(self.max_memory, 1.0), self.cfg.eta)

        s_next = observe_state(idx.bmat.stats(), idx.bmat.backend)
        update_q(self.table, s, action, r, s_next, self.cfg.alpha, self.cfg.gamma)
        self.epsilon = max(self.epsilon * self.cfg.epsilon_decay, self.cfg.epsilon_min)

        return StepReport(
            state=s,
            action=action,
            substituted=substituted,
            reward=r,
            epsilon=self.epsilon,
            throughput=throughput,
            memory_bytes=memory,
            ops_run=ops,
            elapsed=elapsed,
        )

    def _execute(self, idx, action: Action) -> None:
        if action is Action.KEEP:
            return
        if action is Action.RETRAIN:
            idx.bmat = idx.bmat.prune_retrain(train, idx.config.model_cfg)
            return
        target = Backend.BPMAT if idx.bmat.backend is Backend.RBMAT else Backend.RBMAT
        idx.bmat = idx.bmat.convert(target)


def apply_op(target, op: tuple):
    """Run one ('get' | 'insert' | 'remove') op against an index-like object."""
    kind = op[0]
    if kind == "get":
        return target.get(op[1])
    if kind == "insert":
        return target.insert(op[1], op[2])
    if kind == "remove":
        return target.remove(op[1])
    raise ValueError(f"unknown op kind: {kind!r}")


# -- persistence -------------------------------------------------------------


def save_qtable(q: QTable, path) -> None:
    """One record per line: s1,s2,s3,s4,s5,action,qvalue."""
    lines = ["# s1,s2,s3,s4,s5,action,qvalue"]
    for (st, a), v in sorted(q.values.items()):
        lines.append(f"{st[0]},{st[1]},{st[2]},{st[3]},{st[4]},{a},{v!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_qtable(path) -> QTable:
    q = QTable()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise ValueError(f"malformed q-table record at line {lineno}")
        try:
            s = State(*(int(p) for p in parts[:5]))
            a = Action(int(parts[5]))
            v = float(parts[6])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"malformed q-table record at line {lineno}") from exc
        q.set(s, a, v)
    return q
