"""Disjoint LinUCB over frequency arms, plus the Page-Hinkley stability gate."""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .telemetry import N_FEATURES

STATE_VERSION = 1
DECISION_CSV_COLUMNS = ("round", "context", "chosen_freq", "reward", "phase")


def _vec(ctx) -> np.ndarray:
    x = np.asarray(ctx, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("context must be finite")
    return x


class ArmModel:
    """Ridge-regression reward model for one frequency (identity prior)."""

    __slots__ = ("frequency_mhz", "A", "b", "theta", "n", "reward_mean", "reward_m2", "edp_mean", "edp_n")

    def __init__(self, frequency_mhz: int, dim: int = N_FEATURES):
        self.frequency_mhz = int(frequency_mhz)
        self.A = np.eye(dim)
        self.b = np.zeros(dim)
        self.theta = np.zeros(dim)
        self.n = 0
        self.reward_mean = 0.0
        self.reward_m2 = 0.0
        self.edp_mean = math.nan
        self.edp_n = 0

    @property
    def dim(self) -> int:
        return len(self.b)

    @property
    def reward_var(self) -> float:
        return self.reward_m2 / self.n if self.n else 0.0

    def observe_edp(self, edp: float) -> None:
        self.edp_n += 1
        if self.edp_n == 1:
            self.edp_mean = float(edp)
        else:
            self.edp_mean += (edp - self.edp_mean) / self.edp_n

    def to_dict(self) -> dict:
        return {"frequency_mhz": self.frequency_mhz, "A": self.A.tolist(), "b": self.b.tolist(),
                "theta": self.theta.tolist(), "n": self.n, "reward_mean": self.reward_mean,
                "reward_m2": self.reward_m2, "edp_mean": None if math.isnan(self.edp_mean) else self.edp_mean,
                "edp_n": self.edp_n}

    @classmethod
    def from_dict(cls, d: dict) -> "ArmModel":
        arm = cls(d["frequency_mhz"], len(d["b"]))
        arm.A = np.array(d["A"], dtype=float)
        arm.b = np.array(d["b"], dtype=float)
        arm.theta = np.array(d["theta"], dtype=float)
        arm.n = int(d["n"])
        arm.reward_mean = float(d["reward_mean"])
        arm.reward_m2 = float(d["reward_m2"])
        arm.edp_mean = math.nan if d.get("edp_mean") is None else float(d["edp_mean"])
        arm.edp_n = int(d.get("edp_n", 0))
        return arm

    def __repr__(self) -> str:
        return f"ArmModel({self.frequency_mhz} MHz, n={self.n}, r={self.reward_mean:.3f})"


@dataclass(frozen=True)
class ExplorationSchedule:
    alpha0: float = 1.0
    decay_horizon: float = 200.0

    def __post_init__(self):
        if self.alpha0 < 0 or self.decay_horizon <= 0:
            raise ValueError("alpha0 must be >= 0 and decay_horizon > 0")

    def alpha(self, t: int) -> float:
        return self.alpha0 / math.sqrt(1.0 + t / self.decay_horizon)


def predict(arm: ArmModel, ctx) -> float:
    return float(arm.theta @ _vec(ctx))


def ucb_score(arm: ArmModel, x: np.ndarray, alpha: float) -> float:
    bonus = 0.0
    if alpha:
        bonus = alpha * math.sqrt(max(float(x @ np.linalg.solve(arm.A, x)), 0.0))
    return float(arm.theta @ x) + bonus


def _argmax_low(arms: Sequence[ArmModel], scores: Iterable[float]) -> int:
    best_f, best_s = None, -math.inf
    for arm, s in zip(arms, scores):
        f = arm.frequency_mhz
        if s > best_s or (s == best_s and f < best_f):
            best_f, best_s = f, s
    return best_f


def _as_list(arms) -> list[ArmModel]:
    arms = list(arms.values()) if isinstance(arms, dict) else list(arms)
    if not arms:
        raise ValueError("no arms to choose from")
    return arms


def select_ucb(arms, ctx, t: int, sched: ExplorationSchedule) -> int:
    arms = _as_list(arms)
    x = _vec(ctx)
    a = sched.alpha(t)
    return _argmax_low(arms, (ucb_score(arm, x, a) for arm in arms))


def select_greedy(arms, ctx) -> int:
    arms = _as_list(arms)
    x = _vec(ctx)
    return _argmax_low(arms, (float(arm.theta @ x) for arm in arms))


def update_arm(arm: ArmModel, ctx, reward: float) -> ArmModel:
    """Rank-one ridge update in place; theta is re-solved rather than inverted."""
    x = _vec(ctx)
    if not math.isfinite(reward):
        raise ValueError("reward must be finite")
    arm.A += np.outer(x, x)
    arm.b += reward * x
    arm.theta = np.linalg.solve(arm.A, arm.b)
    arm.n += 1
    delta = reward - arm.reward_mean
    arm.reward_mean += delta / arm.n
    arm.reward_m2 += delta * (reward - arm.reward_mean)
    return arm


class StabilityDetector:
    """Page-Hinkley test on the reward stream plus a quiet-window rule.

    The upward statistic accumulates ``r_t - mean_t - delta``; an alarm
    fires when it climbs more than ``lam`` above its running minimum. With
    ``two_sided`` the mirrored statistic ``r_t - mean_t + delta`` is watched
    for a fall of more than ``lam`` below its running maximum as well. The
    stream counts as stable once ``window`` rewards pass without an alarm.
    """

    def __init__(self, delta: float = 0.005, lam: float = 0.25, window: int = 50,
                 two_sided: bool = True):
        if delta < 0 or lam <= 0 or window < 1:
            raise ValueError("invalid Page-Hinkley parameters")
        self.delta = delta
        self.lam = lam
        self.window = window
        self.two_sided = two_sided
        self.reset()

    def reset(self) -> None:
        self.count = 0
        self.mean = 0.0
        self.cumulative_deviation = 0.0
        self.min_deviation = 0.0
        self.down_deviation = 0.0
        self.max_down_deviation = 0.0
        self.quiet = 0
        self.alarms = 0
        self.recent: deque[float] = deque(maxlen=self.window)

    def update(self, reward: float) -> tuple[bool, bool]:
        """Fold one reward in; returns (alarm, stable)."""
        self.count += 1
        self.mean += (reward - self.mean) / self.count
        self.cumulative_deviation += reward - self.mean - self.delta
        self.min_deviation = min(self.min_deviation, self.cumulative_deviation)
        self.recent.append(float(reward))
        alarm = self.cumulative_deviation - self.min_deviation > self.lam
        if self.two_sided:
            self.down_deviation += reward - self.mean + self.delta
            self.max_down_deviation = max(self.max_down_deviation, self.down_deviation)
            alarm = alarm or self.max_down_deviation - self.down_deviation > self.lam
        if alarm:
            self.alarms += 1
            self.quiet = 0
            # restart the statistics so one shift raises one alarm
            self.count = 0
            self.mean = 0.0
            self.cumulative_deviation = self.min_deviation = 0.0
            self.down_deviation = self.max_down_deviation = 0.0
        else:
            self.quiet += 1
        return alarm, self.quiet >= self.window

    @property
    def stable(self) -> bool:
        return self.quiet >= self.window

    def to_dict(self) -> dict:
        return {"delta": self.delta, "lam": self.lam, "window": self.window, "two_sided": self.two_sided,
                "count": self.count, "mean": self.mean, "cumulative_deviation": self.cumulative_deviation,
                "min_deviation": self.min_deviation, "down_deviation": self.down_deviation,
                "max_down_deviation": self.max_down_deviation, "quiet": self.quiet, "alarms": self.alarms,
                "recent": list(self.recent)}

    @classmethod
    def from_dict(cls, d: dict) -> "StabilityDetector":
        det = cls(d["delta"], d["lam"], d["window"], d.get("two_sided", True))
        for k in ("count", "mean", "cumulative_deviation", "min_deviation", "down_deviation",
                  "max_down_deviation", "quiet", "alarms"):
            setattr(det, k, d[k])
        det.recent.extend(d["recent"])
        return det


def observe_reward(det: StabilityDetector, reward: float) -> tuple[StabilityDetector, bool]:
    _, stable = det.update(reward)
    return det, stable


class Phase(str, Enum):
    EXPLORATION = "Exploration"
    EXPLOITATION = "Exploitation"


@dataclass
class BanditPhase:
    phase: Phase = Phase.EXPLORATION
    transition_round: int | None = None
    history: list[tuple[int, str]] = field(default_factory=list)

    def converge(self, round_: int) -> None:
        if self.phase is Phase.EXPLORATION:
            self.phase = Phase.EXPLOITATION
            self.transition_round = round_
            self.history.append((round_, Phase.EXPLOITATION.value))

    def reopen(self, round_: int) -> None:
        if self.phase is Phase.EXPLOITATION:
            self.phase = Phase.EXPLORATION
            self.history.append((round_, Phase.EXPLORATION.value))


class LinUCBAgent:
    """All arms ever seen, the phase machine and the stability detector."""

    def __init__(self, schedule: ExplorationSchedule | None = None,
                 detector: StabilityDetector | None = None, dim: int = N_FEATURES):
        self.schedule = schedule or ExplorationSchedule()
        self.detector = detector or StabilityDetector()
        self.phase = BanditPhase()
        self.arms: dict[int, ArmModel] = {}
        self.dim = dim
        self.round = 0

    def arm(self, f: int) -> ArmModel:
        a = self.arms.get(f)
        if a is None:
            a = self.arms[f] = ArmModel(f, self.dim)
        return a

    def subset(self, freqs: Iterable[int]) -> dict[int, ArmModel]:
        return {f: self.arm(f) for f in freqs}

    def select(self, active: Iterable[int], ctx) -> int:
        arms = self.subset(active)
        if self.phase.phase is Phase.EXPLOITATION:
            # an arm that was never played has no prediction, only its zero prior
            trained = {f: a for f, a in arms.items() if a.n > 0}
            return select_greedy(trained or arms, ctx)
        return select_ucb(arms, ctx, self.round, self.schedule)

    def learn(self, f: int, ctx, reward: float, edp: float | None = None) -> tuple[bool, bool]:
        """Update the chosen arm and the phase; returns (drift alarm, stable)."""
        arm = self.arm(f)
        update_arm(arm, ctx, reward)
        if edp is not None:
            arm.observe_edp(edp)
        alarm, stable = self.detector.update(reward)
        if self.phase.phase is Phase.EXPLORATION and stable:
            self.phase.converge(self.round)
        elif self.phase.phase is Phase.EXPLOITATION and alarm:
            self.phase.reopen(self.round)
            self.detector.reset()
        return alarm, stable

    def to_dict(self) -> dict:
        return {
            "version": STATE_VERSION,
            "round": self.round,
            "schedule": {"alpha0": self.schedule.alpha0, "decay_horizon": self.schedule.decay_horizon},
            "phase": {"phase": self.phase.phase.value, "transition_round": self.phase.transition_round,
                      "history": [list(h) for h in self.phase.history]},
            "detector": self.detector.to_dict(),
            "arms": [self.arms[f].to_dict() for f in sorted(self.arms)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LinUCBAgent":
        if d.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported bandit state version {d.get('version')!r}")
        agent = cls(ExplorationSchedule(**d["schedule"]), StabilityDetector.from_dict(d["detector"]))
        agent.round = int(d["round"])
        p = d["phase"]
        agent.phase = BanditPhase(Phase(p["phase"]), p["transition_round"], [tuple(h) for h in p["history"]])
        for ad in d["arms"]:
            arm = ArmModel.from_dict(ad)
            agent.arms[arm.frequency_mhz] = arm
        if agent.arms:
            agent.dim = next(iter(agent.arms.values())).dim
        return agent

    @classmethod
    def from_json(cls, text: str) -> "LinUCBAgent":
        return cls.from_dict(json.loads(text))


def write_decisions(path, rows: Iterable[dict]) -> None:
    """Decision log; the context column holds the normalized vector joined by ';'."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DECISION_CSV_COLUMNS)
        for r in rows:
            ctx = ";".join(repr(float(v)) for v in r["context"])
            w.writerow([r["round"], ctx, r["chosen_freq"], repr(float(r["reward"])), r["phase"]])
