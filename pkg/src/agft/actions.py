"""Frequency action space: construction, pruning and refinement."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Mapping, Protocol


@dataclass(frozen=True)
class FrequencyGrid:
    f_min: int = 210
    f_max: int = 1800
    step: int = 15

    def __post_init__(self):
        if not (self.step > 0 and self.f_min < self.f_max):
            raise ValueError(f"invalid grid {self}")
        if (self.f_max - self.f_min) % self.step:
            raise ValueError(f"grid span {self.f_max - self.f_min} not divisible by step {self.step}")

    def frequencies(self) -> list[int]:
        return list(range(self.f_min, self.f_max + 1, self.step))

    def contains(self, f) -> bool:
        return (isinstance(f, int) or float(f).is_integer()) and self.f_min <= f <= self.f_max \
            and (int(f) - self.f_min) % self.step == 0

    def validate(self, f) -> int:
        if not self.contains(f):
            raise ValueError(f"frequency {f} MHz is not on grid {self.f_min}..{self.f_max}/{self.step}")
        return int(f)

    def snap(self, f: float) -> int:
        k = round((f - self.f_min) / self.step)
        return int(min(max(self.f_min + k * self.step, self.f_min), self.f_max))


# Coarse grid for the no-grain ablation: 120 MHz spacing that still lands on
# the 15 MHz hardware grid and keeps f_max selectable.
COARSE_GRID = FrequencyGrid(240, 1800, 120)


class PruneCause(str, Enum):
    EXTREME = "Extreme"
    HISTORICAL = "Historical"
    CASCADE = "Cascade"
    REFINEMENT = "Refinement"


class ArmStats(Protocol):
    """What pruning and anchoring need from an arm (``bandit.ArmModel`` fits)."""

    frequency_mhz: int
    n: int
    reward_mean: float
    edp_mean: float


@dataclass(frozen=True)
class PruneRecord:
    frequency_mhz: int
    round: int
    cause: PruneCause


@dataclass(frozen=True)
class PruningConfig:
    extreme_round_limit: int = 60
    extreme_min_samples: int = 3
    extreme_reward_threshold: float = -1.2
    historical_min_round: int = 30
    historical_min_samples: int = 6
    cascade_fraction: float = 0.5
    historical_tolerance_k: float = 1.0

    def __post_init__(self):
        if min(self.extreme_round_limit, self.extreme_min_samples,
               self.historical_min_round, self.historical_min_samples) < 1:
            raise ValueError("pruning counts must be positive")
        if not math.isfinite(self.extreme_reward_threshold):
            raise ValueError("extreme_reward_threshold must be finite")
        if not 0.0 < self.cascade_fraction <= 1.0:
            raise ValueError("cascade_fraction must lie in (0, 1]")
        if self.historical_tolerance_k < 0:
            raise ValueError("historical_tolerance_k must be non-negative")


@dataclass(frozen=True)
class RefinementConfig:
    maturity_threshold: int = 100
    refine_radius: int = 150
    refine_step: int = 15
    statistical_min_samples: int = 4
    period: int = 25

    def __post_init__(self):
        if self.refine_step <= 0 or self.refine_radius < 0:
            raise ValueError("refine_step must be positive and refine_radius non-negative")
        if self.refine_radius % self.refine_step:
            raise ValueError("refine_radius must be divisible by refine_step")
        if self.maturity_threshold < 0 or self.statistical_min_samples < 1 or self.period < 1:
            raise ValueError("invalid refinement counts")


class RefinementMode(str, Enum):
    STATISTICAL = "Statistical"
    PREDICTIVE = "Predictive"


@dataclass
class ActionSpace:
    """Currently selectable arms plus the ledger of everything removed.

    ``pruned`` maps a frequency to the record that currently keeps it out;
    ``history`` keeps every record ever written, including ones later
    undone by refinement. ``events`` is the audit trail (one dict per
    prune, cascade or refine) that the harness writes as JSON lines.
    """

    grid: FrequencyGrid
    active: list[int]
    hardware_f_max: int | None = None
    pruned: dict[int, PruneRecord] = field(default_factory=dict)
    history: list[PruneRecord] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if not self.active:
            raise ValueError("action space cannot start empty")
        self.active = sorted(set(self.active))
        if self.hardware_f_max is None:
            self.hardware_f_max = self.grid.f_max

    def __contains__(self, f) -> bool:
        return f in self.active

    def __len__(self) -> int:
        return len(self.active)

    @property
    def extreme_pruned(self) -> set[int]:
        return {f for f, rec in self.pruned.items() if rec.cause is PruneCause.EXTREME}

    def _remove(self, freqs, round_: int, cause: PruneCause) -> list[int]:
        gone = [f for f in freqs if f in self.active]
        if not gone:
            return []
        keep = set(gone)
        self.active = [f for f in self.active if f not in keep]
        for f in gone:
            rec = PruneRecord(f, round_, cause)
            self.pruned[f] = rec
            self.history.append(rec)
        return gone

    def _log(self, round_: int, event: str, cause: str | None, freqs, anchor=None) -> None:
        self.events.append({"round": round_, "event": event, "cause": cause,
                            "frequencies": [int(f) for f in freqs],
                            "anchor": None if anchor is None else int(anchor)})

    def snapshot(self) -> dict:
        return {"active": list(self.active),
                "pruned": [{"frequency_mhz": r.frequency_mhz, "round": r.round, "cause": r.cause.value}
                           for r in sorted(self.pruned.values(), key=lambda r: r.frequency_mhz)],
                "grid": asdict(self.grid)}

    def write_audit(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")


def initial_space(grid: FrequencyGrid, hardware_f_max: int | None = None) -> ActionSpace:
    return ActionSpace(grid, grid.frequencies(), hardware_f_max)


def _best_by(cands: list[int], arms: Mapping[int, ArmStats], key) -> int:
    # lowest key wins; ties go to the lower frequency
    return min(cands, key=lambda f: (key(arms[f]), f))


def _protected(space: ActionSpace, cands: list[int], arms: Mapping[int, ArmStats], key) -> list[int]:
    """Drop one survivor from ``cands`` if removing them all would empty the space."""
    if cands and len(cands) >= len(space.active) and set(space.active) <= set(cands):
        keep = _best_by(cands, arms, key)
        return [f for f in cands if f != keep]
    return cands


def cascade_check(space: ActionSpace, pruned_freq: int, cfg: PruningConfig,
                  grid: FrequencyGrid | None = None, round_: int = 0) -> ActionSpace:
    """Remove every active arm below a pruned low frequency.

    Only fires when ``pruned_freq`` lies below ``cascade_fraction`` of the
    hardware maximum. A cascade that would leave no arm at or above
    ``pruned_freq`` is skipped, so the space never empties.
    """
    f_max = space.hardware_f_max if grid is None else grid.f_max
    if pruned_freq >= cfg.cascade_fraction * f_max:
        return space
    below = [f for f in space.active if f < pruned_freq]
    if not below:
        return space
    if len(below) == len(space.active):
        space._log(round_, "cascade_skipped", PruneCause.CASCADE.value, below, pruned_freq)
        return space
    gone = space._remove(below, round_, PruneCause.CASCADE)
    space._log(round_, "cascade", PruneCause.CASCADE.value, gone, pruned_freq)
    return space


def extreme_prune(space: ActionSpace, arms: Mapping[int, ArmStats], round_: int,
                  cfg: PruningConfig) -> ActionSpace:
    if round_ < 0:
        raise ValueError("round must be non-negative")
    if round_ >= cfg.extreme_round_limit:
        return space
    cands = [f for f in space.active if f in arms and arms[f].n >= cfg.extreme_min_samples
             and arms[f].reward_mean < cfg.extreme_reward_threshold]
    cands = _protected(space, cands, arms, lambda a: -a.reward_mean)
    gone = space._remove(cands, round_, PruneCause.EXTREME)
    if gone:
        space._log(round_, "prune", PruneCause.EXTREME.value, gone)
        for f in gone:
            cascade_check(space, f, cfg, None, round_)
    return space


def historical_prune(space: ActionSpace, arms: Mapping[int, ArmStats], round_: int,
                     cfg: PruningConfig) -> ActionSpace:
    if round_ < cfg.historical_min_round:
        return space
    sampled = [f for f in space.active if f in arms and arms[f].n >= cfg.historical_min_samples]
    if len(sampled) < 2:
        return space
    means = [arms[f].edp_mean for f in sampled]
    best = min(means)
    sigma = float(_pstdev(means))
    limit = best + cfg.historical_tolerance_k * sigma
    cands = [f for f, m in zip(sampled, means) if m > limit]
    cands = _protected(space, cands, arms, lambda a: a.edp_mean)
    gone = space._remove(cands, round_, PruneCause.HISTORICAL)
    if gone:
        space._log(round_, "prune", PruneCause.HISTORICAL.value, gone)
        for f in gone:
            cascade_check(space, f, cfg, None, round_)
    return space


def _pstdev(values) -> float:
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def statistical_anchor(arms: Mapping[int, ArmStats], cfg: RefinementConfig,
                       candidates=None) -> int | None:
    """Lowest mean-EDP arm among those with enough samples, or None."""
    pool = arms.keys() if candidates is None else [f for f in candidates if f in arms]
    ok = [f for f in pool if arms[f].n >= cfg.statistical_min_samples]
    if not ok:
        return None
    return _best_by(ok, arms, lambda a: a.edp_mean)


def predictive_anchor(arms, ctx, t: int, sched) -> int:
    """UCB maximizer over the given (active) arms."""
    from .bandit import select_ucb

    return select_ucb(arms, ctx, t, sched)


def choose_refinement_mode(round_: int, cfg: RefinementConfig) -> RefinementMode:
    return RefinementMode.STATISTICAL if round_ < cfg.maturity_threshold else RefinementMode.PREDICTIVE


def refine_window(anchor: int, cfg: RefinementConfig, grid: FrequencyGrid) -> list[int]:
    k = cfg.refine_radius // cfg.refine_step
    return sorted({min(max(anchor + i * cfg.refine_step, grid.f_min), grid.f_max) for i in range(-k, k + 1)})


def refine(space: ActionSpace, anchor: int, cfg: RefinementConfig, grid: FrequencyGrid | None = None,
           round_: int = 0) -> ActionSpace:
    """Regenerate the active set around ``anchor``.

    Extreme-pruned frequencies stay out. Frequencies leaving the active set
    are recorded with cause Refinement and may come back later.
    """
    grid = grid or space.grid
    if not grid.contains(anchor):
        raise ValueError(f"anchor {anchor} MHz is not on grid {grid}")
    banned = space.extreme_pruned
    if anchor in banned:
        live = [f for f in space.active if f not in banned]
        anchor = min(live, key=lambda f: (abs(f - anchor), f))
    new = [f for f in refine_window(anchor, cfg, grid) if f not in banned]
    if not new:
        space._log(round_, "refine_skipped", PruneCause.REFINEMENT.value, [], anchor)
        return space
    old = set(space.active)
    dropped = sorted(old - set(new))
    for f in new:
        space.pruned.pop(f, None)
    space.active = new
    for f in dropped:
        rec = PruneRecord(f, round_, PruneCause.REFINEMENT)
        space.pruned[f] = rec
        space.history.append(rec)
    space._log(round_, "refine", PruneCause.REFINEMENT.value, new, anchor)
    return space
