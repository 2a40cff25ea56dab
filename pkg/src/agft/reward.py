"""Energy-delay product and the EDP-to-reward mapping."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

REWARD_CLIP = (-2.0, 2.0)
WINDOW_CSV_COLUMNS = ("round", "freq_mhz", "energy_j", "ttft", "tpot", "e2e", "edp", "reward", "phase")
REPORT_METRICS = ("energy_joules", "edp", "ttft_mean", "tpot_mean", "e2e_mean")


def compute_edp(energy_joules: float, delay: float) -> float:
    if energy_joules < 0 or delay < 0:
        raise ValueError("energy and delay must be non-negative")
    return energy_joules * delay


@dataclass
class WindowOutcome:
    """Measured result of one decision window.

    Latency means are NaN when no request reached the corresponding phase
    boundary inside the window. ``edp`` uses the window's mean TPOT as the
    delay term.
    """

    energy_joules: float
    ttft_mean: float
    tpot_mean: float
    e2e_mean: float
    tokens_out: int
    edp: float = field(default=math.nan)
    busy_time: float = 0.0

    def __post_init__(self):
        if self.energy_joules < 0:
            raise ValueError("energy must be non-negative")
        tpot = 0.0 if math.isnan(self.tpot_mean) else self.tpot_mean
        if math.isnan(self.edp):
            self.edp = compute_edp(self.energy_joules, tpot)

    @property
    def idle(self) -> bool:
        return self.busy_time <= 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "WindowOutcome":
        nan = math.nan
        return cls(
            energy_joules=float(data["energy_joules"]),
            ttft_mean=_num(data.get("ttft_mean", nan)),
            tpot_mean=_num(data.get("tpot_mean", nan)),
            e2e_mean=_num(data.get("e2e_mean", nan)),
            tokens_out=int(data.get("tokens_out", 0)),
            edp=_num(data.get("edp", nan)),
            busy_time=float(data.get("busy_time", 0.0)),
        )


def _num(v) -> float:
    return math.nan if v is None else float(v)


class RewardScale:
    """Running-median EDP reference for reward normalization."""

    def __init__(self, window: int = 64, clip: tuple[float, float] = REWARD_CLIP):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.clip = clip
        self.history: deque[float] = deque(maxlen=window)

    @property
    def edp_reference(self) -> float | None:
        if not self.history:
            return None
        return float(np.median(self.history))

    def reward(self, edp: float, reference: float | None = None) -> float:
        """Reward for ``edp`` against a reference, without updating state."""
        ref = self.edp_reference if reference is None else reference
        if ref is None:
            return 0.0
        if ref <= 0:
            return self.clip[1] if edp <= 0 else self.clip[0]
        return float(np.clip(1.0 - edp / ref, *self.clip))

    def observe(self, edp: float) -> None:
        self.history.append(float(edp))

    def to_dict(self) -> dict:
        return {"window": self.window, "clip": list(self.clip), "history": list(self.history)}

    @classmethod
    def from_dict(cls, data: dict) -> "RewardScale":
        scale = cls(window=data["window"], clip=tuple(data["clip"]))
        scale.history.extend(data["history"])
        return scale


def reward_from_edp(edp: float, scale: RewardScale) -> float:
    """Map a window EDP to a bounded reward, then fold it into the reference.

    The first observed window bootstraps the reference and scores 0.
    """
    if edp < 0:
        raise ValueError("edp must be non-negative")
    r = scale.reward(edp)
    scale.observe(edp)
    return r


def _metric_values(outcomes: Sequence[WindowOutcome], name: str) -> np.ndarray:
    vals = np.array([getattr(o, name) for o in outcomes], dtype=float)
    return vals[~np.isnan(vals)]


def summarize(values: Iterable[float]) -> dict:
    """Mean and coefficient of variation (population stddev)."""
    v = np.asarray(list(values), dtype=float)
    v = v[~np.isnan(v)]
    if v.size == 0:
        return {"mean": None, "cv": None, "n": 0}
    mean = float(v.mean())
    cv = None if mean == 0 else float(v.std() / mean)
    return {"mean": mean, "cv": cv, "n": int(v.size)}


def aggregate_report(outcomes: Sequence[WindowOutcome], baseline: dict | None = None) -> dict:
    """Per-metric mean and CV, plus percent-difference columns against ``baseline``.

    ``baseline`` is another ``aggregate_report`` result.
    """
    if not outcomes:
        raise ValueError("aggregate_report needs at least one outcome")
    report = {}
    for name in REPORT_METRICS:
        row = summarize(_metric_values(outcomes, name))
        if baseline is not None:
            base = baseline[name]
            row["baseline_mean"] = base["mean"]
            row["baseline_cv"] = base["cv"]
            row["diff_pct"] = _pct(row["mean"], base["mean"])
            row["cv_diff_pct"] = _pct(row["cv"], base["cv"])
        report[name] = row
    return report


def _pct(value, base):
    if value is None or base is None or base == 0:
        return None
    return 100.0 * (value - base) / base


def write_window_rows(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=WINDOW_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in WINDOW_CSV_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v
