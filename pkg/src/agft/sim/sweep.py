"""Brute-force frequency sweep used as the ground-truth oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..actions import FrequencyGrid
from .engine import Simulator
from .models import HardwareConfig
from .workload import RequestStream, WorkloadConfig, generate_workload

COARSE_STEP = 60


@dataclass
class SweepResult:
    """Mean EDP (and friends) for every frequency that was evaluated."""

    preset: str
    points: dict[int, dict] = field(default_factory=dict)

    @property
    def frequencies(self) -> list[int]:
        return sorted(self.points)

    def edp_curve(self) -> tuple[np.ndarray, np.ndarray]:
        f = np.array(self.frequencies)
        return f, np.array([self.points[x]["edp"] for x in f])

    @property
    def argmin(self) -> int:
        f, e = self.edp_curve()
        return int(f[int(np.argmin(e))])

    @property
    def min_edp(self) -> float:
        return self.points[self.argmin]["edp"]

    def endpoint_margins(self) -> tuple[float, float]:
        """Fractional EDP reduction of the argmin relative to each grid endpoint."""
        f, e = self.edp_curve()
        best = e.min()
        return float(1 - best / e[0]), float(1 - best / e[-1])

    def to_dict(self) -> dict:
        return {"preset": self.preset, "argmin": self.argmin,
                "points": {str(k): v for k, v in sorted(self.points.items())}}


def evaluate_frequency(stream: RequestStream, f_mhz: int, hardware: HardwareConfig | None = None,
                       grid: FrequencyGrid | None = None, window_duration: float = 0.8) -> dict:
    """Serve ``stream`` at a locked clock; summarize over busy windows."""
    sim = Simulator(stream, hardware, grid, window_duration)
    res = sim.run_fixed(f_mhz)
    busy = [o for o in res.outcomes if not o.idle]
    ttft = np.array([r.ttft for r in res.requests])
    tpot = np.array([r.tpot for r in res.requests])
    return {
        "edp": float(np.mean([o.edp for o in busy])),
        "energy_joules": float(np.mean([o.energy_joules for o in busy])),
        "total_energy_joules": float(sum(o.energy_joules for o in res.outcomes)),
        "tpot_mean": float(np.nanmean(tpot)) if np.isfinite(tpot).any() else float("nan"),
        "ttft_mean": float(np.mean(ttft)),
        "windows": len(res.outcomes),
    }


def coarse_grid(grid: FrequencyGrid, step: int = COARSE_STEP) -> list[int]:
    if step % grid.step:
        raise ValueError("coarse step must be a multiple of the grid step")
    freqs = list(range(grid.f_min, grid.f_max + 1, step))
    if freqs[-1] != grid.f_max:
        freqs.append(grid.f_max)
    return freqs


def sweep_oracle(cfg: WorkloadConfig | RequestStream, grid: FrequencyGrid | None = None,
                 requests: int = 500, seed: int = 0, hardware: HardwareConfig | None = None,
                 coarse_step: int = COARSE_STEP, refine: bool = True,
                 window_duration: float = 0.8) -> SweepResult:
    """Locate the EDP-minimizing locked frequency for a workload.

    A coarse pass visits every ``coarse_step`` MHz plus both endpoints. With
    ``refine`` the neighbourhood of the coarse minimum is then filled in at
    the native grid step.
    """
    grid = grid or FrequencyGrid()
    if isinstance(cfg, RequestStream):
        stream, name = cfg, "trace"
    else:
        stream, name = generate_workload(cfg.with_count(requests), seed), cfg.name
    result = SweepResult(name)

    def visit(freqs):
        for f in freqs:
            if f not in result.points:
                result.points[f] = evaluate_frequency(stream, f, hardware, grid, window_duration)

    visit(coarse_grid(grid, coarse_step))
    if refine:
        best = result.argmin
        lo = max(grid.f_min, best - coarse_step)
        hi = min(grid.f_max, best + coarse_step)
        visit(range(lo, hi + 1, grid.step))
    return result
