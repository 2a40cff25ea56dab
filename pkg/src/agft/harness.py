"""Tuning sessions, baselines, ablations and their reports."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .actions import (COARSE_GRID, ActionSpace, FrequencyGrid, PruningConfig, RefinementConfig,
                      RefinementMode, choose_refinement_mode, extreme_prune, historical_prune,
                      initial_space, predictive_anchor, refine, statistical_anchor)
from .bandit import ExplorationSchedule, LinUCBAgent, Phase, StabilityDetector, write_decisions
from .environment import Environment, EnvironmentTerminated, SimulatorEnvironment
from .reward import (REPORT_METRICS, RewardScale, WindowOutcome, aggregate_report, reward_from_edp,
                     write_window_rows)
from .sim.models import HardwareConfig
from .sim.sweep import sweep_oracle
from .sim.workload import RequestStream, generate_workload, get_preset, load_trace_csv
from .telemetry import calibrate_bounds, extract_context, identity_bounds, normalize

log = logging.getLogger(__name__)

HARDWARE_GRID = FrequencyGrid()
ROLLING_WINDOW = 50


class ConfigError(ValueError):
    """Invalid or incomplete session configuration."""


@dataclass
class SessionConfig:
    preset: str | None = "normal"
    trace_path: str | None = None
    seed: int = 0
    rounds: int = 600
    warmup_rounds: int = 20
    window_duration: float = 0.8
    drain: bool = False
    arrival_rate: float | None = None
    alpha0: float = 1.0
    decay_horizon: float = 200.0
    ph_delta: float = 0.005
    ph_lambda: float = 0.25
    ph_two_sided: bool = True
    stability_window: int = 50
    reward_window: int = 64
    pruning: PruningConfig = field(default_factory=PruningConfig)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    disable_pruning: bool = False
    disable_fine_grained: bool = False
    disable_refinement: bool = False
    baseline: str = "none"
    hardware: HardwareConfig = field(default_factory=HardwareConfig)

    def __post_init__(self):
        if (self.preset is None) == (self.trace_path is None):
            raise ConfigError("exactly one of preset and trace_path must be set")
        if self.rounds < 1 or self.warmup_rounds < 1:
            raise ConfigError("rounds and warmup_rounds must be >= 1")
        self.baseline_frequency()  # validates the baseline string

    def baseline_frequency(self) -> int | None:
        b = self.baseline
        if b == "none":
            return None
        if b in ("max", "default_unlocked"):
            return HARDWARE_GRID.f_max
        if b.startswith("fixed:"):
            try:
                return HARDWARE_GRID.validate(int(b.split(":", 1)[1]))
            except ValueError as exc:
                raise ConfigError(f"bad baseline {b!r}: {exc}") from None
        raise ConfigError(f"baseline must be none, max or fixed:MHZ, not {b!r}")

    @property
    def label(self) -> str:
        if self.baseline != "none":
            return f"baseline-{self.baseline.replace(':', '-')}"
        off = [n for n, flag in (("no-pruning", self.disable_pruning), ("no-grain", self.disable_fine_grained),
                                 ("no-refinement", self.disable_refinement)) if flag]
        return "+".join(off) or "full"

    def workload_stream(self) -> RequestStream:
        if self.trace_path is not None:
            return load_trace_csv(self.trace_path, seed=self.seed)
        try:
            wl = get_preset(self.preset)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        if self.arrival_rate is not None:
            wl = replace(wl, arrival_rate=self.arrival_rate)
        horizon = (self.warmup_rounds + self.rounds) * self.window_duration
        return generate_workload(wl.with_duration(horizon), self.seed)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["pruning"] = asdict(self.pruning)
        d["refinement"] = asdict(self.refinement)
        d["hardware"] = self.hardware.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SessionConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(data)
        try:
            if "pruning" in d:
                d["pruning"] = PruningConfig(**d["pruning"])
            if "refinement" in d:
                d["refinement"] = RefinementConfig(**d["refinement"])
            if "hardware" in d:
                d["hardware"] = HardwareConfig.from_dict(d["hardware"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "SessionConfig":
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def _grids(cfg: SessionConfig) -> tuple[FrequencyGrid, RefinementConfig]:
    if cfg.disable_fine_grained:
        # coarse arms, and refinement that stays on the coarse lattice
        return COARSE_GRID, replace(cfg.refinement, refine_step=COARSE_GRID.step,
                                    refine_radius=2 * COARSE_GRID.step)
    return HARDWARE_GRID, cfg.refinement


@dataclass
class SessionReport:
    config: SessionConfig
    decisions: list[dict]
    windows: list[dict]
    outcomes: list[WindowOutcome]
    pruning_events: list[dict]
    convergence_round: int | None
    converged_frequency: int | None
    final_active: list[int]
    agent_state: dict | None = None

    @property
    def tuning_outcomes(self) -> list[WindowOutcome]:
        return [o for o, w in zip(self.outcomes, self.windows) if w["round"] >= 0]

    def phase_outcomes(self, post: bool) -> list[WindowOutcome]:
        c = self.convergence_round
        out = []
        for o, w in zip(self.outcomes, self.windows):
            r = w["round"]
            if r < 0:
                continue
            is_post = c is not None and r > c
            if is_post == post:
                out.append(o)
        return out

    def reward_series(self, window: int = ROLLING_WINDOW) -> dict:
        r = np.array([d["reward"] for d in self.decisions if d["round"] >= 0 and d.get("learned", True)])
        mean, std = [], []
        for i in range(len(r)):
            seg = r[max(0, i - window + 1): i + 1]
            mean.append(float(seg.mean()))
            std.append(float(seg.std()))
        return {"reward": r.tolist(), "rolling_mean": mean, "rolling_std": std}

    def cumulative(self) -> dict:
        e = np.cumsum([o.energy_joules for o in self.outcomes])
        p = np.cumsum([o.edp for o in self.outcomes])
        return {"energy_joules": e.tolist(), "edp": p.tolist()}

    def totals(self) -> dict:
        out = self.outcomes
        ttft = [o.ttft_mean for o in out if not math.isnan(o.ttft_mean)]
        tpot = [o.tpot_mean for o in out if not o.idle and not math.isnan(o.tpot_mean)]
        return {
            "windows": len(out),
            "energy_joules": float(sum(o.energy_joules for o in out)),
            "edp": float(sum(o.edp for o in out)),
            "ttft_mean": float(np.mean(ttft)) if ttft else None,
            "tpot_mean": float(np.mean(tpot)) if tpot else None,
        }

    def to_dict(self) -> dict:
        pre, post = self.phase_outcomes(False), self.phase_outcomes(True)
        rs = self.reward_series()
        return {
            "label": self.config.label,
            "preset": self.config.preset,
            "seed": self.config.seed,
            "rounds": sum(1 for d in self.decisions if d["round"] >= 0),
            "convergence_round": self.convergence_round,
            "converged_frequency": self.converged_frequency,
            "final_active": self.final_active,
            "totals": self.totals(),
            "pre_convergence": aggregate_report(pre) if pre else None,
            "post_convergence": aggregate_report(post) if post else None,
            "session": aggregate_report(self.tuning_outcomes),
            "pruning_event_count": len(self.pruning_events),
            "reward_statistics": {"rolling_window": ROLLING_WINDOW,
                                  "rolling_mean": rs["rolling_mean"], "rolling_std": rs["rolling_std"]},
        }

    def write(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")
        write_decisions(d / "decisions.csv", self.decisions)
        write_window_rows(d / "windows.csv", self.windows)
        with open(d / "pruning.jsonl", "w") as fh:
            for ev in self.pruning_events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
        (d / "report.json").write_text(json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True) + "\n")
        return d


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def make_environment(cfg: SessionConfig) -> SimulatorEnvironment:
    max_windows = None if cfg.drain else cfg.warmup_rounds + cfg.rounds
    return SimulatorEnvironment(cfg.workload_stream(), cfg.hardware, HARDWARE_GRID,
                                cfg.window_duration, HARDWARE_GRID.f_max, max_windows)


class Controller:
    """One tuning loop: decide, apply, measure, learn, prune, refine."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self.grid, self.refine_cfg = _grids(cfg)
        self.space: ActionSpace = initial_space(self.grid, HARDWARE_GRID.f_max)
        self.agent = LinUCBAgent(ExplorationSchedule(cfg.alpha0, cfg.decay_horizon),
                                 StabilityDetector(cfg.ph_delta, cfg.ph_lambda, cfg.stability_window,
                                                   cfg.ph_two_sided))
        self.scale = RewardScale(cfg.reward_window)
        self.bounds = identity_bounds()
        self.fixed = cfg.baseline_frequency()

    def calibrate(self, warmup_snapshots) -> None:
        self.bounds = calibrate_bounds([extract_context(s) for s in warmup_snapshots])

    def context(self, snap):
        return normalize(extract_context(snap), self.bounds)

    def choose(self, ctx) -> int:
        if self.fixed is not None:
            return self.fixed
        return self.agent.select(self.space.active, ctx)

    def learn(self, round_: int, f: int, ctx, outcome: WindowOutcome) -> tuple[float, bool]:
        """Returns (reward, whether the bandit was updated)."""
        reward = reward_from_edp(outcome.edp, self.scale)
        if self.fixed is not None or outcome.idle:
            return reward, False
        if not self.scale.history or len(self.scale.history) == 1:
            # the very first busy window only seeds the reward reference
            return reward, False
        before = self.agent.phase.phase
        self.agent.round = round_
        self.agent.learn(f, np.asarray(ctx), reward, outcome.edp)
        converged_now = before is Phase.EXPLORATION and self.agent.phase.phase is Phase.EXPLOITATION
        self._prune(round_)
        self._maybe_refine(round_, ctx, converged_now)
        return reward, True

    def _prune(self, round_: int) -> None:
        if self.cfg.disable_pruning:
            return
        arms = self.agent.subset(self.space.active)
        extreme_prune(self.space, arms, round_, self.cfg.pruning)
        historical_prune(self.space, self.agent.subset(self.space.active), round_, self.cfg.pruning)

    def _maybe_refine(self, round_: int, ctx, phase_changed: bool) -> None:
        rc = self.refine_cfg
        if self.cfg.disable_refinement or round_ == 0:
            return
        periodic = round_ % rc.period == 0 and self.agent.phase.phase is Phase.EXPLORATION
        if not (phase_changed or periodic):
            return
        mode = choose_refinement_mode(round_, rc)
        if mode is RefinementMode.STATISTICAL:
            anchor = statistical_anchor(self.agent.arms, rc,
                                        candidates=[f for f in self.agent.arms if f not in self.space.extreme_pruned])
        else:
            anchor = predictive_anchor(self.agent.subset(self.space.active), ctx, round_, self.agent.schedule)
        if anchor is None:
            return
        refine(self.space, anchor, rc, self.grid, round_)


def run_session(cfg: SessionConfig, env: Environment | None = None) -> SessionReport:
    env = env or make_environment(cfg)
    ctl = Controller(cfg)
    decisions, windows, outcomes = [], [], []
    agent = ctl.agent
    f_warm = HARDWARE_GRID.f_max

    def record(round_, f, snap, out, reward, phase, ctx, learned):
        outcomes.append(out)
        windows.append({"round": round_, "freq_mhz": f, "energy_j": out.energy_joules,
                        "ttft": out.ttft_mean, "tpot": out.tpot_mean, "e2e": out.e2e_mean,
                        "edp": out.edp, "reward": reward, "phase": phase})
        if round_ >= 0:
            decisions.append({"round": round_, "context": np.asarray(ctx).tolist(), "chosen_freq": f,
                              "reward": reward, "phase": phase, "learned": learned})

    try:
        warm_snaps = []
        env.apply_frequency(f_warm)
        for w in range(cfg.warmup_rounds):
            snap, out = env.observe()
            warm_snaps.append(snap)
            reward = reward_from_edp(out.edp, ctl.scale) if not out.idle else 0.0
            record(w - cfg.warmup_rounds, f_warm, snap, out, reward, "Warmup", None, False)
        ctl.calibrate(warm_snaps)
        ctx = ctl.context(warm_snaps[-1])
        round_ = 0
        while cfg.drain or round_ < cfg.rounds:
            f = ctl.choose(ctx)
            env.apply_frequency(f)
            phase = "Baseline" if ctl.fixed is not None else agent.phase.phase.value
            snap, out = env.observe()
            reward, learned = ctl.learn(round_, f, ctx, out)
            record(round_, f, snap, out, reward, phase, ctx, learned)
            ctx = ctl.context(snap)
            round_ += 1
    except EnvironmentTerminated as exc:
        log.info("session ended: %s", exc)
    finally:
        env.close()

    conv = agent.phase.transition_round if ctl.fixed is None else None
    return SessionReport(cfg, decisions, windows, outcomes, list(ctl.space.events), conv,
                         _converged_frequency(decisions, conv, ctl.fixed), list(ctl.space.active),
                         agent.to_dict() if ctl.fixed is None else None)


def _converged_frequency(decisions, conv, fixed) -> int | None:
    if fixed is not None:
        return fixed
    if not decisions:
        return None
    picks = [d["chosen_freq"] for d in decisions if conv is not None and d["round"] > conv]
    if not picks:
        picks = [d["chosen_freq"] for d in decisions[-100:]]
    counts = Counter(picks)
    top = max(counts.values())
    return min(f for f, c in counts.items() if c == top)


def compare_reports(tuned: SessionReport, base: SessionReport) -> dict:
    """Percent change of the tuned run against the baseline, per metric."""
    if not tuned.config.workload_stream().equals(base.config.workload_stream()):
        raise ConfigError("comparison requires the same request trace in both sessions")
    t, b = tuned.totals(), base.totals()
    diffs = {}
    for k in ("energy_joules", "edp", "ttft_mean", "tpot_mean"):
        if t[k] is None or b[k] in (None, 0):
            diffs[k] = None
        else:
            diffs[k] = 100.0 * (t[k] - b[k]) / b[k]
    per_window = aggregate_report(tuned.tuning_outcomes, aggregate_report(base.tuning_outcomes))
    post = tuned.phase_outcomes(True)
    post_rounds = {w["round"] for w in tuned.windows if tuned.convergence_round is not None
                   and w["round"] > tuned.convergence_round}
    base_post = [o for o, w in zip(base.outcomes, base.windows) if w["round"] in post_rounds]
    post_diff = aggregate_report(post, aggregate_report(base_post)) if post and base_post else None
    return {"tuned": tuned.config.label, "baseline": base.config.label,
            "totals": {"tuned": t, "baseline": b, "diff_pct": diffs},
            "per_window": per_window, "post_convergence": post_diff}


@dataclass
class Comparison:
    tuned: SessionReport
    baseline: SessionReport
    summary: dict

    def cumulative_rows(self) -> list[dict]:
        a, b = self.tuned.cumulative(), self.baseline.cumulative()
        n = max(len(a["energy_joules"]), len(b["energy_joules"]))

        def at(seq, i):
            return seq[min(i, len(seq) - 1)]

        return [{"window": i,
                 "energy_tuned": at(a["energy_joules"], i), "energy_baseline": at(b["energy_joules"], i),
                 "edp_tuned": at(a["edp"], i), "edp_baseline": at(b["edp"], i)} for i in range(n)]

    def write(self, directory) -> Path:
        d = Path(directory)
        self.tuned.write(d / self.tuned.config.label)
        self.baseline.write(d / self.baseline.config.label)
        rows = self.cumulative_rows()
        with open(d / "cumulative_series.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
        (d / "comparison.json").write_text(json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n")
        return d


def run_comparison(cfg: SessionConfig, baseline_cfg: SessionConfig) -> Comparison:
    if (cfg.preset, cfg.trace_path, cfg.seed, cfg.rounds, cfg.warmup_rounds, cfg.arrival_rate) != \
            (baseline_cfg.preset, baseline_cfg.trace_path, baseline_cfg.seed, baseline_cfg.rounds,
             baseline_cfg.warmup_rounds, baseline_cfg.arrival_rate):
        raise ConfigError("comparison requires identical workload source, seed and length")
    tuned = run_session(cfg)
    base = run_session(baseline_cfg)
    return Comparison(tuned, base, compare_reports(tuned, base))


def baseline_of(cfg: SessionConfig, mode: str = "max") -> SessionConfig:
    return replace(cfg, baseline=mode, disable_pruning=False, disable_fine_grained=False,
                   disable_refinement=False)


ABLATIONS = {
    "full": {},
    "no-grain": {"disable_fine_grained": True},
    "no-pruning": {"disable_pruning": True},
}


STABLE_FALLBACK_ROUNDS = 100


def stable_outcomes(report: SessionReport) -> list[WindowOutcome]:
    """Windows after convergence, or the last 100 rounds when the run never converged."""
    if report.convergence_round is not None:
        return report.phase_outcomes(True)
    return report.tuning_outcomes[-STABLE_FALLBACK_ROUNDS:]


def edp_cv(report: SessionReport, stable: bool = False) -> float:
    """EDP coefficient of variation over busy windows, whole session or stable phase."""
    outs = stable_outcomes(report) if stable else report.tuning_outcomes
    vals = np.array([o.edp for o in outs if not o.idle])
    if len(vals) == 0:
        return float("nan")
    return float(vals.std() / vals.mean())


def run_ablation(cfg: SessionConfig) -> dict[str, SessionReport]:
    return {name: run_session(replace(cfg, **flags)) for name, flags in ABLATIONS.items()}


def ablation_table(reports: dict[str, SessionReport]) -> list[dict]:
    full = reports["full"]
    rows = []
    for name, rep in reports.items():
        agg = aggregate_report(rep.tuning_outcomes, aggregate_report(full.tuning_outcomes))
        rows.append({"config": name, "edp_mean": agg["edp"]["mean"], "edp_cv": agg["edp"]["cv"],
                     "edp_diff_pct": agg["edp"]["diff_pct"], "edp_cv_diff_pct": agg["edp"]["cv_diff_pct"],
                     "energy_mean": agg["energy_joules"]["mean"], "tpot_mean": agg["tpot_mean"]["mean"],
                     "convergence_round": rep.convergence_round,
                     "converged_frequency": rep.converged_frequency})
    return rows


def _oracle_row(args) -> dict:
    preset, cfg, seed, requests = args
    scfg = replace(cfg, preset=preset, trace_path=None, seed=seed)
    oracle = sweep_oracle(get_preset(preset), requests=requests, seed=seed, hardware=cfg.hardware)
    rep = run_session(scfg)
    online = rep.converged_frequency
    return {"preset": preset, "seed": seed, "offline_mhz": oracle.argmin, "online_mhz": online,
            "deviation_pct": 100.0 * (online - oracle.argmin) / oracle.argmin,
            "convergence_round": rep.convergence_round}


def run_oracle_comparison(presets, cfg: SessionConfig, seeds=(0,), requests: int = 500,
                          workers: int = 1) -> list[dict]:
    """Offline sweep optimum against the tuner's converged choice, per preset and seed."""
    jobs = [(p, cfg, s, requests) for p in presets for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_oracle_row, jobs))
    return [_oracle_row(j) for j in jobs]
