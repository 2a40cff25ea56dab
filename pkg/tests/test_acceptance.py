"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Every criterion runs at its stated tolerance. Expensive artifacts (oracle
sweeps and default tuning sessions) are cached across criteria; a
criterion's reported runtime includes the time spent producing any cached
artifact it consumes.
"""

import time

import numpy as np
import pytest

from agft.actions import (FrequencyGrid, PruneCause, PruningConfig, RefinementConfig, RefinementMode,
                          cascade_check, choose_refinement_mode, extreme_prune, historical_prune, initial_space,
                          refine)
from agft.bandit import ArmModel, ExplorationSchedule, select_ucb, update_arm
from agft.cli import main as cli_main
from agft.harness import SessionConfig, _grids, baseline_of, edp_cv, run_comparison, run_session
from agft.sim import PRESETS, Simulator, generate_workload, sweep_oracle
from agft.telemetry import calibrate_bounds, extract_context, fingerprint_centroid, nearest_centroid, normalize

GRID = FrequencyGrid()
SEEDS = (0, 1, 2)

_oracles: dict = {}
_sessions: dict = {}


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def oracle(preset, seed):
    """(sweep result, seconds it took), computed once per preset and seed."""
    key = (preset, seed)
    if key not in _oracles:
        _oracles[key] = timed(sweep_oracle, PRESETS[preset], requests=500, seed=seed)
    return _oracles[key]


def session(preset, seed):
    """Default 600-round tuning session, computed once per preset and seed."""
    key = (preset, seed)
    if key not in _sessions:
        _sessions[key] = timed(run_session, SessionConfig(preset=preset, seed=seed))
    return _sessions[key]


@pytest.fixture
def verdict(capsys):
    def emit(number, title, passed, detail, seconds=None):
        took = "" if seconds is None else f" [{seconds:.1f}s]"
        with capsys.disabled():
            print(f"\nCRITERION {number:>2} {'PASS' if passed else 'FAIL'}: {title}: {detail}{took}")
        assert passed, detail
    return emit


def ridge(xs, rs):
    return np.linalg.solve(np.eye(xs.shape[1]) + xs.T @ xs, xs.T @ rs)


def test_01_linucb_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    xs, rs = rng.random((10_000, 7)), rng.normal(size=10_000)
    arm = ArmModel(1230)
    for x, r in zip(xs, rs):
        update_arm(arm, x, r)
    ref = ridge(xs, rs)
    rel = float(np.linalg.norm(arm.theta - ref) / np.linalg.norm(ref))
    took = time.perf_counter() - t0
    verdict(1, "LinUCB matches batch ridge after 10k updates", rel <= 1e-9 and took < 5,
            f"relative error {rel:.2e} (limit 1e-9), runtime {took:.2f}s (limit 5s)", took)


def bandit_regret(seed, rounds=2000, k=12, d=7, noise=0.1):
    """Cumulative regret of the UCB policy and of uniform random play on one synthetic problem."""
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(k, d)) / np.sqrt(d)
    freqs = [210 + 15 * i for i in range(k)]
    arms = [ArmModel(f) for f in freqs]
    sched = ExplorationSchedule()
    ucb = rand = 0.0
    for t in range(rounds):
        x = rng.random(d)
        x[0] = 1.0  # bias term
        mu = theta @ x
        i = freqs.index(select_ucb(arms, x, t, sched))
        update_arm(arms[i], x, mu[i] + noise * rng.standard_normal())
        ucb += mu.max() - mu[i]
        rand += mu.max() - mu[rng.integers(k)]
    return ucb, rand


def test_02_regret_sanity(verdict):
    runs, took = timed(lambda: [bandit_regret(s) for s in range(5)])
    ucb, rand = np.mean([r[0] for r in runs]), np.mean([r[1] for r in runs])
    ratio = ucb / rand
    verdict(2, "12-arm synthetic regret vs uniform random", ratio <= 0.15 and took < 30,
            f"mean regret {ucb:.1f} vs {rand:.1f} ({100 * ratio:.1f}%, limit 15%), runtime {took:.1f}s", took)


def replay_action_space(report):
    """Active set in force at each round, rebuilt from the pruning audit log.

    A decision at round r is taken before that round's prune and refine
    pass, so it sees every event logged at rounds < r.
    """
    grid, _ = _grids(report.config)
    active = set(grid.frequencies())
    events = sorted(report.pruning_events, key=lambda e: e["round"])
    out, i, violations = {}, 0, []
    banned = set()
    for d in report.decisions:
        r = d["round"]
        while i < len(events) and events[i]["round"] < r:
            ev = events[i]
            i += 1
            if ev["event"] in ("prune", "cascade"):
                active -= set(ev["frequencies"])
                if ev["cause"] == PruneCause.EXTREME.value:
                    banned |= set(ev["frequencies"])
                if ev["event"] == "cascade" and active and min(active) < ev["anchor"]:
                    violations.append(("b", ev))
            elif ev["event"] == "refine":
                active = set(ev["frequencies"])
            if not active:
                violations.append(("c", ev))
            if active & banned:
                violations.append(("d", ev))
        out[r] = frozenset(active)
    return out, violations


def fuzzed_config(rng, i):
    return SessionConfig(
        preset=str(rng.choice(list(PRESETS))), seed=int(rng.integers(10_000)), rounds=int(rng.integers(80, 260)),
        warmup_rounds=int(rng.integers(5, 25)), arrival_rate=float(rng.uniform(0.8, 4.0)),
        alpha0=float(rng.uniform(0.2, 2.0)), disable_fine_grained=bool(rng.random() < 0.2),
        disable_refinement=bool(rng.random() < 0.2),
        pruning=PruningConfig(extreme_round_limit=int(rng.integers(10, 120)),
                              extreme_min_samples=int(rng.integers(1, 5)),
                              extreme_reward_threshold=float(rng.uniform(-1.6, -0.2)),
                              historical_min_round=int(rng.integers(5, 60)),
                              historical_min_samples=int(rng.integers(2, 8)),
                              cascade_fraction=float(rng.uniform(0.3, 1.0)),
                              historical_tolerance_k=float(rng.uniform(0.0, 1.5))),
        refinement=RefinementConfig(maturity_threshold=int(rng.integers(20, 150)), period=int(rng.integers(5, 40))))


def test_03_pruning_invariants(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    counts = {"a": 0, "b": 0, "c": 0, "d": 0}
    events = 0
    for i in range(100):
        rep = run_session(fuzzed_config(rng, i))
        active_at, bad = replay_action_space(rep)
        events += len(rep.pruning_events)
        for kind, _ in bad:
            counts[kind] += 1
        for d in rep.decisions:
            if d["chosen_freq"] not in active_at[d["round"]]:
                counts["a"] += 1
        if not rep.final_active:
            counts["c"] += 1
    took = time.perf_counter() - t0
    total = sum(counts.values())
    verdict(3, "pruning invariants over 100 fuzzed sessions", total == 0 and events > 0,
            f"violations a/b/c/d = {counts['a']}/{counts['b']}/{counts['c']}/{counts['d']} "
            f"across {events} audit events", took)


class _Arm:
    def __init__(self, f, n, reward_mean=0.0, edp_mean=1.0):
        self.frequency_mhz, self.n, self.reward_mean, self.edp_mean = f, n, reward_mean, edp_mean


def _extreme(round_, n, mean, f=1200):
    space = initial_space(GRID)
    extreme_prune(space, {f: _Arm(f, n, mean)}, round_, PruningConfig())
    return f not in space


def _historical(round_, n_bad):
    space = initial_space(GRID)
    arms = {1200: _Arm(1200, 6, edp_mean=2.0), 1230: _Arm(1230, 6, edp_mean=2.0),
            1500: _Arm(1500, n_bad, edp_mean=9.0)}
    historical_prune(space, arms, round_, PruningConfig())
    return 1500 not in space


def _cascade(f):
    space = initial_space(GRID)
    space._remove([f], 0, PruneCause.EXTREME)
    cascade_check(space, f, PruningConfig(), GRID)
    return min(space.active) > f


def test_04_pruning_thresholds(verdict):
    cases = {
        "extreme round 59 fires": (_extreme(59, 3, -1.5), True),
        "extreme round 60 silent": (_extreme(60, 3, -1.5), False),
        "extreme n=3 fires": (_extreme(10, 3, -1.5), True),
        "extreme n=2 silent": (_extreme(10, 2, -1.5), False),
        "extreme mean just below -1.2 fires": (_extreme(10, 3, np.nextafter(-1.2, -2)), True),
        "extreme mean -1.2 silent": (_extreme(10, 3, -1.2), False),
        "historical round 30 fires": (_historical(30, 6), True),
        "historical round 29 silent": (_historical(29, 6), False),
        "historical n=6 fires": (_historical(40, 6), True),
        "historical n=5 silent": (_historical(40, 5), False),
        "cascade at 885 (< 900) fires": (_cascade(885), True),
        "cascade at 900 silent": (_cascade(900), False),
    }
    wrong = [name for name, (got, want) in cases.items() if got is not want]
    verdict(4, "pruning gate boundaries", not wrong,
            f"{len(cases) - len(wrong)}/{len(cases)} boundary scenarios exact" + (f"; wrong: {wrong}" if wrong else ""))


def test_05_refinement_geometry(verdict):
    bad = []
    cfg = RefinementConfig()
    for anchor in GRID.frequencies():
        space = refine(initial_space(GRID), anchor, cfg, GRID, 25)
        a = space.active
        if not (len(a) <= 21 and all(max(210, anchor - 150) <= f <= min(1800, anchor + 150) and GRID.contains(f)
                                     for f in a)):
            bad.append(anchor)
    refines = 0
    for preset in ("normal", "long_context"):
        rep = run_session(SessionConfig(preset=preset, seed=0, rounds=300))
        for ev in rep.pruning_events:
            if ev["event"] == "refine":
                refines += 1
                fs, a = ev["frequencies"], ev["anchor"]
                if not (len(fs) <= 21 and all(a - 150 <= f <= a + 150 and GRID.contains(f) for f in fs)):
                    bad.append(("session", preset, ev["round"]))
    modes = [choose_refinement_mode(r, cfg) for r in (0, 99, 100, 101)]
    switch_ok = modes == [RefinementMode.STATISTICAL, RefinementMode.STATISTICAL,
                          RefinementMode.PREDICTIVE, RefinementMode.PREDICTIVE]
    verdict(5, "refinement geometry and mode switch", not bad and switch_ok,
            f"{len(GRID.frequencies())} anchors plus {refines} in-session refines, {len(bad)} out of bounds; "
            f"Statistical->Predictive at round 100: {switch_ok}")


def test_06_simulator_u_curves(verdict):
    total = 0.0
    rows, ok = {}, True
    for p in PRESETS:
        res, secs = oracle(p, 0)
        total += secs
        lo, hi = res.endpoint_margins()
        interior = res.argmin not in (GRID.f_min, GRID.f_max)
        ok &= interior and lo >= 0.10 and hi >= 0.10
        rows[p] = (res.argmin, lo, hi)
    a = {p: rows[p][0] for p in rows}
    order = a["long_context"] >= a["high_concurrency"] > a["normal"] >= a["high_cache_hit"]
    detail = ", ".join(f"{p} {f} MHz (-{100 * lo:.0f}%/-{100 * hi:.0f}%)" for p, (f, lo, hi) in rows.items())
    verdict(6, "U-shaped EDP curves and argmin ordering", ok and order and total < 300,
            f"{detail}; ordering LC>=HC>N>=HCH {order}", total)


def test_07_convergence_to_oracle(verdict):
    total, rows, fails = 0.0, [], []
    for p in PRESETS:
        for s in SEEDS:
            res, t1 = oracle(p, s)
            rep, t2 = session(p, s)
            total += t1 + t2
            dev = 100.0 * (rep.converged_frequency - res.argmin) / res.argmin
            converged = rep.convergence_round is not None
            rows.append(f"{p}/s{s} {dev:+.1f}%" + ("" if converged else " (never converged)"))
            if not converged or abs(dev) > 8.0:
                fails.append(rows[-1])
    verdict(7, "converged frequency within 8% of the oracle, 5 presets x 3 seeds", not fails and total < 300,
            f"{15 - len(fails)}/15 within tolerance; failing: {fails or 'none'}", total)


def test_08_end_to_end_efficiency(verdict):
    t0 = time.perf_counter()
    cfg = SessionConfig(preset="normal", seed=0, drain=True)
    cmp = run_comparison(cfg, baseline_of(cfg, "max"))
    took = time.perf_counter() - t0
    d = cmp.summary["totals"]["diff_pct"]
    post = cmp.summary["post_convergence"]
    p_ttft, p_tpot = post["ttft_mean"]["diff_pct"], post["tpot_mean"]["diff_pct"]
    ok = d["energy_joules"] <= -15 and d["edp"] <= -15 and p_ttft <= 15 and p_tpot <= 15 and took < 120
    verdict(8, "tuner vs locked f_max on Normal Load", ok,
            f"cumulative energy {d['energy_joules']:+.1f}%, cumulative EDP {d['edp']:+.1f}% (limit -15%); "
            f"post-convergence TTFT {p_ttft:+.1f}%, TPOT {p_tpot:+.1f}% (limit +15%); "
            f"whole-session TTFT {d['ttft_mean']:+.1f}%, TPOT {d['tpot_mean']:+.1f}%", took)


def test_09_ablation_directionality(verdict):
    t0 = time.perf_counter()
    wins = {"no-grain": 0, "no-pruning": 0}
    cells = []
    for s in SEEDS:
        full = run_session(SessionConfig(seed=s))
        cv_full = edp_cv(full, stable=True)
        row = [f"s{s} full {cv_full:.3f}"]
        for name, flags in (("no-grain", {"disable_fine_grained": True}), ("no-pruning", {"disable_pruning": True})):
            cv = edp_cv(run_session(SessionConfig(seed=s, **flags)), stable=True)
            wins[name] += cv > cv_full
            row.append(f"{name} {cv:.3f}")
        cells.append(" ".join(row))
    took = time.perf_counter() - t0
    ok = all(w >= 2 for w in wins.values())
    verdict(9, "ablations raise stable-phase EDP CV (3-seed majority)", ok,
            f"no-grain higher on {wins['no-grain']}/3, no-pruning higher on {wins['no-pruning']}/3; "
            + "; ".join(cells), took)


def preset_windows(preset, seed, windows=300):
    sim = Simulator(generate_workload(PRESETS[preset].with_duration(windows * 0.8), seed))
    out = []
    while not sim.finished and len(out) < windows:
        snap, _ = sim.measure_window()
        out.append(extract_context(snap))
    return out


def test_10_fingerprint_separability(verdict):
    t0 = time.perf_counter()
    train = {p: preset_windows(p, 0) for p in PRESETS}
    test = {p: preset_windows(p, 1) for p in PRESETS}
    bounds = calibrate_bounds([c for v in train.values() for c in v])
    cents = {p: fingerprint_centroid(v, bounds) for p, v in train.items()}
    per = {p: np.mean([nearest_centroid(normalize(c, bounds), cents) == p for c in v]) for p, v in test.items()}
    acc = float(np.mean([nearest_centroid(normalize(c, bounds), cents) == p for p, v in test.items() for c in v]))
    took = time.perf_counter() - t0
    verdict(10, "nearest-centroid held-out accuracy", acc >= 0.90,
            f"{100 * acc:.1f}% (limit 90%); " + ", ".join(f"{p} {100 * a:.0f}%" for p, a in per.items()), took)


def test_11_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    commands = {
        "tune": ["tune", "--preset", "high_concurrency", "--seed", "5", "--rounds", "200"],
        "compare": ["compare", "--preset", "long_generation", "--seed", "5", "--rounds", "150"],
        "ablate": ["ablate", "--preset", "normal", "--seed", "5", "--rounds", "150"],
        "sweep": ["sweep", "--preset", "high_cache_hit", "--seed", "5", "--requests", "80"],
    }
    mismatched, compared = [], 0
    for name, argv in commands.items():
        dirs = [tmp_path / name / run for run in ("a", "b")]
        for d in dirs:
            assert cli_main(argv + ["--out", str(d)]) == 0
        files = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*")
                       if p.name in ("decisions.csv", "sweep.csv"))
        for rel in files:
            compared += 1
            if (dirs[0] / rel).read_bytes() != (dirs[1] / rel).read_bytes():
                mismatched.append(f"{name}:{rel}")
    took = time.perf_counter() - t0
    verdict(11, "byte-identical outputs across repeated CLI runs", not mismatched and compared >= 7,
            f"{compared} files compared, {len(mismatched)} differ {mismatched or ''}", took)


def test_12_reward_signature(verdict):
    total, fails, shown = 0.0, [], []
    for p in PRESETS:
        for s in SEEDS:
            rep, secs = session(p, s)
            total += secs
            rs = rep.reward_series()
            r = np.array(rs["reward"])
            head_mean, head_std = r[:50].mean(), r[:50].std()
            end_mean, end_std = rs["rolling_mean"][-1], rs["rolling_std"][-1]
            ok = end_std < head_std and end_mean > head_mean
            if s == 0:
                shown.append(f"{p} mean {head_mean:+.2f}->{end_mean:+.2f} sd {head_std:.2f}->{end_std:.2f}")
            if not ok:
                fails.append(f"{p}/s{s}")
    verdict(12, "rolling reward settles (higher mean, lower spread)", not fails,
            f"{15 - len(fails)}/15 sessions; seed 0: " + "; ".join(shown), total)
