import json
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agft.actions import (COARSE_GRID, FrequencyGrid, PruneCause, PruningConfig, RefinementConfig, RefinementMode,
                          cascade_check, choose_refinement_mode, extreme_prune, historical_prune, initial_space,
                          predictive_anchor, refine, refine_window, statistical_anchor)
from agft.bandit import ArmModel, ExplorationSchedule, update_arm

GRID = FrequencyGrid()
PCFG = PruningConfig()
RCFG = RefinementConfig()


@dataclass
class Stats:
    frequency_mhz: int
    n: int = 0
    reward_mean: float = 0.0
    edp_mean: float = 0.0


def stats(**by_freq):
    """``stats(f600=(n, reward_mean, edp_mean))`` keyed by integer frequency."""
    return {int(k[1:]): Stats(int(k[1:]), *v) for k, v in by_freq.items()}


class TestGrid:
    @pytest.mark.parametrize("grid, count", [((210, 1800, 15), 107), ((210, 240, 15), 3), ((210, 1800, 30), 54)])
    def test_initial_space_sizes(self, grid, count):
        space = initial_space(FrequencyGrid(*grid))
        assert len(space) == count and not space.pruned
        assert space.active[0] == grid[0] and space.active[-1] == grid[1]

    def test_small_grid_members(self):
        assert initial_space(FrequencyGrid(210, 240, 15)).active == [210, 225, 240]

    @pytest.mark.parametrize("bad", [(300, 210, 15), (210, 1800, 0), (210, 1800, 16)])
    def test_invalid_grids(self, bad):
        with pytest.raises(ValueError):
            FrequencyGrid(*bad)

    def test_validate_and_snap(self):
        assert GRID.validate(1230) == 1230
        with pytest.raises(ValueError):
            GRID.validate(1231)
        assert GRID.snap(1237.0) == 1230 and GRID.snap(5000) == 1800 and GRID.snap(0) == 210

    def test_coarse_grid_lies_on_hardware_grid(self):
        fs = COARSE_GRID.frequencies()
        assert all(GRID.contains(f) for f in fs) and fs[-1] == 1800


class TestExtremePrune:
    def test_prunes_bad_arm_early(self):
        space = initial_space(GRID)
        extreme_prune(space, stats(f1500=(3, -1.5, 9.0)), 40, PCFG)
        assert 1500 not in space and space.pruned[1500].cause is PruneCause.EXTREME

    def test_insufficient_samples_retained(self):
        space = initial_space(GRID)
        extreme_prune(space, stats(f1500=(2, -1.5, 9.0)), 40, PCFG)
        assert 1500 in space

    def test_past_round_limit_retained(self):
        space = initial_space(GRID)
        extreme_prune(space, stats(f1500=(5, -2.0, 9.0)), 70, PCFG)
        assert 1500 in space

    @pytest.mark.parametrize("round_, n, mean, pruned", [
        (59, 3, -1.21, True), (60, 3, -1.21, False),
        (10, 3, -1.2, False), (10, 2, -1.9, False), (10, 3, -1.200001, True)])
    def test_gate_boundaries(self, round_, n, mean, pruned):
        space = initial_space(GRID)
        extreme_prune(space, stats(f1200=(n, mean, 1.0)), round_, PCFG)
        assert (1200 not in space) is pruned

    def test_low_frequency_prune_cascades(self):
        space = initial_space(GRID)
        extreme_prune(space, stats(f600=(3, -1.9, 9.0)), 10, PCFG)
        assert min(space.active) == 615
        causes = {space.pruned[f].cause for f in range(210, 600, 15)}
        assert causes == {PruneCause.CASCADE}
        assert [e["event"] for e in space.events] == ["prune", "cascade"]

    def test_never_empties_the_space(self):
        space = initial_space(FrequencyGrid(210, 240, 15))
        arms = stats(f210=(3, -1.9, 1.0), f225=(3, -1.5, 1.0), f240=(3, -1.8, 1.0))
        extreme_prune(space, arms, 5, PCFG)
        assert space.active == [225]  # the least-bad arm survives


class TestHistoricalPrune:
    def test_three_arm_example(self):
        space = initial_space(GRID)
        arms = stats(f1200=(6, 0, 2.0), f1230=(6, 0, 2.1), f1500=(6, 0, 5.0))
        sigma = np.std([2.0, 2.1, 5.0])
        assert sigma == pytest.approx(1.39, abs=0.01)
        historical_prune(space, arms, 30, PCFG)
        assert 1500 not in space and 1200 in space and 1230 in space
        assert space.pruned[1500].cause is PruneCause.HISTORICAL

    def test_two_arm_tolerance_boundary(self):
        space = initial_space(GRID)
        historical_prune(space, stats(f1200=(6, 0, 2.0), f1230=(6, 0, 2.1)), 30, PCFG)
        assert 1230 not in space and 1200 in space

    def test_undersampled_arm_retained(self):
        space = initial_space(GRID)
        arms = stats(f1200=(6, 0, 2.0), f1230=(6, 0, 2.1), f1500=(5, 0, 100.0))
        historical_prune(space, arms, 30, PCFG)
        assert 1500 in space

    def test_round_gate(self):
        space = initial_space(GRID)
        historical_prune(space, stats(f1200=(6, 0, 2.0), f1500=(6, 0, 9.0)), 29, PCFG)
        assert 1500 in space

    def test_noop_with_one_sampled_arm(self):
        space = initial_space(GRID)
        historical_prune(space, stats(f1200=(6, 0, 2.0), f1500=(2, 0, 9.0)), 40, PCFG)
        assert len(space) == 107

    def test_higher_k_is_more_tolerant(self):
        space = initial_space(GRID)
        historical_prune(space, stats(f1200=(6, 0, 2.0), f1230=(6, 0, 2.1)), 30,
                         PruningConfig(historical_tolerance_k=2.0))
        assert 1230 in space


class TestCascade:
    def test_below_half_max_cascades(self):
        space = initial_space(GRID)
        space._remove([600], 0, PruneCause.EXTREME)
        cascade_check(space, 600, PCFG, GRID)
        assert min(space.active) > 600
        assert all(space.pruned[f].cause is PruneCause.CASCADE for f in range(210, 600, 15))

    def test_at_or_above_half_max_no_cascade(self):
        for f in (900, 1200):
            space = initial_space(GRID)
            space._remove([f], 0, PruneCause.HISTORICAL)
            cascade_check(space, f, PCFG, GRID)
            assert len(space) == 106

    def test_only_210_cascades_below_225(self):
        space = initial_space(GRID)
        space._remove([225], 0, PruneCause.EXTREME)
        cascade_check(space, 225, PCFG, GRID)
        assert space.pruned[210].cause is PruneCause.CASCADE and min(space.active) == 240

    def test_skipped_when_it_would_empty(self):
        space = initial_space(FrequencyGrid(210, 300, 15))
        space._remove([285, 300], 0, PruneCause.EXTREME)
        cascade_check(space, 285, PCFG, GRID)
        assert space.active == [210, 225, 240, 255, 270]
        assert space.events[-1]["event"] == "cascade_skipped"


class TestAnchors:
    def test_statistical_anchor_example(self):
        assert statistical_anchor(stats(f1230=(4, 0, 2.4), f1500=(6, 0, 3.1)), RCFG) == 1230

    def test_statistical_anchor_none_when_undersampled(self):
        assert statistical_anchor(stats(f1230=(3, 0, 2.4), f1500=(1, 0, 1.0)), RCFG) is None

    def test_statistical_anchor_tie_goes_low(self):
        assert statistical_anchor(stats(f1500=(4, 0, 2.4), f1230=(4, 0, 2.4)), RCFG) == 1230

    def test_predictive_anchor_untrained_is_lowest(self):
        arms = [ArmModel(f) for f in (900, 600, 1200)]
        assert predictive_anchor(arms, np.full(7, 0.5), 0, ExplorationSchedule()) == 600

    def test_predictive_anchor_dominant_arm(self):
        arms = [ArmModel(f) for f in (900, 600, 1200)]
        x = np.full(7, 0.5)
        for _ in range(20):
            update_arm(arms[2], x, 1.5)
            update_arm(arms[0], x, -1.0)
            update_arm(arms[1], x, -1.0)
        assert predictive_anchor(arms, x, 300, ExplorationSchedule()) == 1200

    def test_predictive_anchor_empty_is_error(self):
        with pytest.raises(ValueError):
            predictive_anchor([], np.zeros(7), 0, ExplorationSchedule())


class TestRefine:
    @pytest.mark.parametrize("anchor, lo, hi, count", [(1230, 1080, 1380, 21), (300, 210, 450, 17),
                                                       (1800, 1650, 1800, 11)])
    def test_window_geometry(self, anchor, lo, hi, count):
        space = refine(initial_space(GRID), anchor, RCFG, GRID, round_=25)
        assert space.active == list(range(lo, hi + 1, 15)) and len(space) == count

    def test_dropped_arms_ledgered_and_readmissible(self):
        space = refine(initial_space(GRID), 1230, RCFG, GRID, 25)
        assert space.pruned[900].cause is PruneCause.REFINEMENT
        refine(space, 900, RCFG, GRID, 50)
        assert 900 in space and 900 not in space.pruned

    def test_extreme_pruned_never_resurrected(self):
        space = initial_space(GRID)
        extreme_prune(space, stats(f1230=(3, -1.9, 9.0)), 5, PCFG)
        refine(space, 1200, RCFG, GRID, 25)
        assert 1230 not in space and len(space) == 20

    def test_extreme_pruned_anchor_moves_to_nearest_live(self):
        space = initial_space(GRID)
        extreme_prune(space, stats(f1230=(3, -1.9, 9.0)), 5, PCFG)
        refine(space, 1230, RCFG, GRID, 25)
        assert space.events[-1]["anchor"] == 1215 and 1230 not in space

    def test_off_grid_anchor_rejected(self):
        with pytest.raises(ValueError):
            refine(initial_space(GRID), 1231, RCFG, GRID)

    def test_audit_log_is_json_lines(self, tmp_path):
        space = refine(initial_space(GRID), 1230, RCFG, GRID, 25)
        path = tmp_path / "audit.jsonl"
        space.write_audit(path)
        ev = json.loads(path.read_text().splitlines()[0])
        assert ev == {"round": 25, "event": "refine", "cause": "Refinement", "anchor": 1230,
                      "frequencies": list(range(1080, 1381, 15))}

    def test_radius_must_divide_step(self):
        with pytest.raises(ValueError):
            RefinementConfig(refine_radius=100, refine_step=15)


@pytest.mark.parametrize("round_, mode", [(50, RefinementMode.STATISTICAL), (99, RefinementMode.STATISTICAL),
                                          (100, RefinementMode.PREDICTIVE), (10**6, RefinementMode.PREDICTIVE)])
def test_refinement_mode_switch(round_, mode):
    assert choose_refinement_mode(round_, RCFG) is mode


@given(st.integers(0, 106))
def test_refine_window_cardinality_and_bounds(k):
    anchor = 210 + 15 * k
    win = refine_window(anchor, RCFG, GRID)
    assert len(win) <= 21
    assert all(GRID.contains(f) and anchor - 150 <= f <= anchor + 150 for f in win)


# Adversarial operation sequences: arbitrary statistics, prune passes and
# refinements interleaved in any order.
ops = st.lists(st.one_of(
    st.tuples(st.just("extreme"), st.integers(0, 80),
              st.dictionaries(st.integers(0, 106), st.tuples(st.integers(0, 10), st.floats(-2, 2)), max_size=20)),
    st.tuples(st.just("historical"), st.integers(0, 400),
              st.dictionaries(st.integers(0, 106), st.tuples(st.integers(0, 10), st.floats(0, 50)), max_size=20)),
    st.tuples(st.just("refine"), st.integers(0, 400), st.integers(0, 106)),
), max_size=25)


@settings(max_examples=200, deadline=None)
@given(ops)
def test_adversarial_sequences_preserve_invariants(seq):
    space = initial_space(GRID)
    banned = set()
    for op in seq:
        kind, round_, payload = op
        before_events = len(space.events)
        if kind == "refine":
            anchor = 210 + 15 * payload
            refine(space, anchor, RCFG, GRID, round_)
            ev = space.events[-1]
            if ev["event"] == "refine":
                a = ev["anchor"]
                assert len(space) <= 21
                assert all(a - 150 <= f <= a + 150 for f in space.active)
        else:
            arms = {210 + 15 * k: Stats(210 + 15 * k, n, v if kind == "extreme" else 0.0,
                                        v if kind == "historical" else 1.0) for k, (n, v) in payload.items()}
            (extreme_prune if kind == "extreme" else historical_prune)(space, arms, round_, PCFG)
        for ev in space.events[before_events:]:
            if ev["event"] == "cascade":
                assert min(space.active) >= ev["anchor"]
        banned |= space.extreme_pruned
        assert space.active, "action space emptied"
        assert not set(space.active) & set(space.pruned)
        assert not set(space.active) & banned
        assert all(GRID.contains(f) for f in space.active)
