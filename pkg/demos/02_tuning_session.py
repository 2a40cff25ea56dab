"""One tuning session on the Normal preset, narrated round by round.

The tuner starts with all 107 clocks, explores with upper confidence bounds,
prunes clocks that are clearly bad, narrows the space around promising
anchors, and switches to greedy exploitation once rewards stop drifting.
Afterwards the same trace is replayed at a locked 1800 MHz for comparison.
"""

from collections import Counter

from agft.harness import SessionConfig, baseline_of, run_comparison


def main():
    cfg = SessionConfig(preset="normal", seed=0, drain=True)
    cmp = run_comparison(cfg, baseline_of(cfg, "max"))
    rep = cmp.tuned

    print("Audit trail (first 12 events):")
    for ev in rep.pruning_events[:12]:
        fs = ev["frequencies"]
        span = f"{min(fs)}..{max(fs)} MHz ({len(fs)} clocks)" if fs else "nothing"
        anchor = f" around {ev['anchor']} MHz" if ev["anchor"] is not None and ev["event"].startswith("refine") else ""
        print(f"  round {ev['round']:>4}: {ev['event']:<8} {span}{anchor}")

    c = rep.convergence_round
    print(f"\nRewards stopped drifting at round {c}; the greedy choice afterwards is {rep.converged_frequency} MHz.")
    picks = Counter(d["chosen_freq"] for d in rep.decisions if c is not None and d["round"] > c)
    print("Most frequent post-convergence clocks:", ", ".join(f"{f} MHz x{n}" for f, n in picks.most_common(3)))

    d = cmp.summary["totals"]["diff_pct"]
    post = cmp.summary["post_convergence"]
    print("\nAgainst a locked 1800 MHz clock on the same requests:")
    print(f"  total energy {d['energy_joules']:+.1f}%, summed EDP {d['edp']:+.1f}%")
    print(f"  after convergence: TTFT {post['ttft_mean']['diff_pct']:+.1f}%, TPOT {post['tpot_mean']['diff_pct']:+.1f}%")
    print(f"  over the whole run, exploration included: TTFT {d['ttft_mean']:+.1f}%, TPOT {d['tpot_mean']:+.1f}%")


if __name__ == "__main__":
    main()
