"""Full tuner against its two ablations on matched seeds.

"no-grain" restricts the tuner to a 120 MHz lattice; "no-pruning" keeps
every clock selectable. The table reports EDP variability over the whole
session and over the settled phase only, plus where each variant ends up.
"""

from agft.harness import SessionConfig, ablation_table, edp_cv, run_ablation


def main():
    for seed in (0, 1, 2):
        reps = run_ablation(SessionConfig(preset="normal", seed=seed))
        print(f"\nseed {seed}")
        print(f"  {'config':<11}{'EDP CV':>8}{'settled CV':>12}{'converged':>11}{'clock':>7}")
        for row in ablation_table(reps):
            rep = reps[row["config"]]
            print(f"  {row['config']:<11}{row['edp_cv']:>8.3f}{edp_cv(rep, stable=True):>12.4f}"
                  f"{str(row['convergence_round']):>11}{row['converged_frequency']:>7}")


if __name__ == "__main__":
    main()
