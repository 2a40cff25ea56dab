"""Locked-clock sweeps over the five workload presets.

Each preset is served at every coarse clock on the same seeded trace. The
mean per-window energy-delay product traces a U: low clocks stretch every
iteration, high clocks pay cubic dynamic power for little memory-bound
speedup. The script prints each curve as a bar chart and its minimum.
"""

import sys

from agft.sim import PRESETS, sweep_oracle

REQUESTS = int(sys.argv[1]) if len(sys.argv) > 1 else 300


def bar(value, lo, hi, width=40):
    return "#" * max(1, int(width * (value - lo) / (hi - lo + 1e-12)) + 1)


def main():
    argmins = {}
    for name, cfg in PRESETS.items():
        res = sweep_oracle(cfg, requests=REQUESTS, seed=0, refine=False)
        freqs, edp = res.edp_curve()
        argmins[name] = res.argmin
        print(f"\n{name}: minimum EDP at {res.argmin} MHz")
        for f, e in zip(freqs, edp):
            if f % 120 == 90 or f == res.argmin:
                mark = "  <- minimum" if f == res.argmin else ""
                print(f"  {f:>5} MHz {e:8.3f} {bar(e, edp.min(), edp.max())}{mark}")
        lo, hi = res.endpoint_margins()
        print(f"  the minimum is {100 * lo:.0f}% below 210 MHz and {100 * hi:.0f}% below 1800 MHz")
    print("\nOptimal clocks, highest first:")
    for name, f in sorted(argmins.items(), key=lambda kv: -kv[1]):
        print(f"  {name:<18}{f} MHz")


if __name__ == "__main__":
    main()
