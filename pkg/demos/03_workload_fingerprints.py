"""What the tuner sees: seven-feature context vectors per preset.

Contexts are min-max scaled with bounds taken from one seed, averaged into
a centroid per preset, and used to classify windows from a second seed by
nearest centroid. At the base arrival rate roughly one window in five admits
no new request; such a window shows no prefill and no cache lookups, so the
Long Context and High Cache Hit signatures vanish from it. Accuracy is
reported separately for windows with and without admissions.
"""

from collections import Counter

import numpy as np

from agft.sim import PRESETS, Simulator, generate_workload
from agft.telemetry import (FEATURE_NAMES, calibrate_bounds, extract_context, fingerprint_centroid,
                            nearest_centroid, normalize)

WINDOWS = 300


def contexts(preset, seed):
    sim = Simulator(generate_workload(PRESETS[preset].with_duration(WINDOWS * 0.8), seed))
    out = []
    while not sim.finished and len(out) < WINDOWS:
        snap, _ = sim.measure_window()
        out.append((extract_context(snap), snap.cache_hits + snap.cache_misses > 0))
    return out


def main():
    train = {p: contexts(p, 0) for p in PRESETS}
    bounds = calibrate_bounds([c for v in train.values() for c, _ in v])
    cents = {p: fingerprint_centroid([c for c, _ in v], bounds) for p, v in train.items()}

    short = [n[:10] for n in FEATURE_NAMES]
    print(f"{'centroid':<18}" + "".join(f"{s:>11}" for s in short))
    for p, c in cents.items():
        print(f"{p:<18}" + "".join(f"{v:>11.3f}" for v in c.values))

    print("\nHeld-out classification (seed 1):")
    total = correct = 0
    for p in PRESETS:
        held = contexts(p, 1)
        preds = [nearest_centroid(normalize(c, bounds), cents) for c, _ in held]
        ok = np.array([q == p for q in preds])
        admitted = np.array([a for _, a in held])
        total, correct = total + len(preds), correct + ok.sum()
        wrong = Counter(q for q in preds if q != p).most_common(1)
        note = f", most often mistaken for {wrong[0][0]}" if wrong else ""
        quiet = f"{100 * ok[~admitted].mean():5.1f}%" if (~admitted).any() else "  n/a"
        print(f"  {p:<18}{100 * ok.mean():5.1f}% overall, {100 * ok[admitted].mean():5.1f}% with admissions, "
              f"{quiet} without ({100 * (~admitted).mean():.0f}% of windows){note}")
    print(f"  all presets {100 * correct / total:.1f}%")


if __name__ == "__main__":
    main()
