"""Window metrics and the 7-dimensional workload context vector."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

FEATURE_NAMES = (
    "queue_presence",
    "prefill_throughput",
    "decode_throughput",
    "packing_efficiency",
    "concurrency",
    "cache_usage",
    "cache_hit_rate",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class MetricsSnapshot:
    """Raw counters collected over one sampling window.

    Gauges (queue depth, running requests, cache occupancy) are read at the
    end of the window; counters cover the whole window.
    """

    window_start: float
    window_duration: float
    requests_waiting: int = 0
    requests_running: int = 0
    prefill_tokens: int = 0
    decode_tokens: int = 0
    batch_iterations: int = 0
    cache_used_bytes: float = 0.0
    cache_total_bytes: float = 1.0
    cache_hits: int = 0
    cache_misses: int = 0

    def __post_init__(self):
        if not self.window_duration > 0:
            raise ValueError("window_duration must be positive")
        if not self.cache_total_bytes > 0:
            raise ValueError("cache_total_bytes must be positive")
        if self.cache_used_bytes > self.cache_total_bytes:
            raise ValueError("cache_used_bytes exceeds cache_total_bytes")
        for name in ("requests_waiting", "requests_running", "prefill_tokens",
                     "decode_tokens", "batch_iterations", "cache_used_bytes",
                     "cache_hits", "cache_misses"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsSnapshot":
        names = {f.name for f in fields(cls)}
        missing = names - data.keys()
        if missing:
            raise KeyError(f"missing snapshot fields: {sorted(missing)}")
        return cls(**{k: data[k] for k in names})

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MetricsSnapshot":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ContextVector:
    queue_presence: float
    prefill_throughput: float
    decode_throughput: float
    packing_efficiency: float
    concurrency: float
    cache_usage: float
    cache_hit_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ContextVector":
        if len(values) != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} values, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class NormalizedContext:
    values: np.ndarray
    bounds: np.ndarray  # shape (7, 2): per-dimension (lo, hi)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def extract_context(snapshot: MetricsSnapshot) -> ContextVector:
    s = snapshot
    lookups = s.cache_hits + s.cache_misses
    return ContextVector(
        queue_presence=1.0 if s.requests_waiting > 0 else 0.0,
        prefill_throughput=s.prefill_tokens / s.window_duration,
        decode_throughput=s.decode_tokens / s.window_duration,
        packing_efficiency=(s.prefill_tokens + s.decode_tokens) / max(s.batch_iterations, 1),
        concurrency=float(s.requests_running),
        cache_usage=min(1.0, s.cache_used_bytes / s.cache_total_bytes),
        cache_hit_rate=min(1.0, s.cache_hits / lookups) if lookups else 0.0,
    )


def identity_bounds() -> np.ndarray:
    return np.tile([0.0, 1.0], (N_FEATURES, 1))


def _as_raw(ctx) -> np.ndarray:
    if isinstance(ctx, ContextVector):
        return ctx.as_array()
    if isinstance(ctx, NormalizedContext):
        return np.asarray(ctx.values, dtype=float)
    return np.asarray(ctx, dtype=float)


def normalize(ctx, bounds) -> NormalizedContext:
    """Affine map each dimension onto [0, 1] with clamping.

    Dimensions whose bounds collapse (lo == hi) map to 0.
    """
    raw = _as_raw(ctx)
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (N_FEATURES, 2):
        raise ValueError("bounds must have shape (7, 2)")
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] > bounds[:, 1]):
        raise ValueError("bounds must be finite with lo <= hi")
    lo, hi = bounds[:, 0], bounds[:, 1]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    with np.errstate(over="ignore"):  # huge ratios clamp to 1 anyway
        vals = np.where(span > 0, np.clip((raw - lo) / safe, 0.0, 1.0), 0.0)
    return NormalizedContext(values=vals, bounds=bounds)


def calibrate_bounds(windows: Iterable, lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """Per-dimension percentile bounds from a warmup trace of raw contexts."""
    raw = np.array([_as_raw(w) for w in windows], dtype=float)
    if raw.ndim != 2 or raw.shape[0] == 0:
        raise ValueError("need at least one warmup window")
    lo = np.percentile(raw, lo_pct, axis=0)
    hi = np.percentile(raw, hi_pct, axis=0)
    # queue presence is binary; percentiles of a queue-free warmup would collapse it
    lo[0], hi[0] = 0.0, 1.0
    return np.column_stack([lo, np.maximum(hi, lo)])


def fingerprint_centroid(windows: Sequence, bounds=None) -> NormalizedContext:
    if len(windows) == 0:
        raise ValueError("fingerprint_centroid needs at least one window")
    if bounds is None:
        bounds = identity_bounds()
    normed = np.array([normalize(w, bounds).values for w in windows])
    return NormalizedContext(values=normed.mean(axis=0), bounds=np.asarray(bounds, dtype=float))


def nearest_centroid(ctx: NormalizedContext | np.ndarray, centroids: dict) -> str:
    """Label of the Euclidean-nearest centroid."""
    v = np.asarray(ctx, dtype=float)
    best, best_d = None, np.inf
    for label, c in centroids.items():
        d = float(np.sum((v - np.asarray(c, dtype=float)) ** 2))
        if d < best_d:
            best, best_d = label, d
    return best
