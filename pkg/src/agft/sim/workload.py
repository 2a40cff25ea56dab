"""Workload prototypes and seeded request streams."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, replace

import numpy as np

# Table-1 style prototypes. Base arrival rate is not given by the source
# workloads; the concurrency multiplier is applied on top of it.
DEFAULT_ARRIVAL_RATE = 2.0


@dataclass(frozen=True)
class WorkloadConfig:
    name: str
    context_tokens: tuple[int, int]
    generation_tokens: tuple[int, int]
    concurrency_multiplier: float = 1.0
    template_pool_size: int = 500
    arrival_rate: float = DEFAULT_ARRIVAL_RATE
    request_count: int | None = None
    duration: float | None = None

    def __post_init__(self):
        for label, (lo, hi) in (("context_tokens", self.context_tokens),
                                ("generation_tokens", self.generation_tokens)):
            if not 1 <= lo <= hi:
                raise ValueError(f"{label} range {lo}-{hi} is empty or non-positive")
        if self.template_pool_size < 1:
            raise ValueError("template_pool_size must be >= 1")
        if not (self.concurrency_multiplier > 0 and self.arrival_rate > 0):
            raise ValueError("arrival rate and multiplier must be positive")

    @property
    def effective_rate(self) -> float:
        return self.arrival_rate * self.concurrency_multiplier

    def with_count(self, n: int) -> "WorkloadConfig":
        return replace(self, request_count=n, duration=None)

    def with_duration(self, seconds: float) -> "WorkloadConfig":
        return replace(self, duration=seconds, request_count=None)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadConfig":
        d = dict(data)
        d["context_tokens"] = tuple(d["context_tokens"])
        d["generation_tokens"] = tuple(d["generation_tokens"])
        return cls(**d)


PRESETS: dict[str, WorkloadConfig] = {
    "normal": WorkloadConfig("normal", (256, 1024), (100, 350), 1.0, 500),
    "long_context": WorkloadConfig("long_context", (1024, 8192), (1, 100), 1.0, 500),
    "long_generation": WorkloadConfig("long_generation", (1, 256), (350, 350), 1.0, 500),
    "high_concurrency": WorkloadConfig("high_concurrency", (256, 1024), (100, 350), 5.0, 500),
    "high_cache_hit": WorkloadConfig("high_cache_hit", (256, 1024), (100, 350), 1.0, 5),
}

PRESET_ALIASES = {
    "normal_load": "normal", "long-context": "long_context", "long-generation": "long_generation",
    "high-concurrency": "high_concurrency", "high-cache-hit": "high_cache_hit",
}


def get_preset(name: str) -> WorkloadConfig:
    key = PRESET_ALIASES.get(name, name)
    try:
        return PRESETS[key]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class RequestStream:
    """Column-oriented request trace, sorted by arrival time."""

    arrival: np.ndarray
    context_len: np.ndarray
    gen_len: np.ndarray
    template_id: np.ndarray
    template_prefix: np.ndarray  # shared prefix length per template id

    def __len__(self) -> int:
        return len(self.arrival)

    def equals(self, other: "RequestStream") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("arrival", "context_len", "gen_len", "template_id", "template_prefix"))


def generate_workload(cfg: WorkloadConfig, seed: int) -> RequestStream:
    """Poisson arrivals with uniform lengths and template ids; deterministic in ``seed``."""
    if cfg.request_count is None and cfg.duration is None:
        raise ValueError("workload needs request_count or duration")
    rng = np.random.default_rng(seed)
    rate = cfg.effective_rate
    if cfg.request_count is not None:
        n = int(cfg.request_count)
        gaps = rng.exponential(1.0 / rate, size=n)
    else:
        # oversample, then truncate at the horizon
        n_guess = int(rate * cfg.duration + 10 * np.sqrt(rate * cfg.duration) + 10)
        gaps = rng.exponential(1.0 / rate, size=n_guess)
    arrival = np.cumsum(gaps)
    if cfg.request_count is None:
        arrival = arrival[arrival < cfg.duration]
        n = len(arrival)
    c_lo, c_hi = cfg.context_tokens
    g_lo, g_hi = cfg.generation_tokens
    ctx = rng.integers(c_lo, c_hi + 1, size=n)
    gen = rng.integers(g_lo, g_hi + 1, size=n)
    tid = rng.integers(0, cfg.template_pool_size, size=n)
    prefix = rng.integers(c_lo, (c_lo + c_hi) // 2 + 1, size=cfg.template_pool_size)
    return RequestStream(arrival, ctx, gen, tid, prefix)


def load_trace_csv(path, template_pool_size: int = 500, seed: int = 0) -> RequestStream:
    """Replay rows of ``arrival_offset, context_len, generation_len``.

    Template ids are not part of the trace format; they are drawn uniformly
    from a pool so that prefix caching still behaves plausibly.
    """
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append((float(row["arrival_offset"]), int(row["context_len"]), int(row["generation_len"])))
    if not rows:
        raise ValueError(f"trace {path} has no rows")
    rows.sort(key=lambda r: r[0])
    arr = np.array(rows, dtype=float)
    rng = np.random.default_rng(seed)
    ctx = arr[:, 1].astype(int)
    tid = rng.integers(0, template_pool_size, size=len(rows))
    lo = max(1, int(ctx.min()))
    prefix = rng.integers(lo, max(lo, int(np.median(ctx))) + 1, size=template_pool_size)
    return RequestStream(arr[:, 0], ctx, arr[:, 2].astype(int), tid, prefix)
