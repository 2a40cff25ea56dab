"""Frequency-dependent latency and power models for the simulated GPU."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class PowerModel:
    """Board power P(f, u) = p_idle + (k_lin f + k_cube f^3) * max(u, util_floor), f in GHz."""

    p_idle: float = 100.0
    k_lin: float = 0.0
    k_cube: float = 22.0
    util_floor: float = 0.85

    def __post_init__(self):
        if min(self.p_idle, self.k_lin, self.k_cube, self.util_floor) < 0:
            raise ValueError("power coefficients must be non-negative")

    def power(self, f_mhz: float, util: float = 1.0, busy: bool = True) -> float:
        if not busy:
            return self.p_idle
        f = f_mhz / 1000.0
        return self.p_idle + (self.k_lin * f + self.k_cube * f ** 3) * max(util, self.util_floor)


@dataclass(frozen=True)
class LatencyModel:
    """Per-iteration roofline: max(compute, memory) plus a fixed scheduling overhead.

    Compute scales as 1/f and has a batch-independent part (``c_iter``) so
    that even small decode batches turn compute-bound at low clocks. The
    memory term only partly follows the core clock: it is divided by
    beta + (1 - beta) * f / f_max.

    Prefill compute grows with new tokens times the context they attend
    to, so long prompts push the ridge point (and the EDP optimum) upward
    while short prompts stay close to the decode ridge near 1 GHz.
    """

    c_iter: float = 0.0105        # s*GHz per iteration
    c_prefill: float = 0.0         # s*GHz per prefill token (attention dominates, see c_attn)
    c_decode: float = 4.5e-5      # s*GHz per decode token
    c_attn: float = 3.5e-9        # s*GHz per (new token x context token) of prefill attention
    mem_base: float = 0.010       # s per iteration (weight streaming)
    c_kv: float = 2.0e-8          # s per live KV token read
    beta_membound: float = 0.85
    batch_overhead: float = 0.002
    capacity_knee: int = 48
    concurrency_penalty: float = 1.5
    f_max_mhz: float = 1800.0

    def __post_init__(self):
        if not 0.0 <= self.beta_membound <= 1.0:
            raise ValueError("beta_membound must lie in [0, 1]")
        if self.concurrency_penalty < 1.0:
            raise ValueError("concurrency_penalty must be >= 1")
        if min(self.c_iter, self.c_prefill, self.c_decode, self.c_attn, self.mem_base, self.c_kv, self.batch_overhead) < 0:
            raise ValueError("latency coefficients must be non-negative")

    def penalty(self, running: int) -> float:
        excess = running / self.capacity_knee - 1.0
        return 1.0 + excess ** self.concurrency_penalty if excess > 0 else 1.0

    def iteration(self, f_mhz: float, prefill_tokens: int, decode_tokens: int,
                  kv_tokens: int, running: int, attn_work: float = 0.0) -> tuple[float, float]:
        """Return (iteration seconds, compute utilization in [0, 1])."""
        f = f_mhz / 1000.0
        compute = (self.c_iter + self.c_prefill * prefill_tokens + self.c_decode * decode_tokens
                   + self.c_attn * attn_work) / f
        speed = self.beta_membound + (1.0 - self.beta_membound) * f_mhz / self.f_max_mhz
        memory = (self.mem_base + self.c_kv * kv_tokens) / speed
        core = max(compute, memory)
        util = compute / core if core > 0 else 0.0
        return self.batch_overhead + core * self.penalty(running), util


@dataclass(frozen=True)
class HardwareConfig:
    latency: LatencyModel = field(default_factory=LatencyModel)
    power: PowerModel = field(default_factory=PowerModel)
    kv_capacity_tokens: int = 200_000
    bytes_per_token: int = 114_688   # 3B-class model, fp16 K and V
    max_num_seqs: int = 64
    max_batched_tokens: int = 16384
    prefix_slots: int = 32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HardwareConfig":
        d = dict(data)
        lat = LatencyModel(**d.pop("latency", {}))
        pw = PowerModel(**d.pop("power", {}))
        return cls(latency=lat, power=pw, **d)
