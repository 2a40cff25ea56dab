"""Iteration-level continuous-batching engine with windowed measurement."""

from __future__ import annotations

import csv
import heapq
import math
from collections import OrderedDict, deque
from dataclasses import dataclass

import numpy as np

from ..actions import FrequencyGrid
from ..reward import WindowOutcome
from ..telemetry import MetricsSnapshot
from .models import HardwareConfig
from .workload import RequestStream, WorkloadConfig, generate_workload

QUEUED, PREFILLING, DECODING, DONE = "queued", "prefilling", "decoding", "done"


class Request:
    __slots__ = ("id", "arrival_time", "context_len", "target_gen_len", "template_id",
                 "prefix_cached_len", "prefill_left", "start_iter", "first_token_time",
                 "finish_time", "state")

    def __init__(self, rid, arrival, ctx, gen, tid):
        self.id = rid
        self.arrival_time = arrival
        self.context_len = ctx
        self.target_gen_len = gen
        self.template_id = tid
        self.prefix_cached_len = 0
        self.prefill_left = ctx
        self.start_iter = -1
        self.first_token_time = math.nan
        self.finish_time = math.nan
        self.state = QUEUED

    @property
    def ttft(self) -> float:
        return self.first_token_time - self.arrival_time

    @property
    def e2e(self) -> float:
        return self.finish_time - self.arrival_time

    @property
    def tpot(self) -> float:
        if self.target_gen_len < 2:
            return math.nan
        return (self.finish_time - self.first_token_time) / (self.target_gen_len - 1)


class _Bucket:
    __slots__ = ("energy", "busy", "prefill", "decode", "iters", "hits", "misses",
                 "tpot_num", "max_iter", "ttft_sum", "ttft_n", "e2e_sum", "e2e_n")

    def __init__(self):
        self.energy = self.busy = self.tpot_num = self.max_iter = 0.0
        self.ttft_sum = self.e2e_sum = 0.0
        self.prefill = self.decode = self.iters = self.hits = self.misses = 0
        self.ttft_n = self.e2e_n = 0


@dataclass
class RunResult:
    frequency_mhz: int
    outcomes: list
    snapshots: list
    requests: list

    @property
    def mean_edp(self) -> float:
        return float(np.mean([o.edp for o in self.outcomes if not o.idle]))


class Simulator:
    """Deterministic simulated inference server (the ``SimServerState``).

    Time only advances through :meth:`step_engine` / :meth:`measure_window`;
    a frequency change takes effect at the next iteration boundary.
    """

    def __init__(self, stream: RequestStream, hardware: HardwareConfig | None = None,
                 grid: FrequencyGrid | None = None, window_duration: float = 0.8,
                 frequency_mhz: int | None = None):
        if window_duration <= 0:
            raise ValueError("window_duration must be positive")
        self.stream = stream
        self.hw = hardware or HardwareConfig()
        self.grid = grid or FrequencyGrid()
        self.window_duration = window_duration
        self.frequency_mhz = self.grid.validate(frequency_mhz if frequency_mhz is not None else self.grid.f_max)
        self.clock = 0.0
        self.iter_idx = 0
        self._next_arrival = 0
        self._arrivals = stream.arrival
        self.wait: deque[Request] = deque()
        self.prefilling: deque[Request] = deque()
        self._ready: list[Request] = []
        self._decode_heap: list = []
        self.live: dict[int, Request] = {}
        self.n_running = 0
        self.n_decoding = 0
        self.kv_tokens = 0
        self.kv_reserved = 0
        self.prefix_store: OrderedDict[int, int] = OrderedDict()
        self.completed: list[Request] = []
        self._buckets: dict[int, _Bucket] = {}
        self._window_idx = 0
        self.total_decode_tokens = 0

    @classmethod
    def from_workload(cls, cfg: WorkloadConfig, seed: int, **kwargs) -> "Simulator":
        return cls(generate_workload(cfg, seed), **kwargs)

    # -- control ---------------------------------------------------------

    def set_frequency(self, f_mhz: int) -> None:
        self.frequency_mhz = self.grid.validate(f_mhz)

    @property
    def finished(self) -> bool:
        return self._next_arrival >= len(self._arrivals) and self.n_running == 0 and not self.wait

    # -- engine ----------------------------------------------------------

    def _bucket(self, i: int) -> _Bucket:
        b = self._buckets.get(i)
        if b is None:
            b = self._buckets[i] = _Bucket()
        return b

    def _spread(self, t0: float, t1: float, power: float, iter_time: float) -> None:
        d = self.window_duration
        i = int(t0 // d)
        while t0 < t1:
            end = (i + 1) * d
            stop = t1 if t1 < end else end
            b = self._bucket(i)
            b.energy += power * (stop - t0)
            if iter_time > 0:
                b.busy += stop - t0
                if iter_time > b.max_iter:
                    b.max_iter = iter_time
            t0 = stop
            i += 1

    def _enqueue_arrivals(self) -> None:
        s = self.stream
        arr = self._arrivals
        n = len(arr)
        k = self._next_arrival
        while k < n and arr[k] <= self.clock:
            self.wait.append(Request(k, float(arr[k]), int(s.context_len[k]),
                                     int(s.gen_len[k]), int(s.template_id[k])))
            k += 1
        self._next_arrival = k

    def _admit(self, bucket: _Bucket) -> None:
        hw = self.hw
        s = self.stream
        while self.wait and self.n_running < hw.max_num_seqs:
            r = self.wait[0]
            need = r.context_len + r.target_gen_len
            if self.kv_reserved + need > hw.kv_capacity_tokens and self.n_running > 0:
                break
            self.wait.popleft()
            if r.template_id in self.prefix_store:
                self.prefix_store.move_to_end(r.template_id)
                r.prefix_cached_len = min(int(s.template_prefix[r.template_id]), r.context_len - 1)
                bucket.hits += 1
            else:
                bucket.misses += 1
            r.prefill_left = r.context_len - r.prefix_cached_len
            r.state = PREFILLING
            self.kv_reserved += need
            self.kv_tokens += r.context_len
            self.n_running += 1
            self.live[r.id] = r
            self.prefilling.append(r)

    def _iterate(self) -> list[Request]:
        t0 = self.clock
        bucket = self._bucket(int(t0 // self.window_duration))
        self._admit(bucket)

        starting = self._ready
        if starting:
            self._ready = []
            for r in starting:
                r.start_iter = self.iter_idx
                r.state = DECODING
                heapq.heappush(self._decode_heap, (self.iter_idx + r.target_gen_len - 1, r.id, r))
            self.n_decoding += len(starting)

        budget = self.hw.max_batched_tokens
        prefill_tok = 0
        attn = 0
        prefill_done = []
        for r in self.prefilling:
            if budget <= 0:
                break
            take = r.prefill_left if r.prefill_left < budget else budget
            r.prefill_left -= take
            budget -= take
            prefill_tok += take
            attn += take * (r.context_len - r.prefill_left)
            if r.prefill_left == 0:
                prefill_done.append(r)
        for _ in prefill_done:
            self.prefilling.popleft()

        decode_tok = self.n_decoding
        f = self.frequency_mhz
        iter_time, util = self.hw.latency.iteration(f, prefill_tok, decode_tok, self.kv_tokens,
                                                     self.n_running, attn)
        power = self.hw.power.power(f, util)
        t1 = t0 + iter_time
        self._spread(t0, t1, power, iter_time)
        self.clock = t1

        bucket.iters += 1
        bucket.prefill += prefill_tok
        bucket.decode += decode_tok
        bucket.tpot_num += decode_tok * iter_time
        self.kv_tokens += decode_tok
        self.total_decode_tokens += decode_tok

        for r in starting:
            r.first_token_time = t1
            bucket.ttft_sum += t1 - r.arrival_time
            bucket.ttft_n += 1

        finished = []
        heap = self._decode_heap
        while heap and heap[0][0] <= self.iter_idx:
            _, _, r = heapq.heappop(heap)
            r.finish_time = t1
            r.state = DONE
            self.kv_tokens -= r.context_len + r.target_gen_len
            self.kv_reserved -= r.context_len + r.target_gen_len
            self.n_running -= 1
            self.n_decoding -= 1
            del self.live[r.id]
            bucket.e2e_sum += t1 - r.arrival_time
            bucket.e2e_n += 1
            finished.append(r)

        store = self.prefix_store
        for r in prefill_done:
            store[r.template_id] = 1
            store.move_to_end(r.template_id)
            if len(store) > self.hw.prefix_slots:
                store.popitem(last=False)
        self._ready.extend(prefill_done)

        self.iter_idx += 1
        self.completed.extend(finished)
        return finished

    def step_engine(self, until: float) -> list[Request]:
        """Run iterations until the clock reaches ``until``; returns requests completed."""
        if until < self.clock and not math.isclose(until, self.clock):
            # an in-flight iteration already overshot; nothing to do
            return []
        done: list[Request] = []
        idle_power = self.hw.power.p_idle
        while self.clock < until:
            self._enqueue_arrivals()
            if self.n_running == 0 and not self.wait:
                k = self._next_arrival
                nxt = self._arrivals[k] if k < len(self._arrivals) else math.inf
                stop = min(nxt, until)
                self._spread(self.clock, stop, idle_power, 0.0)
                self.clock = stop
                continue
            done.extend(self._iterate())
        return done

    # -- measurement -----------------------------------------------------

    def measure_window(self) -> tuple[MetricsSnapshot, WindowOutcome]:
        """Advance through the current sampling window and report it."""
        d = self.window_duration
        w = self._window_idx
        end = (w + 1) * d
        self.step_engine(end)
        b = self._buckets.pop(w, None) or _Bucket()
        self._window_idx += 1

        pending = int(np.searchsorted(self._arrivals, end, side="right")) - self._next_arrival
        bpt = self.hw.bytes_per_token
        snap = MetricsSnapshot(
            window_start=w * d,
            window_duration=d,
            requests_waiting=len(self.wait) + max(pending, 0),
            requests_running=self.n_running,
            prefill_tokens=b.prefill,
            decode_tokens=b.decode,
            batch_iterations=b.iters,
            cache_used_bytes=float(min(self.kv_tokens, self.hw.kv_capacity_tokens) * bpt),
            cache_total_bytes=float(self.hw.kv_capacity_tokens * bpt),
            cache_hits=b.hits,
            cache_misses=b.misses,
        )
        if b.decode:
            tpot = b.tpot_num / b.decode
        elif b.busy > 0:
            # a stalled window: no token left the engine, charge the longest iteration
            tpot = b.max_iter
        else:
            tpot = math.nan
        outcome = WindowOutcome(
            energy_joules=b.energy,
            ttft_mean=b.ttft_sum / b.ttft_n if b.ttft_n else math.nan,
            tpot_mean=tpot,
            e2e_mean=b.e2e_sum / b.e2e_n if b.e2e_n else math.nan,
            tokens_out=b.decode,
            busy_time=b.busy,
        )
        return snap, outcome

    def run_fixed(self, frequency_mhz: int, max_windows: int | None = None) -> RunResult:
        """Serve the whole stream at one locked frequency."""
        self.set_frequency(frequency_mhz)
        outcomes, snaps = [], []
        while not self.finished and (max_windows is None or len(outcomes) < max_windows):
            s, o = self.measure_window()
            snaps.append(s)
            outcomes.append(o)
        return RunResult(frequency_mhz, outcomes, snaps, list(self.completed))

    # -- checks and export ----------------------------------------------

    def kv_tokens_recomputed(self) -> int:
        total = 0
        last = self.iter_idx - 1
        for r in self.live.values():
            generated = 0 if r.start_iter < 0 else last - r.start_iter + 1
            total += r.context_len + generated
        return total

    def export_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arrival", "ctx_len", "gen_len", "ttft", "e2e"])
            for r in sorted(self.completed, key=lambda r: r.id):
                w.writerow([repr(r.arrival_time), r.context_len, r.target_gen_len, repr(r.ttft), repr(r.e2e)])
