"""What the controller talks to: observe a window, apply a clock.

Frequency validation lives in :class:`Environment` so that an off-grid value
is rejected before any adapter code runs.
"""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import time
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .actions import FrequencyGrid
from .reward import WindowOutcome
from .sim.engine import Simulator
from .sim.models import HardwareConfig
from .sim.workload import RequestStream
from .telemetry import MetricsSnapshot

log = logging.getLogger(__name__)


class EnvironmentTerminated(Exception):
    """No further windows: end of fixture, exhausted trace, or closed adapter."""


@dataclass(frozen=True)
class EnvironmentCapabilities:
    grid: FrequencyGrid
    supports_energy_measurement: bool
    window_duration: float

    def __post_init__(self):
        if self.window_duration <= 0:
            raise ValueError("window_duration must be positive")


@dataclass(frozen=True)
class Ack:
    frequency_mhz: int
    changed: bool


class Environment:
    """Base adapter. Subclasses implement ``_observe`` and ``_set_clock``."""

    def __init__(self, capabilities: EnvironmentCapabilities, initial_mhz: int | None = None):
        self.capabilities = capabilities
        self.current_mhz = initial_mhz
        self.closed = False
        self.applied: list[int] = []

    @property
    def grid(self) -> FrequencyGrid:
        return self.capabilities.grid

    def observe(self) -> tuple[MetricsSnapshot, WindowOutcome]:
        if self.closed:
            raise EnvironmentTerminated("environment is closed")
        return self._observe()

    def apply_frequency(self, f_mhz) -> Ack:
        f = self.grid.validate(f_mhz)
        if self.closed:
            raise EnvironmentTerminated("environment is closed")
        if f == self.current_mhz:
            return Ack(f, False)
        self._set_clock(f)
        self.current_mhz = f
        self.applied.append(f)
        return Ack(f, True)

    def close(self) -> None:
        self.closed = True

    def _observe(self):
        raise NotImplementedError

    def _set_clock(self, f_mhz: int) -> None:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class SimulatorEnvironment(Environment):
    """Adapter over the in-process simulator.

    When ``drain`` is set the environment keeps producing windows after the
    last arrival until every request has completed, then terminates.
    """

    def __init__(self, stream: RequestStream, hardware: HardwareConfig | None = None,
                 grid: FrequencyGrid | None = None, window_duration: float = 0.8,
                 initial_mhz: int | None = None, max_windows: int | None = None):
        grid = grid or FrequencyGrid()
        self.sim = Simulator(stream, hardware, grid, window_duration, initial_mhz)
        super().__init__(EnvironmentCapabilities(grid, True, window_duration), self.sim.frequency_mhz)
        self.max_windows = max_windows
        self.windows = 0

    def _observe(self):
        if self.sim.finished or (self.max_windows is not None and self.windows >= self.max_windows):
            raise EnvironmentTerminated("simulated trace exhausted")
        self.windows += 1
        return self.sim.measure_window()

    def _set_clock(self, f_mhz: int) -> None:
        self.sim.set_frequency(f_mhz)


def write_fixture(path, pairs) -> None:
    """Record (snapshot, outcome) pairs as JSON lines for :class:`ReplayEnvironment`."""
    with open(path, "w") as fh:
        for snap, out in pairs:
            fh.write(json.dumps({"snapshot": snap.to_dict(), "outcome": _clean(out.to_dict())},
                                sort_keys=True) + "\n")


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


class ReplayEnvironment(Environment):
    """Replays a recorded JSON-lines fixture in order; applied clocks are only logged."""

    def __init__(self, path, grid: FrequencyGrid | None = None, window_duration: float = 0.8):
        self.path = Path(path)
        self.rows = [json.loads(line) for line in self.path.read_text().splitlines() if line.strip()]
        super().__init__(EnvironmentCapabilities(grid or FrequencyGrid(), True, window_duration))
        self.cursor = 0

    def _observe(self):
        if self.cursor >= len(self.rows):
            raise EnvironmentTerminated(f"end of fixture {self.path.name}")
        row = self.rows[self.cursor]
        self.cursor += 1
        return MetricsSnapshot.from_dict(row["snapshot"]), WindowOutcome.from_dict(row["outcome"])

    def _set_clock(self, f_mhz: int) -> None:
        pass


@dataclass(frozen=True)
class LiveConfig:
    metrics_url: str
    clock_set_command: str
    poll_period_s: float = 0.8
    f_min: int = 210
    f_max: int = 1800
    step: int = 15

    @classmethod
    def from_dict(cls, d: dict) -> "LiveConfig":
        missing = [k for k in ("metrics_url", "clock_set_command") if k not in d]
        if missing:
            raise KeyError(f"live adapter config is missing {', '.join(missing)}")
        return cls(**d)


class LiveEnvironment(Environment):
    """Wire-level adapter for a real server.

    Each window the metrics endpoint is polled for a JSON document holding a
    ``snapshot`` (MetricsSnapshot fields) and, when the host can meter
    energy, an ``outcome``. Clock changes run ``clock_set_command`` with
    ``{mhz}`` substituted. Not exercised against real hardware here.
    """

    def __init__(self, cfg: LiveConfig, fetch=None, run=None, sleep=time.sleep):
        grid = FrequencyGrid(cfg.f_min, cfg.f_max, cfg.step)
        super().__init__(EnvironmentCapabilities(grid, True, cfg.poll_period_s))
        self.cfg = cfg
        self._fetch = fetch or self._http_get
        self._run = run or (lambda argv: subprocess.run(argv, check=True))
        self._sleep = sleep

    def _http_get(self) -> dict:
        with urllib.request.urlopen(self.cfg.metrics_url, timeout=5) as resp:
            return json.loads(resp.read().decode())

    def _observe(self):
        self._sleep(self.cfg.poll_period_s)
        try:
            doc = self._fetch()
        except OSError as exc:
            raise EnvironmentTerminated(f"metrics endpoint unreachable: {exc}") from exc
        snap = MetricsSnapshot.from_dict(doc.get("snapshot", doc))
        if "outcome" in doc:
            out = WindowOutcome.from_dict(doc["outcome"])
        else:
            out = WindowOutcome(0.0, math.nan, math.nan, math.nan, snap.decode_tokens)
        return snap, out

    def _set_clock(self, f_mhz: int) -> None:
        argv = [a.replace("{mhz}", str(f_mhz)) for a in shlex.split(self.cfg.clock_set_command)]
        log.info("setting clock: %s", argv)
        self._run(argv)
