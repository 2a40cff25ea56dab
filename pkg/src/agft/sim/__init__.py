"""Deterministic continuous-batching inference simulator."""

from .engine import Request, RunResult, Simulator
from .models import HardwareConfig, LatencyModel, PowerModel
from .sweep import SweepResult, evaluate_frequency, sweep_oracle
from .workload import PRESETS, RequestStream, WorkloadConfig, generate_workload, get_preset, load_trace_csv

__all__ = [
    "HardwareConfig", "LatencyModel", "PRESETS", "PowerModel", "Request", "RequestStream",
    "RunResult", "Simulator", "SweepResult", "evaluate_frequency", "sweep_oracle", "WorkloadConfig", "generate_workload", "get_preset", "load_trace_csv",
]
