"""Simulation scenarios, benchmark metrics and the Monte Carlo runner."""

from .benchmark import ROSTER, BenchmarkConfig, BenchmarkResult, fit_roster, run_benchmark
from .metrics import HEADER, MetricsRow, compute_metrics, eta_from_selection, jaccard, pearson
from .scenarios import (S3_SCORES, SCENARIOS, GeneratedSample, ScenarioSpec, Truth, expit, g1,
                        g2, generate)

__all__ = [
    "ROSTER", "BenchmarkConfig", "BenchmarkResult", "fit_roster", "run_benchmark", "HEADER",
    "MetricsRow", "compute_metrics", "eta_from_selection", "jaccard", "pearson", "S3_SCORES",
    "SCENARIOS", "GeneratedSample", "ScenarioSpec", "Truth", "expit", "g1", "g2", "generate",
]
