"""Simulation: data generation, censoring calibration, replication studies."""
from .generate import (
    CensoringBracketError,
    SimScenario,
    SimulatedSubjects,
    censoring_fraction,
    generate_dataset,
    sample_event_times,
    sample_visit_times,
    tune_censoring_rate,
)
from .study import (
    METRICS_ORDER,
    MetricsTable,
    ReplicationError,
    StudyResult,
    posterior_summary,
    replication_study,
    run_replications,
)

__all__ = [
    "SimScenario", "SimulatedSubjects", "CensoringBracketError", "censoring_fraction",
    "generate_dataset", "sample_event_times", "sample_visit_times", "tune_censoring_rate",
    "METRICS_ORDER", "MetricsTable", "ReplicationError", "StudyResult", "posterior_summary",
    "replication_study", "run_replications",
]
