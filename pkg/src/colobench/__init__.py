"""Declarative benchmarking of co-located containerized workloads on edge nodes."""

from __future__ import annotations

__version__ = "0.1.0"

from .analysis import (
    AnalysisEntry,
    AnalysisReport,
    ColdStartResult,
    aggregate,
    analyze,
    colocation_delta,
    detect_cold_start,
    energy_per_batch,
    export_csv,
    load_run,
)
from .bootstrap import (
    ClusterConfig,
    NodeConfig,
    ProvisioningPlan,
    ProvisionReport,
    execute_provisioning,
    load_cluster_config,
    parse_cluster_config,
    plan_provisioning,
)
from .catalog import AppMetrics, DeploymentDescription, WorkloadCatalog, default_catalog, parse_app_metrics
from .clock import RealClock, SimClock
from .connector import HealthStatus, SimulatedConnector, SwarmConnector
from .coordinator import ExperimentRecord, RunSchedule, build_schedule, poll_health, run_suite
from .durations import Duration, format_duration, parse_duration
from .errors import ColobenchError, ConfigError
from .experiment_model import (
    Experiment,
    ExperimentSuite,
    WorkloadSpec,
    load_suite,
    parse_suite,
    serialize_suite,
    validate_suite,
)
from .monitoring import Collector, MetricKey, MetricSample, MetricStore, TimeSeries, query, run_collector, scrape_once
