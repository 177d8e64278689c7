"""
A co-location study on simulated time
=====================================

Run the demo suite against the in-process orchestrator and simulated
nodes, then compare the inference workload alone with the same workload
sharing its node with a database. The whole 32 minute suite runs in
about a second because every timer fires on a simulated clock.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np

from colobench import (
    Collector,
    MetricKey,
    MetricStore,
    SimClock,
    SimulatedConnector,
    analyze,
    default_catalog,
    export_csv,
    load_cluster_config,
    load_suite,
    run_suite,
)
from colobench.scenario import SimulatedNodeEndpoint

HERE = Path(__file__).parent
SEED = 7

cluster = load_cluster_config(HERE / "configs" / "cluster.yaml")
suite = load_suite(HERE / "configs" / "experiments.yaml")

# One clock drives the orchestrator, the node endpoints and the collector.
clock = SimClock()
connector = SimulatedConnector(clock, seed=SEED)
endpoints = {h: SimulatedNodeEndpoint(h, clock, connector=connector, seed=SEED, noise=0.02) for h in cluster.hostnames}
store = MetricStore()
collector = Collector(endpoints, store, clock)

records = run_suite(suite, cluster, default_catalog(), connector, collector, clock)
print(f"{len(records)} records, clock stopped at t={clock.now():.0f}s, leaked services: {connector.active_services()}")

# Peek at raw series: node power across the whole run, in 5 s samples.
power = store.series(MetricKey.system("edge-pi", "power_watts"))
watts = np.array(power.values)
print(f"edge-pi power: {len(watts)} samples, min {watts.min():.1f} W, max {watts.max():.1f} W")

report = analyze(records, baseline="inference_alone")
print()
print(f"{'record':>20} {'rep':>3} {'cold start':>10} {'J/batch':>8} {'throughput x':>12} {'power x':>8}")
for entry in sorted(report.entries, key=lambda e: e.key):
    if entry.kind != "ml-inference":
        continue
    d = entry.derived
    cold = d["cold_start_seconds"].value if "cold_start_seconds" in d else float("nan")
    joules = d["energy_per_batch_joules"].value if "energy_per_batch_joules" in d else float("nan")
    tp = d["ratio.throughput"].value if "ratio.throughput" in d else 1.0
    pw = d["ratio.mean_power"].value if "ratio.mean_power" in d else 1.0
    print(f"{entry.record_name:>20} {entry.repetition:>3} {cold:>9.0f}s {joules:>8.2f} {tp:>12.3f} {pw:>8.3f}")

# Long-format CSVs plus a manifest; `colobench analyze --in` can redo the analysis from them.
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="colobench-demo-"))
written = export_csv(records, report, out)
print()
print("wrote", len(written), "files to", out)
