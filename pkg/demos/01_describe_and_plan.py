"""
Describing a co-location study
==============================

Load an experiment file and a cluster file, check one against the other,
look at the timeline the coordinator will follow and at the stack file a
Swarm manager would receive for one workload.
"""

from __future__ import annotations

from pathlib import Path

from colobench import build_schedule, default_catalog, load_cluster_config, load_suite, validate_suite
from colobench.connector import swarm_adapter_render
from colobench.coordinator import instance_id_for

HERE = Path(__file__).parent

cluster = load_cluster_config(HERE / "configs" / "cluster.yaml")
suite = load_suite(HERE / "configs" / "experiments.yaml")
print("nodes:", cluster.hostnames)
print("experiments:", [e.record_name for e in suite.experiments], "runs:", suite.total_runs)

# Validation collects every finding instead of stopping at the first one.
report = validate_suite(suite, cluster, default_catalog())
print("valid:", report.ok, "findings:", [str(f) for f in report.findings])

# Slots are laid out back to back with the idle gap between them.
# Offsets are seconds from the start of the run.
schedule = build_schedule(suite)
for slot in schedule.slots:
    exp = suite.experiments[slot.experiment_index]
    print(f"{exp.record_name:>20} rep {slot.repetition}: [{slot.start:6.0f}, {slot.end:6.0f})  triggers {slot.triggers}")
print("total span:", schedule.span, "s")

# Render the database workload of the second experiment and show its stack file.
exp = suite.experiments[1]
desc = default_catalog().render(
    exp.workloads[1], cluster, record_name=exp.record_name, instance_id=instance_id_for(exp, 1, 1)
)
for svc in desc.services:
    print(f"service {svc.name} on {svc.hostname} ({svc.role})")
print(swarm_adapter_render(desc))
