"""Shared wiring for simulated end-to-end runs."""

from __future__ import annotations

from colobench.catalog import default_catalog
from colobench.clock import SimClock
from colobench.connector import SimulatedConnector
from colobench.coordinator import ExperimentCoordinator, RunLog
from colobench.monitoring import Collector, MetricStore
from colobench.scenario import SimulatedNodeEndpoint


class Rig:
    def __init__(self, suite, cluster, seed=0, outages=None, startup_delay=3.0, poll_interval=5.0):
        self.clock = SimClock()
        self.connector = SimulatedConnector(self.clock, seed=seed, startup_delay=startup_delay)
        self.store = MetricStore()
        outages = outages or {}
        endpoints = {
            h: SimulatedNodeEndpoint(h, self.clock, connector=self.connector, seed=seed, outages=outages.get(h, ()))
            for h in cluster.hostnames
        }
        self.collector = Collector(endpoints, self.store, self.clock)
        self.runlog = RunLog()
        self.coordinator = ExperimentCoordinator(
            suite,
            cluster,
            self.connector,
            self.clock,
            collector=self.collector,
            catalog=default_catalog(),
            poll_interval=poll_interval,
            runlog=self.runlog,
        )

    def run(self):
        return self.coordinator.run()
