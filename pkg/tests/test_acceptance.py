"""The eight acceptance criteria at their stated tolerances.

Each test carries a ``criterion`` marker; the terminal summary prints one
PASS/FAIL line per criterion.
"""

from __future__ import annotations

import time

import pytest

from colobench.analysis import colocation_delta, detect_cold_start, energy_per_batch
from colobench.bootstrap import load_cluster_config
from colobench.cli import main
from colobench.experiment_model import load_suite
from colobench.monitoring import MetricKey, MetricStore, run_collector
from colobench.scenario import Constant, SimulatedNodeEndpoint, SyntheticScenario

from . import test_analysis, test_bootstrap, test_catalog, test_experiment_model
from .conftest import FIXTURES
from .sim import Rig


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.mark.criterion(1, "config fidelity")
def test_config_fidelity():
    with Timer() as t:
        suite = load_suite(FIXTURES / "streaming_with_db.yaml")
        cluster = load_cluster_config(FIXTURES / "cluster_minimal.yaml")
    exp = suite.experiments[0]
    assert exp.record_name == "streaming_with_db"
    assert exp.repetition == 2
    assert exp.duration.seconds == 1200
    assert [w.shift.seconds for w in exp.workloads] == [0, 300]
    assert suite.idle_between_experiments.seconds == 120
    assert suite.orchestrator == "docker swarm"
    (node,) = cluster.nodes
    assert (node.hostname, node.username) == ("raspberrypi", "pi")
    assert t.elapsed < 1.0


@pytest.mark.criterion(2, "energy per batch oracle")
@pytest.mark.parametrize(
    "power, throughput, expected",
    [(5, 1.12, 4.52), (150, 9.5, 15.73), (90, 7.2, 12.5), (144, 16.6, 8.65)],
)
def test_energy_per_batch_oracle(power, throughput, expected):
    with Timer() as t:
        value = energy_per_batch(power, throughput)
    assert value == pytest.approx(expected, rel=0.02)
    assert t.elapsed < 1.0


@pytest.mark.criterion(3, "cold-start detection")
def test_cold_start_detection():
    with Timer() as t:
        step = [(float(s), 1500.0 if s >= 244 else 150.0) for s in range(0, 601, 5)]
        flat = [(float(s), 900.0) for s in range(0, 601, 5)]
        ramp = [(float(s), 150.0 + 2.0 * s) for s in range(0, 601, 5)]
        found = detect_cold_start(step, trigger=0.0)
        none_flat = detect_cold_start(flat, trigger=0.0)
        none_ramp = detect_cold_start(ramp, trigger=0.0)
    assert found.detected and abs(found.step_time - 244) <= 5
    assert not none_flat.detected
    assert not none_ramp.detected
    assert t.elapsed < 1.0


@pytest.mark.criterion(4, "co-location ratio oracle")
def test_colocation_ratio_oracle():
    ratios = colocation_delta({"cold_start": 244, "throughput": 7.29}, {"cold_start": 505, "throughput": 2.54})
    assert ratios["cold_start"] == pytest.approx(2.07, abs=0.01)
    assert ratios["throughput"] == pytest.approx(0.348, abs=0.005)


@pytest.mark.criterion(5, "schedule conformance")
def test_schedule_conformance():
    suite = load_suite(FIXTURES / "streaming_with_db.yaml")
    cluster = load_cluster_config(FIXTURES / "cluster.yaml")
    rig = Rig(suite, cluster)
    rig.connector.script_failure("streaming_with_db.rep1.w0.database", "db-server", after=400)
    active_at_end = []
    for end in (1200, 2520):
        # priority 10 runs after the coordinator's stop at the same instant
        rig.clock.call_at(end, lambda: active_at_end.append(rig.connector.active_services()), priority=10)
    with Timer() as t:
        records = rig.run()
    assert active_at_end == [0, 0]
    assert [(r.start, r.end) for r in records] == [(0, 1200), (1320, 2520)]
    for r in records:
        shifted = r.workloads[1]
        assert shifted.trigger_time == r.start + 300
    stops = [line for line in rig.runlog.lines if " stop " in line]
    assert len(stops) == 4
    assert records[0].workloads[0].outcome.startswith("failed(")
    assert rig.connector.active_services() == 0
    assert rig.clock.now() == 2520
    assert t.elapsed < 5.0


@pytest.mark.criterion(6, "collector sample law")
def test_collector_sample_law():
    def scenario():
        sc = SyntheticScenario()
        for metric, value in (("cpu_utilization_percent", 20), ("power_watts", 90), ("cpu_temperature_celsius", 50)):
            sc.system("rpi", metric, Constant(value))
        sc.service("rpi", "db", "cpu_utilization_percent", Constant(130))
        sc.service("rpi", "db", "memory_used_mib", Constant(700))
        return sc

    def collect(outages):
        from colobench.clock import SimClock

        clock = SimClock()
        store = MetricStore()
        ep = SimulatedNodeEndpoint("rpi", clock, scenario(), outages=outages)
        run_collector({"rpi": ep}, clock, store, until=60, interval=5)
        return store

    clean = collect(())
    assert {len(clean.series(k)) for k in clean.keys()} == {13}
    broken = collect([(20, 25)])
    assert {len(broken.series(k)) for k in broken.keys()} == {11}
    assert broken.gaps("rpi") == [20, 25]
    for store in (clean, broken):
        assert not [
            s for s in store.all_samples()
            if s.key.scope == "service" and s.key.metric in ("power_watts", "cpu_temperature_celsius")
        ]
    assert MetricKey.for_service("rpi", "db", "cpu_utilization_percent") in clean


@pytest.mark.criterion(7, "end-to-end determinism")
def test_end_to_end_determinism(tmp_path, capsys):
    argv = ["run", "--connector", "simulated", "--seed", "42",
            "--experiments", str(FIXTURES / "streaming_with_db.yaml"), "--cluster", str(FIXTURES / "cluster.yaml")]
    assert main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert main([*argv, "--out", str(tmp_path / "b")]) == 0
    csvs = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert len(csvs) == 5  # two records x (metrics, app) + analysis
    for name in csvs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


@pytest.mark.criterion(8, "property suites")
def test_property_suites():
    with Timer() as t:
        test_experiment_model.test_round_trip()  # 1000 generated suites
        test_analysis.test_mean_matches_naive_oracle()  # 150 random series, 1e-9 relative
        test_catalog.test_override_soundness()
        test_catalog.test_unknown_keys_always_rejected()
        test_bootstrap.test_idempotency_property()
        test_bootstrap.test_failure_isolation_under_permutation()
    assert t.elapsed < 60.0
