"""Hypothesis strategies shared by the property suites."""

from __future__ import annotations

from hypothesis import strategies as st

from colobench.catalog import default_catalog
from colobench.durations import Duration
from colobench.experiment_model import Experiment, ExperimentSuite, WorkloadSpec

HOSTS = ("manager", "rpi", "small_server", "medium_server", "large_server")

_ALPHABET = "abcxyzABZ019_-. /:#'\"é中\t"
_text = st.text(_ALPHABET, min_size=1, max_size=12)
record_names = st.builds(lambda head, tail: head + tail, st.sampled_from("abzAZ09é"), st.text(_ALPHABET, max_size=10))
keys = st.sampled_from(["db", "engine", "workers", "rate", "mode", "a", "b_2", "yes", "null", "1"])
scalars = st.one_of(
    st.integers(min_value=-(10**12), max_value=10**12),
    st.floats(allow_nan=False, allow_infinity=False, width=64),
    st.booleans(),
    _text,
)
parameter_trees = st.recursive(
    st.dictionaries(keys, scalars, max_size=4),
    lambda children: st.dictionaries(keys, st.one_of(scalars, children), max_size=3),
    max_leaves=8,
)
durations = st.integers(min_value=1, max_value=48 * 3600).map(Duration)


@st.composite
def workload_specs(draw, duration: Duration):
    name = draw(st.sampled_from(sorted(default_catalog().names)))
    cluster = draw(st.lists(st.sampled_from(HOSTS[1:]), min_size=1, max_size=3))
    shift = Duration(draw(st.integers(min_value=0, max_value=duration.seconds - 1)))
    return WorkloadSpec(name=name, cluster=tuple(cluster), parameters=draw(parameter_trees), shift=shift)


@st.composite
def experiments(draw):
    duration = draw(durations)
    return Experiment(
        record_name=draw(record_names),
        duration=duration,
        workloads=tuple(draw(st.lists(workload_specs(duration), min_size=1, max_size=3))),
        repetition=draw(st.integers(min_value=1, max_value=5)),
    )


suites = st.builds(
    ExperimentSuite,
    experiments=st.lists(experiments(), min_size=1, max_size=3).map(tuple),
    idle_between_experiments=st.integers(min_value=0, max_value=3600).map(Duration),
    orchestrator=st.just("docker swarm"),
)
