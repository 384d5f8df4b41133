import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_config
from d2drelay.engine import (
    RelaySimulator,
    TraceRecorder,
    build_world,
    drop_streams,
    run_drop,
    run_drops,
)
from d2drelay.metrics import DropMetrics, MetricsAccumulator, cdf_and_percentiles, lower_percentile
from d2drelay.relaying import NO_RELAY, prune_relays


@pytest.fixture(scope="module")
def relay_run():
    cfg = small_config(run={"mode": "relay"})
    trace = TraceRecorder()
    streams = drop_streams(cfg.run.seed, 0)
    world = build_world(cfg, streams)
    sim = RelaySimulator(world, streams.mac, trace)
    initial = list(sim.assignments)
    metrics = sim.run()
    return cfg, world, sim, initial, metrics, trace


def _equal_metrics(a: DropMetrics, b: DropMetrics):
    for f in DropMetrics.__dataclass_fields__:
        x, y = getattr(a, f), getattr(b, f)
        if isinstance(x, np.ndarray):
            np.testing.assert_array_equal(x, y)
        else:
            assert x == y


def test_drop_is_deterministic():
    cfg = small_config(run={"mode": "relay-im"})
    _equal_metrics(run_drop(cfg, 1), run_drop(cfg, 1))


def test_parallel_and_serial_runs_agree():
    cfg = small_config()
    serial, _ = run_drops(cfg, jobs=1)
    parallel, _ = run_drops(cfg, jobs=2)
    assert sorted(serial.drops) == sorted(parallel.drops)
    for d in serial.drops:
        _equal_metrics(serial.drops[d], parallel.drops[d])


def test_baseline_has_no_relays_and_no_access_interference():
    m = run_drop(small_config(run={"mode": "baseline"}), 0)
    assert m.relayed_initial == 0
    assert np.all(m.dl_relay_bits == 0) and np.all(m.ul_relay_bits == 0)
    assert len(m.access_sinr) == 0
    assert np.all(m.enb_access == 0)
    assert m.active_links_per_sector == 0


def test_relay_mode_adds_access_interference(relay_run):
    m = relay_run[4]
    assert m.relayed_after_prune > 0
    assert np.any(m.enb_access > 0)


def test_bits_split_and_buffer_conservation(relay_run):
    _, _, sim, _, m, _ = relay_run
    np.testing.assert_array_equal(m.dl_bits, m.dl_direct_bits + m.dl_relay_bits)
    np.testing.assert_array_equal(m.ul_bits, m.ul_direct_bits + m.ul_relay_bits)
    # whole bits, so the bookkeeping is exact
    np.testing.assert_array_equal(m.buffer_in - m.buffer_out, m.buffer_level)
    assert np.all(m.buffer_level >= 0) and np.all(m.buffer_level <= sim.capacity)
    assert np.all(np.floor(m.buffer_in) == m.buffer_in)


def test_all_sinrs_capped(relay_run):
    m = relay_run[4]
    for arr in (m.dl_sinr, m.ul_sinr, m.access_sinr):
        finite = arr[np.isfinite(arr)]
        assert np.all(finite <= 25.0)


def test_access_power_ceiling(relay_run):
    assert np.all(relay_run[1].p_acc <= 3.0 + 1e-12)


def test_half_duplex_holds_in_trace(relay_run):
    _, _, sim, _, _, trace = relay_run
    relay_of = {a.edge_ue: a.relay_ue for a in sim.assignments}
    ul_tx = {}
    for sf, _, link, kind, ue in trace.grants:
        if link == "UL" and kind != "none":
            ul_tx.setdefault(sf, set()).add(ue)
    for sf, _, edge, direction, state in trace.links:
        if state == "transmitting":
            ends = {edge, relay_of[edge]}
            assert not ends & ul_tx.get(sf, set())


def test_active_links_recomputed_from_trace(relay_run):
    cfg, world, _, _, m, trace = relay_run
    transmitting = sum(1 for row in trace.links if row[4] == "transmitting")
    want = transmitting / (cfg.run.subframes * world.layout.n_sectors)
    assert m.active_links_per_sector == pytest.approx(want, rel=1e-12)


def test_grant_trace_matches_flow_directions(relay_run):
    _, _, sim, _, _, trace = relay_run
    relays = {a.relay_ue for a in sim.assignments if a.relayed}
    for _, _, _, kind, ue in trace.grants:
        if kind == "backhaul":
            assert ue in relays


def test_pruning_replays_from_logged_estimates(relay_run):
    cfg, _, sim, initial, _, _ = relay_run
    again = prune_relays(initial, sim.estimates, cfg.relay.prune_threshold)
    assert [a.relay_ue for a in again] == [a.relay_ue for a in sim.assignments]
    assert sum(a.relayed for a in sim.assignments) <= sum(a.relayed for a in initial)
    for a in sim.assignments:
        if a.relayed:
            e = sim.estimates[a.edge_ue]
            assert e.through_relay >= 1.05 * e.direct


def test_relays_improve_dl_sinr(relay_run):
    _, world, sim, _, _, _ = relay_run
    for a in sim.assignments:
        if a.relay_ue != NO_RELAY:
            assert world.dl_sinr[a.relay_ue] > world.dl_sinr[a.edge_ue]


# -- metrics -----------------------------------------------------------------


def _fake(seed: int) -> DropMetrics:
    rng = np.random.default_rng(seed)
    n = 6
    return DropMetrics(
        n_subframes=10, n_sectors=3,
        dl_direct_bits=rng.integers(0, 100, n).astype(float), dl_relay_bits=rng.integers(0, 2, n) * 50.0,
        ul_direct_bits=rng.integers(0, 100, n).astype(float), ul_relay_bits=rng.integers(0, 2, n) * 30.0,
        dl_sinr=rng.normal(5, 5, n), ul_sinr=rng.normal(5, 5, n), access_sinr=rng.normal(15, 3, 3),
        access_direction=np.array([0, 1, 0]), active_links_per_sector=float(rng.uniform(0, 4)),
        active_links_by_subframe=rng.integers(0, 5, 10).astype(float),
        enb_signal=rng.uniform(1e-10, 1e-8, 30), enb_ici=rng.uniform(1e-11, 1e-9, 30),
        enb_access=rng.uniform(0, 1e-10, 30),
    )


def test_merge_identity_and_commutativity():
    a = MetricsAccumulator("k", {0: _fake(0), 2: _fake(2)})
    b = MetricsAccumulator("k", {1: _fake(1)})
    empty = MetricsAccumulator("k")
    assert a.merge(empty).statistics() == a.statistics()
    assert a.merge(b).statistics() == b.merge(a).statistics()
    c = MetricsAccumulator("k", {3: _fake(3)})
    assert a.merge(b).merge(c).statistics() == a.merge(b.merge(c)).statistics()
    with pytest.raises(ValueError):
        a.merge(MetricsAccumulator("other"))
    with pytest.raises(ValueError):
        a.merge(a)


def test_merged_equals_concatenation():
    parts = [MetricsAccumulator("k", {d: _fake(d)}) for d in range(10)]
    merged = parts[0]
    for p in parts[1:]:
        merged = merged.merge(p)
    rates = np.concatenate([_fake(d).dl_rate for d in range(10)])
    np.testing.assert_array_equal(merged.samples("dl_rate"), rates)
    want = cdf_and_percentiles(rates)[2]
    assert merged.statistics()["dl_rate_p50_mbps"] == want[50] / 1e3


def test_percentile_examples():
    x = np.arange(1, 101, dtype=float)
    assert cdf_and_percentiles(x)[2][50] == 50.0
    assert cdf_and_percentiles(x)[2][5] == 5.0
    one = cdf_and_percentiles([3.5])[2]
    assert one[5] == one[50] == 3.5
    with pytest.raises(ValueError):
        cdf_and_percentiles([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300), st.sampled_from([1, 5, 10, 50, 90, 100]))
@settings(max_examples=200)
def test_percentile_matches_sort_and_index(values, p):
    x = sorted(values)
    k = max(int(np.ceil(p * len(x) / 100)) - 1, 0)
    assert cdf_and_percentiles(values, percentiles=(p,))[2][p] == x[k]
    assert lower_percentile(np.array(x), p / 100) == x[k]


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=3000))
@settings(max_examples=50)
def test_cdf_is_monotone_and_ends_at_one(values):
    probes, cdf, _ = cdf_and_percentiles(values)
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[-1] == 1.0
    assert len(probes) <= 1001
