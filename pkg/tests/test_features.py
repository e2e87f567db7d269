import math

import numpy as np
import pytest

from crashcast.emissions import DEFAULT_COEFFICIENTS, EmissionCoefficients, emission_rate
from crashcast.errors import DataError
from crashcast.features import (FeatureTensor, aggregate, inverse_standardize,
                                read_feature_csv, standardize, time_bin,
                                travel_time_index, write_feature_csv)
from crashcast.network import grid_network
from crashcast.simulator import (CollisionRecord, EdgeTraversal, RunSummary,
                                 ScenarioResult, StepRecord, build_vehicle_specs,
                                 run_baseline)
from crashcast.util import ceil_quantile

DT = 0.5


class TestTravelTimeIndex:
    def test_freeflow_baseline(self):
        assert travel_time_index(10.0, 10.0) == 1.0

    def test_congested_ratio(self):
        assert travel_time_index(25.0, 10.0) == 2.5

    def test_zero_dwell(self):
        assert travel_time_index(0.0, 10.0) == 0.0

    def test_bad_freeflow(self):
        with pytest.raises(DataError):
            travel_time_index(5.0, 0.0)


class TestEmissionRate:
    def test_idle_is_c0(self):
        c = EmissionCoefficients(0.7, 1, 1, 1, 1, 1)
        assert emission_rate(0.0, 0.0, c) == 0.7

    def test_hand_evaluated_polynomial(self):
        c = EmissionCoefficients(1.0, 0.1, 0.05, 0.2, 0.01, 0.001)
        # 1 + 0.1*10*1 + 0.05*10*1 + 0.2*10 + 0.01*100 + 0.001*1000
        assert emission_rate(10.0, 1.0, c) == pytest.approx(6.5)

    def test_negative_clamped(self):
        c = EmissionCoefficients(-5.0, 0, 0, 0, 0, 0)
        assert emission_rate(3.0, 0.0, c) == 0.0

    def test_negative_speed_rejected(self):
        with pytest.raises(ValueError):
            emission_rate(-1.0, 0.0, DEFAULT_COEFFICIENTS["PV"])


def synthetic_result(graph):
    """Hand-built logs on a 2x2 grid edge for aggregation arithmetic checks."""
    eid = graph.edges[0].id
    other = graph.edges[1].id
    records = [
        StepRecord("v1", "PV", eid, 0.5, 10.0, 0.0, 0.5, 0.111),
        StepRecord("v1", "PV", eid, 1.0, 10.0, 0.0, 1.0, 0.222),
        StepRecord("v1", "PV", eid, 30.5, 10.0, 0.0, 30.5, 0.333),   # second bin
        StepRecord("v2", "PV", other, 0.5, 5.0, 0.0, 0.5, 0.444),
    ]
    traversals = [
        EdgeTraversal("v1", eid, 12.0, 25.0),    # ratio 12/10 in bin 0
        EdgeTraversal("v1", other, 10.0, 55.0),  # ratio 1.0 in bin 1
    ]
    baseline = ScenarioResult(
        records=[],
        traversals=[EdgeTraversal("v1", eid, 10.0, 20.0),
                    EdgeTraversal("v1", other, 10.0, 30.0)],
        collisions=[], summary=RunSummary())
    scenario = ScenarioResult(
        records=records, traversals=traversals,
        collisions=[CollisionRecord("ev0", "rear", "l", "f", 1.0, 2.0, 40.0, eid)],
        summary=RunSummary())
    return scenario, baseline, eid, other


class TestAggregate:
    def test_time_bins_are_left_open(self):
        assert time_bin(0.5, 30.0) == 0
        assert time_bin(30.0, 30.0) == 0
        assert time_bin(30.5, 30.0) == 1
        assert time_bin(60.0, 30.0) == 1

    def test_arithmetic_on_synthetic_logs(self):
        g = grid_network(2, 2, block_m=100.0, vmax_mps=10.0)
        scenario, baseline, eid, other = synthetic_result(g)
        t = aggregate(scenario, baseline, g, bin_s=30.0, horizon_s=60.0, dt=DT)
        i, j = t.edge_row(eid), t.edge_row(other)
        assert t.values[i, 0, 0] == pytest.approx(1.2)        # 12/10
        assert t.values[j, 1, 0] == pytest.approx(1.0)
        # ce: fsum of step emissions per bin
        assert t.values[i, 0, 1] == math.fsum([0.111, 0.222])
        assert t.values[i, 1, 1] == 0.333
        assert t.values[j, 0, 1] == 0.444
        # speed means
        assert t.values[i, 0, 2] == pytest.approx(10.0)
        assert t.values[j, 0, 2] == pytest.approx(5.0)
        # collision flag set once
        assert t.values[i, 1, 3] == 1.0
        assert t.values[:, :, 3].sum() == 1.0

    def test_untouched_bins_neutral_fill(self):
        g = grid_network(2, 2, block_m=100.0, vmax_mps=10.0)
        scenario, baseline, eid, other = synthetic_result(g)
        t = aggregate(scenario, baseline, g, bin_s=30.0, horizon_s=60.0, dt=DT)
        untouched = t.edge_row(g.edges[2].id)
        assert np.all(t.values[untouched, :, 0] == 1.0)
        assert np.all(t.values[untouched, :, 1] == 0.0)
        assert np.all(t.values[untouched, :, 2] == 10.0)

    def test_missing_baseline_alignment_violation(self):
        g = grid_network(2, 2)
        scenario, baseline, *_ = synthetic_result(g)
        baseline.traversals.pop()
        with pytest.raises(DataError, match="alignment"):
            aggregate(scenario, baseline, g, bin_s=30.0, horizon_s=60.0, dt=DT)

    def test_bin_width_must_be_dt_multiple(self):
        g = grid_network(2, 2)
        scenario, baseline, *_ = synthetic_result(g)
        with pytest.raises(DataError):
            aggregate(scenario, baseline, g, bin_s=0.7, horizon_s=60.0, dt=DT)

    def test_freeflow_self_comparison_tti_is_one(self):
        g = grid_network(3, 3)
        specs = build_vehicle_specs(g, {"PV": 6, "bus": 2}, seed=5, depart_window_s=60.0)
        base = run_baseline(g, specs, dt=DT)
        horizon = max(r.t for r in base.records) + DT
        t = aggregate(base, base, g, bin_s=30.0, horizon_s=horizon, dt=DT)
        assert np.allclose(t.values[:, :, 0], 1.0)

    def test_ce_mass_conservation_and_recount(self):
        g = grid_network(3, 3)
        specs = build_vehicle_specs(g, {"PV": 6}, seed=8, depart_window_s=60.0)
        base = run_baseline(g, specs, dt=DT)
        horizon = max(r.t for r in base.records) + DT
        t = aggregate(base, base, g, bin_s=30.0, horizon_s=horizon, dt=DT)
        for i, eid in enumerate(t.edge_ids):
            # brute-force recount: same fsum grouping must be bit-identical
            groups: dict[int, list[float]] = {}
            n_rows = 0
            for r in base.records:
                if r.edge_id == eid:
                    groups.setdefault(min(time_bin(r.t, 30.0), t.n_bins - 1),
                                      []).append(r.ce_step)
                    n_rows += 1
            for b in range(t.n_bins):
                expect = math.fsum(groups.get(b, []))
                assert t.values[i, b, 1] == expect
            # partition property: every step row lands in exactly one bin
            assert sum(len(v) for v in groups.values()) == n_rows
            # edge totals agree up to float re-association
            assert math.fsum(t.values[i, :, 1]) == pytest.approx(
                math.fsum(r.ce_step for r in base.records if r.edge_id == eid),
                rel=0, abs=1e-9)

    def test_obstructed_bins_keep_tti_at_least_one(self):
        from crashcast.simulator import ScriptedEvent, run_scenario
        from crashcast.network import Edge, Node, RoadGraph
        from crashcast.simulator import VehicleSpec
        g = RoadGraph(
            nodes=[Node("a", 0, 0, "entry"), Node("b", 200, 0), Node("c", 400, 0, "exit")],
            edges=[Edge("ab", "a", "b", 200, 15), Edge("bc", "b", "c", 200, 15)])
        specs = [VehicleSpec.from_class("lead", "PV", ["ab", "bc"], 0.0),
                 VehicleSpec.from_class("foll", "PV", ["ab", "bc"], 12.0),
                 VehicleSpec.from_class("qu01", "PV", ["ab", "bc"], 30.0),
                 VehicleSpec.from_class("qu02", "PV", ["ab", "bc"], 40.0)]
        ev = ScriptedEvent("ev0", "rear", "lead", "foll", trigger_s=10.0,
                           dwell_s=60.0, clearance_s=5.0, stop_edge="bc")
        scenario = run_scenario(g, specs, [ev], dt=DT, horizon_s=400.0)
        baseline = run_baseline(g, specs, dt=DT)
        t = aggregate(scenario, baseline, g, bin_s=30.0, horizon_s=400.0, dt=DT)
        i = t.edge_row("bc")
        t_c = scenario.collisions[0].t
        obstructed = range(int(t_c // 30.0), t.n_bins)
        ff = 200.0 / 15.0
        assert all(t.values[i, b, 0] >= 1.0 - DT / ff - 1e-9 for b in obstructed)
        assert t.values[i, :, 0].max() >= 1.5   # queue raised dwell on the stop edge

    def test_spike_flag_matches_percentile_oracle(self):
        g = grid_network(3, 3)
        specs = build_vehicle_specs(g, {"PV": 10}, seed=13, depart_window_s=120.0)
        base = run_baseline(g, specs, dt=DT)
        horizon = max(r.t for r in base.records) + DT
        t = aggregate(base, base, g, bin_s=30.0, horizon_s=horizon, dt=DT, spike_percentile=0.9)
        for i in range(t.n_edges):
            series = t.values[i, :, 0]
            n = len(series)
            threshold = sorted(series)[math.ceil(0.9 * n) - 1]   # independent oracle
            np.testing.assert_array_equal(t.values[i, :, 4],
                                          (series >= threshold).astype(float))


class TestStandardize:
    def two_bin_tensor(self):
        values = np.zeros((1, 2, 5))
        values[0, :, 0] = [1.0, 3.0]
        values[0, :, 1] = [4.0, 4.0]     # constant channel
        values[0, :, 2] = [0.0, 2.0]
        values[0, :, 3] = [0.0, 1.0]
        values[0, :, 4] = [1.0, 0.0]
        return FeatureTensor(values=values, mu=np.zeros((1, 5)), sigma=np.ones((1, 5)),
                             edge_ids=["e"], bin_s=30.0)

    def test_hand_computed_zscores(self):
        std = standardize(self.two_bin_tensor())
        np.testing.assert_allclose(std.values[0, :, 0], [-1.0, 1.0])
        assert std.mu[0, 0] == 2.0 and std.sigma[0, 0] == 1.0   # population variance

    def test_constant_channel_zeroed(self):
        std = standardize(self.two_bin_tensor())
        np.testing.assert_array_equal(std.values[0, :, 1], [0.0, 0.0])
        assert std.sigma[0, 1] == 0.0

    def test_binary_channels_untouched(self):
        t = self.two_bin_tensor()
        std = standardize(t)
        np.testing.assert_array_equal(std.values[0, :, 3], t.values[0, :, 3])
        np.testing.assert_array_equal(std.values[0, :, 4], t.values[0, :, 4])

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(0, 5, (4, 20, 5))
        values[:, :, 3] = (values[:, :, 3] > 2.5).astype(float)
        values[:, :, 4] = (values[:, :, 4] > 2.5).astype(float)
        t = FeatureTensor(values=values.copy(), mu=np.zeros((4, 5)), sigma=np.ones((4, 5)),
                          edge_ids=list("abcd"), bin_s=30.0)
        back = inverse_standardize(standardize(t))
        assert np.abs(back.values - values).max() < 1e-12
        np.testing.assert_array_equal(back.values[:, :, 3], values[:, :, 3])

    def test_standardized_mean_and_variance(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(0, 9, (3, 50, 5))
        t = FeatureTensor(values=values, mu=np.zeros((3, 5)), sigma=np.ones((3, 5)),
                          edge_ids=list("abc"), bin_s=30.0)
        std = standardize(t)
        for ch in (0, 1, 2):
            means = std.values[:, :, ch].mean(axis=1)
            assert np.abs(means).max() < 1e-9
            np.testing.assert_allclose(std.values[:, :, ch].std(axis=1), 1.0)

    def test_needs_two_bins(self):
        values = np.zeros((1, 1, 5))
        t = FeatureTensor(values=values, mu=np.zeros((1, 5)), sigma=np.ones((1, 5)),
                          edge_ids=["e"], bin_s=30.0)
        with pytest.raises(DataError):
            standardize(t)


class TestFileRoundTrip:
    def test_write_read_bit_exact(self, tmp_path):
        g = grid_network(2, 2, block_m=100.0, vmax_mps=10.0)
        scenario, baseline, *_ = synthetic_result(g)
        t = aggregate(scenario, baseline, g, bin_s=30.0, horizon_s=60.0, dt=DT)
        path = tmp_path / "features.csv"
        write_feature_csv(t, path, extra_meta={"config_hash": "x"})
        t2, meta = read_feature_csv(path)
        np.testing.assert_array_equal(t.values, t2.values)
        assert t2.edge_ids == t.edge_ids
        assert meta["config_hash"] == "x"
        # sidecar stats match a fresh standardization
        std = standardize(t)
        np.testing.assert_array_equal(np.array(meta["mu"]), std.mu)
        np.testing.assert_array_equal(np.array(meta["sigma"]), std.sigma)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_feature_csv(tmp_path / "nope.csv")


class TestCeilQuantile:
    def test_spec_examples(self):
        assert ceil_quantile([0.0, 0.0, 0.0, 1.0], 0.75) == 0.0
        values = list(range(1, 101))
        assert ceil_quantile(values, 0.95) == 95
        assert sum(1 for v in values if v >= 95) == 6

    def test_single_value(self):
        assert ceil_quantile([7.0], 0.9) == 7.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ceil_quantile([], 0.5)
