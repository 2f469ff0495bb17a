"""CSV ingestion, round trips, and synthetic moment matching."""

import numpy as np
import pytest

from tierpricing.domain import (
    DemandModel,
    DomainError,
    FittedFlow,
    FlowRecord,
    MarketParams,
    MissingColumn,
    ParseError,
)
from tierpricing.ingestion import (
    DatasetMoments,
    SYNTH_PRESETS,
    flow_arrays,
    preset_moments,
    read_fitted_csv,
    read_flows_csv,
    read_params_csv,
    synth_generate,
    write_fitted_csv,
    write_flows_csv,
    write_params_csv,
)


class TestReadFlows:
    def _write(self, tmp_path, text):
        path = tmp_path / "flows.csv"
        path.write_text(text, encoding="utf-8")
        return path

    def test_duplicate_ids_aggregate(self, tmp_path):
        path = self._write(tmp_path, (
            "flow_id,demand_mbps,distance_miles,region,dest_type\n"
            "a,3,10,,\n"
            "a,4,10,,\n"
        ))
        flows = read_flows_csv(path)
        assert len(flows) == 1
        assert flows[0].demand_mbps == pytest.approx(7.0)
        assert flows[0].distance_miles == pytest.approx(10.0)

    def test_duplicate_distance_demand_weighted(self, tmp_path):
        path = self._write(tmp_path, (
            "flow_id,demand_mbps,distance_miles,region,dest_type\n"
            "a,1,0,,\n"
            "a,3,40,,\n"
        ))
        flows = read_flows_csv(path)
        assert flows[0].distance_miles == pytest.approx(30.0)

    def test_zero_demand_dropped_with_warning(self, tmp_path, caplog):
        path = self._write(tmp_path, (
            "flow_id,demand_mbps,distance_miles,region,dest_type\n"
            "a,0,10,,\n"
            "b,0,20,,\n"
            "c,5,30,,\n"
        ))
        with caplog.at_level("WARNING"):
            flows = read_flows_csv(path)
        assert [f.flow_id for f in flows] == ["c"]
        assert "2" in caplog.text

    def test_labels_honored(self, tmp_path):
        path = self._write(tmp_path, (
            "flow_id,demand_mbps,distance_miles,region,dest_type\n"
            "a,5,500,metro,peer\n"
        ))
        flow = read_flows_csv(path)[0]
        assert flow.region == "metro"
        assert flow.dest_type == "peer"

    def test_optional_columns_may_be_absent(self, tmp_path):
        path = self._write(tmp_path, "flow_id,demand_mbps,distance_miles\na,5,10\n")
        assert read_flows_csv(path)[0].region is None

    def test_missing_required_column(self, tmp_path):
        path = self._write(tmp_path, "flow_id,demand_mbps\na,5\n")
        with pytest.raises(MissingColumn):
            read_flows_csv(path)

    def test_bad_number_reports_line(self, tmp_path):
        path = self._write(tmp_path, (
            "flow_id,demand_mbps,distance_miles\n"
            "a,5,10\n"
            "b,oops,10\n"
        ))
        with pytest.raises(ParseError) as err:
            read_flows_csv(path)
        assert err.value.line == 3


class TestRoundTrips:
    def test_flows_bit_identical(self, tmp_path):
        rng = np.random.default_rng(2)
        flows = [
            FlowRecord(f"f{i}", float(rng.lognormal(1, 1.7)), float(rng.uniform(0, 900)),
                       region="metro" if i % 3 == 0 else None,
                       dest_type="peer" if i % 2 else None)
            for i in range(50)
        ]
        path = tmp_path / "flows.csv"
        write_flows_csv(path, flows)
        assert read_flows_csv(path) == flows

    def test_fitted_bit_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        fitted = [
            FittedFlow(f"f{i}", float(rng.lognormal(1, 1.5)), float(rng.uniform(1, 900)),
                       float(rng.uniform(1, 40)), float(rng.uniform(0.1, 10)),
                       class_label="national" if i % 2 else None)
            for i in range(40)
        ]
        path = tmp_path / "fitted.csv"
        write_fitted_csv(path, fitted)
        assert read_fitted_csv(path) == fitted

    def test_params_bit_identical(self, tmp_path):
        for params in (
            MarketParams(DemandModel.CED, alpha=1.1, p0=20.0),
            MarketParams(DemandModel.LOGIT, alpha=0.7, p0=17.25,
                         s0=0.2, consumer_mass=12345.6789),
        ):
            path = tmp_path / "params.csv"
            write_params_csv(path, params)
            assert read_params_csv(path) == params


class TestSynth:
    def test_presets_carry_published_moments(self):
        eu = SYNTH_PRESETS["eu-isp"]
        assert (eu.weighted_avg_distance_miles, eu.cv_distance,
                eu.aggregate_gbps, eu.cv_demand) == (54.0, 0.70, 37.0, 1.71)
        cdn = SYNTH_PRESETS["cdn"]
        assert (cdn.weighted_avg_distance_miles, cdn.cv_distance,
                cdn.aggregate_gbps, cdn.cv_demand) == (1988.0, 0.59, 96.0, 2.28)
        i2 = SYNTH_PRESETS["internet2"]
        assert (i2.weighted_avg_distance_miles, i2.cv_distance,
                i2.aggregate_gbps, i2.cv_demand) == (660.0, 0.54, 4.0, 4.53)

    @pytest.mark.parametrize("preset", ["eu-isp", "internet2"])
    def test_sample_moments_within_tolerance(self, preset):
        moments = preset_moments(preset, n_flows=10_000, seed=7)
        _, q, d = flow_arrays(synth_generate(moments))
        assert q.sum() == pytest.approx(moments.aggregate_gbps * 1000.0, rel=1e-9)
        assert q.std() / q.mean() == pytest.approx(moments.cv_demand, rel=0.05)
        assert d.std() / d.mean() == pytest.approx(moments.cv_distance, rel=0.05)
        w_avg = np.sum(q * d) / q.sum()
        assert w_avg == pytest.approx(moments.weighted_avg_distance_miles, rel=0.05)

    def test_deterministic_given_seed(self):
        m = preset_moments("eu-isp", n_flows=500, seed=42)
        a = synth_generate(m)
        b = synth_generate(m)
        assert a == b

    def test_seeds_differ(self):
        a = synth_generate(preset_moments("eu-isp", n_flows=100, seed=1))
        b = synth_generate(preset_moments("eu-isp", n_flows=100, seed=2))
        assert a != b

    def test_degenerate_cv_gives_constant_values(self):
        m = DatasetMoments(n_flows=50, weighted_avg_distance_miles=10.0,
                           cv_distance=0.0, aggregate_gbps=1.0, cv_demand=0.0, seed=0)
        _, q, d = flow_arrays(synth_generate(m))
        np.testing.assert_allclose(q, 1000.0 / 50)
        np.testing.assert_allclose(d, 10.0)

    def test_moment_validation(self):
        with pytest.raises(DomainError):
            DatasetMoments(0, 10.0, 0.5, 1.0, 0.5)
        with pytest.raises(DomainError):
            DatasetMoments(10, -1.0, 0.5, 1.0, 0.5)
        with pytest.raises(DomainError):
            preset_moments("nonexistent")
