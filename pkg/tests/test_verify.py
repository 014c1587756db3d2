import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlfpn import NetworkConfig
from mlfpn.errors import ConfigError, ConsistencyError
from mlfpn.head import soft_nms_linear
from mlfpn.tracing import ShapeTrace
from mlfpn.verify import (
    activation_profile,
    compare_traces,
    count_params,
    fd_gradient_harness,
    profile_csv,
    soft_nms_oracle,
    trace_shapes,
)
from mlfpn.verify.gradcheck import check_se_instance, random_se_instance
from mlfpn.verify.params import reference_marginal_check
from mlfpn.verify.suites import executed_trace, random_candidates, run, toy_config
from mlfpn.verify.trace import pyramid_rows

from oracles import profile_loops


def hand_toy_trace():
    """(name, out_shape) for the L=1, C=8 toy network, written out by hand."""
    rows = [
        ("backbone.stage1.conv1", (1, 64, 160, 160)),
        ("backbone.stage2.conv1", (1, 128, 80, 80)),
        ("backbone.stage3.conv1", (1, 8, 40, 40)),
        ("backbone.stage4.conv1", (1, 16, 20, 20)),
        ("ffm1.shallow", (1, 8, 40, 40)),
        ("ffm1.deep", (1, 8, 20, 20)),
        ("ffm1.upsample", (1, 8, 40, 40)),
        ("ffm1.concat", (1, 16, 40, 40)),
        ("ffm2.1", (1, 16, 40, 40)),
        ("tum1.enc1", (1, 8, 20, 20)),
        ("tum1.enc2", (1, 8, 10, 10)),
        ("tum1.enc3", (1, 8, 5, 5)),
        ("tum1.enc4", (1, 8, 3, 3)),
        ("tum1.enc5", (1, 8, 1, 1)),
    ]
    for k, f in zip(range(4, -1, -1), (3, 5, 10, 20, 40)):
        for op in ("lat", "up", "sum", "smooth"):
            rows.append((f"tum1.{op}{k}", (1, 8, f, f)))
    sizes = (40, 20, 10, 5, 3, 1)
    rows += [(f"sfam.scale{i}.concat", (1, 8, f, f)) for i, f in enumerate(sizes, 1)]
    rows += [(f"sfam.scale{i}.se", (1, 8, f, f)) for i, f in enumerate(sizes, 1)]
    return rows


class TestTrace:
    def test_toy_matches_hand_table(self):
        trace = trace_shapes(toy_config())
        assert [(r.name, r.out_shape) for r in trace.records] == hand_toy_trace()

    def test_toy_execution_matches(self):
        compare_traces(trace_shapes(toy_config()), executed_trace(toy_config()))

    def test_small_execution_matches_batch2(self):
        cfg = toy_config(num_tums=3, input_size=512)
        compare_traces(trace_shapes(cfg, batch=2), executed_trace(cfg, batch=2))

    def test_default_pyramid(self):
        rows = pyramid_rows(trace_shapes(NetworkConfig()))
        assert [r.out_shape for r in rows] == [(1, 2048, f, f) for f in (40, 20, 10, 5, 3, 1)]
        assert trace_shapes(NetworkConfig()).records[-6:] == rows

    def test_chain_is_consistent(self):
        trace_shapes(NetworkConfig(input_size=512)).check_chain()

    def test_compare_reports_first_difference(self):
        a = trace_shapes(toy_config())
        b = ShapeTrace()
        b.inputs = dict(a.inputs)
        b.records = list(a.records)
        b.records[3] = dataclasses.replace(b.records[3], out_shape=(1, 1, 1, 1))
        with pytest.raises(ConsistencyError, match="record 3"):
            compare_traces(a, b)

    def test_chain_break_detected(self):
        t = ShapeTrace()
        t.add_input("x", (1, 1, 4, 4))
        t.add("a", "conv+relu", ["x"], [(1, 1, 5, 5)], (1, 1, 5, 5), 0)
        with pytest.raises(ConsistencyError):
            t.check_chain()

    def test_unreachable_schedule_rejected(self):
        with pytest.raises(ConfigError, match="TUM encoder"):
            toy_config(input_size=64)


class TestParams:
    def test_toy_closed_form(self):
        # L=2, C=8, K=2, bcs=bcd=8, shallow/deep 8/16, one conv per backbone stage, r=4
        backbone = (27 * 64 + 64) + (576 * 128 + 128) + (1152 * 8 + 8) + (72 * 16 + 16)
        ffm = (72 * 8 + 8) + (16 * 8 + 8) + (16 * 16 + 16) + (16 * 8 + 8)
        tum = (144 * 8 + 8) + 4 * (72 * 8 + 8) + (16 * 8 + 8) + 4 * (8 * 8 + 8) + 5 * (8 * 8 + 8)
        sfam = 6 * (16 * 4 + 4 + 4 * 16 + 16)
        heads = 6 * ((144 * 24 + 24) + (144 * 12 + 12))
        report = count_params(toy_config(num_tums=2))
        assert report.groups == {"backbone": backbone, "ffm": ffm, "tums": 2 * tum,
                                 "sfam": sfam, "heads": heads}
        assert report.total == backbone + ffm + 2 * tum + sfam + heads == 127_936

    def test_marginal_is_difference(self):
        cfg = toy_config(num_tums=2)
        assert count_params(cfg).marginal_per_tum == (
            count_params(cfg.replace(num_tums=3)).total - count_params(cfg).total
        )

    def test_reference_marginal_within_tolerance(self):
        pc = reference_marginal_check(NetworkConfig())
        assert pc["reference"] == pytest.approx(10.05e6)
        assert pc["ok"], pc

    def test_unknown_width_has_no_table_row(self):
        assert reference_marginal_check(NetworkConfig(tum_channels=64))["reference"] is None

    def test_report_formats(self):
        report = count_params(toy_config())
        assert '"total"' in report.to_json()
        assert report.to_table().splitlines()[-2].startswith("total")


class TestFdHarness:
    def test_square(self):
        res = fd_gradient_harness(lambda p: float(p["x"][0] ** 2), {"x": np.array([3.0])},
                                  {"x": np.array([6.0])})
        assert res.max_rel_error < 1e-9

    def test_wrong_gradient_flagged(self):
        res = fd_gradient_harness(lambda p: float(p["x"][0] ** 2), {"x": np.array([3.0])},
                                  {"x": np.array([5.0])})
        assert res.max_rel_error == pytest.approx(1 / 6, rel=1e-6)
        assert res.worst == ("x", 0)

    def test_se_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert check_se_instance(*random_se_instance(rng)).max_rel_error < 1e-4


class TestNmsOracle:
    def test_examples(self):
        got = soft_nms_oracle([((0, 0, 1, 1), 0.9), ((0, 0.5, 1, 1.5), 0.8)])
        assert got[1].score == pytest.approx(0.8 * 2 / 3, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_implementation_matches(self, seed):
        boxes, scores = random_candidates(np.random.default_rng(seed))
        got = soft_nms_linear(boxes, scores, top_k=None)
        want = soft_nms_oracle(list(zip(boxes.tolist(), scores.tolist())))
        assert [d.box for d in got] == [d.box for d in want]
        np.testing.assert_allclose([d.score for d in got], [d.score for d in want], atol=1e-6)


class TestProfile:
    def test_ones(self):
        aggs = [np.ones((1, 6, f, f), np.float32) for f in (4, 2, 1)]
        np.testing.assert_array_equal(activation_profile(aggs, 3, 2), np.ones((3, 3)))

    def test_zeroed_level(self, rng):
        aggs = [rng.uniform(-1, 1, (2, 6, f, f)).astype(np.float32) for f in (4, 2, 1)]
        for a in aggs:
            a[:, 2:4] = 0
        prof = activation_profile(aggs, 3, 2)
        assert not prof[:, 1].any() and prof[:, [0, 2]].all()

    def test_matches_loops(self, rng):
        aggs = [rng.normal(size=(2, 8, f, f)).astype(np.float32) for f in (5, 3, 1)]
        np.testing.assert_allclose(activation_profile(aggs, 4, 2), profile_loops(aggs, 4, 2),
                                   rtol=0, atol=1e-6)

    def test_csv(self):
        text = profile_csv(np.array([[1.0, 2.0]]))
        assert text.splitlines() == ["scale,level,mean_abs", "1,1,1.0", "1,2,2.0"]

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            activation_profile([np.ones((1, 5, 2, 2))], 2, 2)


@pytest.mark.parametrize("suite", ["shapes", "grads", "nms", "params"])
def test_suites_pass(suite):
    cfg = toy_config(num_tums=2, tum_channels=16)
    results = run(suite, cfg, trials=20)
    assert all(r.passed for r in results), [r.lines for r in results]
