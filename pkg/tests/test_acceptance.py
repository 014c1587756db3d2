"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from mlfpn import NetworkConfig, build_model, mtsr
from mlfpn.cli import main
from mlfpn.head import generate_anchors, soft_nms_linear
from mlfpn.mlfpn import mlfpn_forward
from mlfpn.pipeline import forward
from mlfpn.tensor import ConvParams, conv2d
from mlfpn.verify import activation_profile, count_params, trace_shapes
from mlfpn.verify.params import reference_marginal_check
from mlfpn.verify.suites import run_grads, run_nms, toy_config
from mlfpn.verify.trace import pyramid_rows

from helpers import small_config
from oracles import conv2d_loops, profile_loops

SIZES_320 = [40, 20, 10, 5, 3, 1]


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}"
                  + (f" ({detail})" if detail else ""))
        assert ok, detail

    return emit


def test_criterion_1_shape_contract(report, image320):
    cfg = NetworkConfig()
    start = time.perf_counter()
    symbolic = [r.out_shape for r in pyramid_rows(trace_shapes(cfg))]
    symbolic_s = time.perf_counter() - start

    start = time.perf_counter()
    executed = [p.features.shape for p in forward(image320, build_model(cfg)).pyramid]
    executed_s = time.perf_counter() - start

    want = [(1, 2048, f, f) for f in SIZES_320]
    ok = symbolic == want and executed == want and symbolic_s < 1 and executed_s < 30
    report(1, "shape contract", ok,
           f"scales {[s[2] for s in executed]} x {executed[0][1]}ch; "
           f"symbolic {symbolic_s:.3f}s, executed incl. init {executed_s:.1f}s")


def test_criterion_2_recursion_truncation(report, default_forward, image320):
    mismatches = []
    for k in (1, 2, 4):
        short = forward(image320, build_model(NetworkConfig(num_tums=k)))
        for l in range(k):
            for i, (a, b) in enumerate(zip(default_forward.levels[l].features, short.levels[l].features)):
                if a.tobytes() != b.tobytes():
                    mismatches.append((k, l + 1, i + 1))
    # mlfpn_forward on its own, from the same backbone taps
    _, direct = mlfpn_forward(default_forward.shallow, default_forward.deep,
                              build_model(NetworkConfig(num_tums=2)))
    for l in range(2):
        for a, b in zip(default_forward.levels[l].features, direct[l].features):
            if a.tobytes() != b.tobytes():
                mismatches.append(("direct", l + 1))
    report(2, "L=8 truncated to k in {1, 2, 4} == L=k run", not mismatches,
           "bit-identical" if not mismatches else f"mismatches {mismatches[:5]}")


def test_criterion_3_se_gradients(report):
    res = run_grads(trials=100, seed=0)
    report(3, "SE analytic vs finite-difference gradients", res.passed, "; ".join(res.lines))


def test_criterion_4_soft_nms(report):
    res = run_nms(trials=1000, seed=0)
    box = [0.1, 0.1, 0.5, 0.5]
    # With the cutoff disabled the second identical box comes out at exactly 0.
    identical = soft_nms_linear([box, box], [0.9, 0.8], final_cutoff=0.0)
    identical_ok = [d.score for d in identical] == [0.9, 0.0]
    identical_default = len(soft_nms_linear([box, box], [0.9, 0.8])) == 1
    third = soft_nms_linear([[0, 0, 1, 1], [0, 0.5, 1, 1.5]], [0.9, 0.8])
    third_ok = len(third) == 2 and abs(third[1].score - 0.8 * 2 / 3) <= 1e-6
    ok = res.passed and identical_ok and identical_default and third_ok
    report(4, "soft-NMS vs oracle and hand examples", ok,
           f"{res.lines[0]}; identical boxes -> {[d.score for d in identical]}; "
           f"IoU 1/3 -> {third[1].score:.7f}")


def test_criterion_5_anchor_geometry(report):
    n320 = len(generate_anchors(NetworkConfig()))
    cfg512 = NetworkConfig(input_size=512)
    grids = [r.out_shape[2] for r in pyramid_rows(trace_shapes(cfg512))]
    n512 = len(generate_anchors(cfg512))
    closed = sum(f * f * 6 for f in grids)
    report(5, "anchor counts", n320 == 12810 and n512 == closed,
           f"320: {n320}; 512 grids {grids}: {n512} vs closed form {closed}")


def test_criterion_6_parameter_accounting(report):
    toy = toy_config(num_tums=2)
    backbone = (27 * 64 + 64) + (576 * 128 + 128) + (1152 * 8 + 8) + (72 * 16 + 16)
    ffm = (72 * 8 + 8) + (16 * 8 + 8) + (16 * 16 + 16) + (16 * 8 + 8)
    tum = (144 * 8 + 8) + 4 * (72 * 8 + 8) + (16 * 8 + 8) + 4 * (8 * 8 + 8) + 5 * (8 * 8 + 8)
    sfam = 6 * (16 * 4 + 4 + 4 * 16 + 16)
    heads = 6 * ((144 * 24 + 24) + (144 * 12 + 12))
    closed = backbone + ffm + 2 * tum + sfam + heads
    total = count_params(toy).total
    pc = reference_marginal_check(NetworkConfig(tum_channels=256), tolerance=0.20)
    ok = total == closed and pc["reference"] == pytest.approx(10.05e6) and pc["ok"]
    report(6, "parameter accounting", ok,
           f"toy {total:,} vs closed form {closed:,}; marginal/TUM {pc['ours'] / 1e6:.3f}M "
           f"vs {pc['reference'] / 1e6:.2f}M +-20%")


def test_criterion_7_conv_oracle(report):
    rng = np.random.default_rng(2024)
    bad, cases = [], 0
    while cases < 100:
        n, ci, co = (int(v) for v in rng.integers(1, [3, 9, 9]))
        h, w = (int(v) for v in rng.integers(1, 17, size=2))
        k = int(rng.choice([1, 3, 5]))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, k // 2 + 1))
        if (h + 2 * pad - k) // stride + 1 < 1 or (w + 2 * pad - k) // stride + 1 < 1:
            continue
        x = rng.uniform(-1, 1, (n, ci, h, w)).astype(np.float32)
        wt = rng.uniform(-1, 1, (co, ci, k, k)).astype(np.float32)
        b = rng.uniform(-1, 1, co).astype(np.float32)
        got = conv2d(x, ConvParams(wt, b, stride, pad))
        if got.tobytes() != conv2d_loops(x, wt, b, stride, pad).tobytes():
            bad.append(cases)
        cases += 1
    report(7, "conv2d == 6-loop reference", not bad,
           f"{cases} cases up to 2x8x16x16, exact" if not bad else f"mismatching cases {bad[:10]}")


def _detect(cfg_path, image_path, out, extra=()):
    code = main(["detect", "--config", str(cfg_path), "--input", str(image_path),
                 "--out", str(out), *extra])
    return code, out.read_bytes()


def test_criterion_8_determinism(report, tmp_path, image320):
    image_path = tmp_path / "img.mtsr"
    mtsr.save(image_path, image320)
    outcomes = {}
    for label, cfg in (("default", NetworkConfig(seed=11)), ("K=5", small_config(seed=11))):
        cfg_path = tmp_path / f"{label}.json"
        cfg_path.write_text(cfg.to_json())
        runs = [_detect(cfg_path, image_path, tmp_path / f"{label}-{i}.json") for i in range(3)]
        same = all(code == 0 for code, _ in runs) and len({doc for _, doc in runs}) == 1
        outcomes[label] = (same, len(json.loads(runs[0][1])))

    zero_cfg = tmp_path / "zero.json"
    zero_cfg.write_text(NetworkConfig().to_json())
    params = tmp_path / "zero-params"
    main(["init", "--config", str(zero_cfg), "--zero", "--out", str(params)])
    code, doc = _detect(zero_cfg, image_path, tmp_path / "zero.json.out",
                        ["--params", str(params)])
    ok = all(s for s, _ in outcomes.values()) and outcomes["K=5"][1] > 0 and code == 0 and doc == b"[]"
    report(8, "detect determinism and zero-weight K=81 output", ok,
           f"3 runs byte-identical: default ({outcomes['default'][1]} boxes) "
           f"{outcomes['default'][0]}, K=5 ({outcomes['K=5'][1]} boxes) {outcomes['K=5'][0]}; "
           f"zero K=81 -> {doc.decode()}")


def test_criterion_9_activation_profiler(report, small_model, image320):
    cfg = small_model.cfg
    L, C = cfg.num_tums, cfg.tum_channels
    aggs = [p.aggregated for p in forward(image320, small_model).pyramid]
    prof = activation_profile(aggs, L, C)
    shape_ok = prof.shape == (6, L)
    ones = activation_profile([np.ones_like(a) for a in aggs], L, C)
    ones_ok = np.all(ones == 1.0)
    zeroed = [a.copy() for a in aggs]
    for a in zeroed:
        a[:, C:2 * C] = 0
    z = activation_profile(zeroed, L, C)
    zero_ok = not z[:, 1].any()
    err = np.abs(prof - profile_loops(aggs, L, C)).max()
    ok = shape_ok and ones_ok and zero_ok and err <= 1e-6
    report(9, "activation profiler", ok,
           f"shape {prof.shape}; ones -> 1.0: {ones_ok}; zeroed column: {zero_ok}; "
           f"max |diff| vs loops {err:.1e}")
