"""Verification suites behind ``mlfpn verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from mlfpn.config import ANCHORS_PER_CELL, NetworkConfig
from mlfpn.errors import ConsistencyError
from mlfpn.head import generate_anchors, soft_nms_linear
from mlfpn.mlfpn import se_attention, se_backward
from mlfpn.model import build_model, init_params
from mlfpn.pipeline import forward
from mlfpn.tracing import ShapeTrace
from mlfpn.verify.gradcheck import check_se_instance, random_se_instance
from mlfpn.verify.nms_oracle import soft_nms_oracle
from mlfpn.verify.params import count_params, reference_marginal_check, total_params
from mlfpn.verify.trace import compare_traces, pyramid_rows, trace_shapes

SUITES = ("shapes", "grads", "nms", "params")

GRAD_TOL = 1e-4
NMS_SCORE_TOL = 1e-6


@dataclass
class SuiteResult:
    name: str
    passed: bool = True
    lines: list = field(default_factory=list)
    counterexample: dict | None = None

    def fail(self, message: str, counterexample: dict) -> None:
        if self.passed:
            self.counterexample = {"suite": self.name, "message": message, **counterexample}
        self.passed = False
        self.lines.append(f"FAIL {message}")

    def ok(self, message: str) -> None:
        self.lines.append(f"ok   {message}")


def toy_config(**overrides) -> NetworkConfig:
    base = dict(
        input_size=320,
        num_tums=1,
        tum_channels=8,
        base_compress_shallow=8,
        base_compress_deep=8,
        se_reduction=4,
        num_classes=2,
        shallow_channels=8,
        deep_channels=16,
        stem_depth=1,
    )
    base.update(overrides)
    return NetworkConfig(**base)


def executed_trace(cfg: NetworkConfig, batch: int = 1) -> ShapeTrace:
    model = build_model(cfg)
    image = np.zeros((batch, 3, cfg.input_size, cfg.input_size), dtype=np.float32)
    trace = ShapeTrace()
    forward(image, model, trace)
    return trace


def run_shapes(cfg: NetworkConfig, seed: int = 0) -> SuiteResult:
    res = SuiteResult("shapes")
    for c in (cfg, cfg.replace(input_size=512), toy_config()):
        label = f"input {c.input_size}, L={c.num_tums}, C={c.tum_channels}"
        symbolic = trace_shapes(c)
        try:
            symbolic.check_chain()
            compare_traces(symbolic, executed_trace(c))
        except ConsistencyError as exc:
            res.fail(f"trace vs execution ({label}): {exc}", {"config": c.to_json()})
            continue
        rows = pyramid_rows(symbolic)
        sizes = [r.out_shape[2] for r in rows]
        res.ok(f"trace == execution ({label}); pyramid {sizes} x {rows[0].out_shape[1]}ch")
        anchors = len(generate_anchors(c))
        closed = sum(f * f * ANCHORS_PER_CELL for f in c.scale_sizes)
        if anchors != closed:
            res.fail(f"anchor count {anchors} != closed form {closed} ({label})", {"grids": c.scale_sizes})
        else:
            res.ok(f"anchors {anchors} == sum f^2 * 6 ({label})")
    if cfg == NetworkConfig():
        sizes = [r.out_shape[2] for r in pyramid_rows(trace_shapes(cfg))]
        if sizes != [40, 20, 10, 5, 3, 1] or len(generate_anchors(cfg)) != 12810:
            res.fail("default 320 contract", {"sizes": sizes})
    return res


def run_grads(trials: int = 100, seed: int = 0) -> SuiteResult:
    res = SuiteResult("grads")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(trials):
        params, upstream = random_se_instance(rng)
        r = check_se_instance(params, upstream)
        worst = max(worst, r.max_rel_error)
        if r.max_rel_error > GRAD_TOL:
            res.fail(
                f"trial {t}: relative error {r.max_rel_error:.3e} at {r.worst}",
                {"trial": t, "params": {k: v.tolist() for k, v in params.items()},
                 "upstream": upstream.tolist()},
            )
            break
    res.ok(f"{trials} SE instances, max relative error {worst:.3e} (tol {GRAD_TOL:g})")

    x = rng.uniform(-1, 1, (2, 8, 3, 3))
    g = rng.uniform(-1, 1, x.shape)
    z1, z2 = np.zeros((2, 8)), np.zeros((8, 2))
    _, s = se_attention(x, z1, np.zeros(2), z2, np.zeros(8))
    dx = se_backward(x, z1, np.zeros(2), z2, np.zeros(8), g)["x"]
    if np.all(s == 0.5) and np.array_equal(dx, 0.5 * g):
        res.ok("zero weights: s == 0.5 and dX == upstream / 2 exactly")
    else:
        res.fail("zero-weight SE case", {"s": s.tolist()})
    return res


def random_candidates(rng: np.random.Generator, max_boxes: int = 64):
    n = int(rng.integers(1, max_boxes + 1))
    xy = rng.uniform(0, 0.8, (n, 2))
    wh = rng.uniform(0.0, 0.4, (n, 2))
    boxes = np.concatenate([xy, xy + wh], axis=1)
    scores = rng.uniform(0.0, 1.0, n)
    if n > 1 and rng.random() < 0.3:
        boxes[1] = boxes[0]
    return boxes, scores


def run_nms(trials: int = 1000, seed: int = 0) -> SuiteResult:
    res = SuiteResult("nms")
    rng = np.random.default_rng(seed)
    for t in range(trials):
        boxes, scores = random_candidates(rng)
        got = soft_nms_linear(boxes, scores, 0.3, 0.01, top_k=None)
        want = soft_nms_oracle(list(zip(boxes.tolist(), scores.tolist())), 0.3, 0.01)
        same = len(got) == len(want) and all(
            a.box == b.box and abs(a.score - b.score) <= NMS_SCORE_TOL for a, b in zip(got, want)
        )
        if not same:
            res.fail(
                f"trial {t}: implementation and oracle disagree",
                {"trial": t, "boxes": boxes.tolist(), "scores": scores.tolist(),
                 "implementation": [(d.box, d.score) for d in got],
                 "oracle": [(d.box, d.score) for d in want]},
            )
            return res
    res.ok(f"{trials} random instances (<= 64 boxes): implementation == oracle")
    return res


def run_params(cfg: NetworkConfig, table_check: bool = False) -> SuiteResult:
    res = SuiteResult("params")
    toy = toy_config(num_tums=2)
    counted = count_params(toy).total
    materialised = sum(l.weight.size + l.bias.size for l in init_params(toy, zero=True).values())
    traced = trace_shapes(toy).total_params
    heads_from_report = count_params(toy).groups["heads"]
    if counted == materialised == traced + heads_from_report:
        res.ok(f"toy total {counted:,} == materialised == trace + heads")
    else:
        res.fail("toy parameter totals disagree",
                 {"report": counted, "materialised": materialised, "trace": traced})

    c = cfg.replace(input_size=320)
    levels = [1, 2, 4, 8]
    def non_se(L):
        groups = count_params(c.replace(num_tums=L)).groups
        return sum(v for k, v in groups.items() if k != "sfam")
    diffs = {non_se(L + 1) - non_se(L) for L in range(1, 8)}
    if len(diffs) == 1:
        res.ok(f"non-SE cost per TUM is constant: {diffs.pop():,}")
    else:
        res.fail("non-SE marginal cost varies with L", {"diffs": sorted(diffs)})

    totals = np.array([total_params(c.replace(num_tums=L)) for L in levels], dtype=np.float64)
    coef, *_ = np.linalg.lstsq(np.vander(np.array(levels, float), 3), totals, rcond=None)
    resid = np.abs(np.vander(np.array(levels, float), 3) @ coef - totals).max() / totals.max()
    if resid < 1e-6:
        res.ok(f"total = {coef[0]:.1f} L^2 + {coef[1]:.1f} L + {coef[2]:.1f} (residual {resid:.1e})")
    else:
        res.fail("total is not quadratic in L", {"totals": totals.tolist(), "residual": resid})

    if table_check:
        pc = reference_marginal_check(c)
        if pc["reference"] is None:
            res.lines.append(f"skip reference check: no table rows for {pc['channels']} channels")
        else:
            msg = (f"marginal per-TUM cost {pc['ours'] / 1e6:.3f}M vs table {pc['reference'] / 1e6:.3f}M "
                   f"(+-{pc['tolerance']:.0%})")
            if pc["ok"]:
                res.ok(msg)
            else:
                res.fail(msg, pc)
    return res


def run(suite: str, cfg: NetworkConfig, trials: int | None = None, seed: int = 0,
        table_check: bool = False) -> list[SuiteResult]:
    names = SUITES if suite == "all" else (suite,)
    results = []
    for name in names:
        start = time.perf_counter()
        if name == "shapes":
            r = run_shapes(cfg, seed)
        elif name == "grads":
            r = run_grads(100 if trials is None else trials, seed)
        elif name == "nms":
            r = run_nms(1000 if trials is None else trials, seed)
        elif name == "params":
            r = run_params(cfg, table_check)
        else:
            raise ValueError(f"unknown suite {name!r}")
        r.lines.append(f"({time.perf_counter() - start:.1f}s)")
        results.append(r)
    return results
