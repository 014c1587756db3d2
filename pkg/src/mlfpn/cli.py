"""Command-line entry point: ``mlfpn {describe,init,forward,detect,verify,replay}``.

Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 data-format error.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from mlfpn import __version__, mtsr
from mlfpn.config import NetworkConfig, load_config
from mlfpn.errors import ConfigError, FormatError, ShapeError
from mlfpn.head import detect, detections_to_json
from mlfpn.model import Model, build_model, init_params, load_params, save_params
from mlfpn.pipeline import forward
from mlfpn.verify import activation_profile, count_params, profile_csv, trace_shapes
from mlfpn.verify.params import reference_marginal_check
from mlfpn.verify.suites import SUITES, run

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_FORMAT = 0, 1, 2, 3

log = logging.getLogger("mlfpn")


class UsageError(Exception):
    pass


def _resolve_config(args) -> NetworkConfig:
    cfg = load_config(args.config) if args.config else NetworkConfig()
    overrides = {
        "num_tums": args.tums,
        "tum_channels": args.channels,
        "input_size": args.input_size,
        "num_classes": args.num_classes,
        "seed": args.seed,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def _model(args, cfg) -> Model:
    if args.params:
        return Model(cfg, load_params(args.params, cfg))
    return build_model(cfg)


def _read_image(path, cfg) -> np.ndarray:
    image = mtsr.load(path)
    want = (3, cfg.input_size, cfg.input_size)
    if image.shape[1:] != want:
        raise FormatError(f"{path}: tensor {image.shape} is not (n, {', '.join(map(str, want))})")
    if not np.all(np.isfinite(image)):
        raise FormatError(f"{path}: tensor contains non-finite values")
    return image


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(path: Path, args, cfg, inputs, outputs, argv) -> None:
    doc = {
        "tool": "mlfpn",
        "version": __version__,
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "config": args.config,
        "params": args.params,
        "seed": cfg.seed,
        "inputs": [str(p) for p in inputs],
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def cmd_describe(args, argv) -> int:
    cfg = _resolve_config(args)
    trace = trace_shapes(cfg)
    report = count_params(cfg)
    print(trace.to_table())
    print()
    print(report.to_table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.json").write_text(trace.to_json() + "\n")
        (out / "params.json").write_text(report.to_json() + "\n")
        _write_manifest(out / "manifest.json", args, cfg, [],
                        [out / "trace.json", out / "params.json"], argv)
    return EXIT_OK


def cmd_init(args, argv) -> int:
    cfg = _resolve_config(args)
    if not args.out:
        raise UsageError("init: --out DIR is required")
    params = init_params(cfg, zero=args.zero)
    save_params(args.out, params)
    print(f"wrote {len(params)} layers to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_forward(args, argv) -> int:
    cfg = _resolve_config(args)
    if not args.input or not args.out:
        raise UsageError("forward: --input FILE and --out DIR are required")
    image = _read_image(args.input, cfg)
    result = forward(image, _model(args, cfg))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for level in result.pyramid:
        path = out / f"pyramid_scale{level.scale_index}.mtsr"
        mtsr.save(path, level.features)
        written.append(path)
    profile = activation_profile([p.aggregated for p in result.pyramid], cfg.num_tums, cfg.tum_channels)
    (out / "profile.csv").write_text(profile_csv(profile))
    written.append(out / "profile.csv")
    _write_manifest(out / "manifest.json", args, cfg, [args.input], written, argv)
    return EXIT_OK


def cmd_detect(args, argv) -> int:
    cfg = _resolve_config(args)
    if not args.input or not args.out:
        raise UsageError("detect: --input FILE and --out FILE are required")
    image = _read_image(args.input, cfg)
    per_image = detect(image, _model(args, cfg), args.score_thresh)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(detections_to_json(per_image))
    _write_manifest(out.with_name(out.name + ".manifest.json"), args, cfg, [args.input], [out], argv)
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    cfg = _resolve_config(args)
    results = run(args.suite, cfg, args.trials, args.seed or 0, args.paper_check)
    failed = None
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}")
        for line in r.lines:
            print(f"    {line}")
        if not r.passed and failed is None:
            failed = r
    if args.paper_check and args.suite not in ("params", "all"):
        pc = reference_marginal_check(cfg)
        if pc["reference"] is None:
            print(f"no table rows for {pc['channels']} channels")
        else:
            print(f"marginal per-TUM cost {pc['ours'] / 1e6:.3f}M vs table {pc['reference'] / 1e6:.3f}M")
    if failed is not None:
        print(json.dumps(failed.counterexample, default=str), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    if not args.manifest:
        raise UsageError("replay: manifest path required")
    doc = json.loads(Path(args.manifest).read_text())
    with _chdir(doc["cwd"]):
        code = main(doc["argv"])
        if code != EXIT_OK:
            return code
        mismatched = [p for p, digest in doc["outputs"].items() if _sha256(Path(p)) != digest]
    for p in mismatched:
        print(f"replay mismatch: {p}", file=sys.stderr)
    return EXIT_VERIFY if mismatched else EXIT_OK


@contextlib.contextmanager
def _chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


COMMANDS = {
    "describe": cmd_describe,
    "init": cmd_init,
    "forward": cmd_forward,
    "detect": cmd_detect,
    "verify": cmd_verify,
    "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlfpn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("manifest", nargs="?", help="manifest to replay (replay only)")
    p.add_argument("--config", help="network config JSON")
    p.add_argument("--params", help="parameter store directory (default: seeded init)")
    p.add_argument("--input", help="input MTSR tensor (n, 3, S, S)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--tums", type=int, help="override num_tums")
    p.add_argument("--channels", type=int, help="override tum_channels")
    p.add_argument("--input-size", type=int, help="override input_size")
    p.add_argument("--num-classes", type=int, help="override num_classes")
    p.add_argument("--score-thresh", type=float, help="override the pre-NMS score threshold")
    p.add_argument("--suite", default="all", choices=SUITES + ("all",))
    p.add_argument("--trials", type=int, help="random trials for grads/nms suites")
    p.add_argument("--paper-check", action="store_true", help="compare marginal TUM cost with the table")
    p.add_argument("--zero", action="store_true", help="init: write all-zero parameters")
    return p


def _thread_limit():
    n = int(os.environ.get("MLFPN_THREADS", "0") or 0)
    if n <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        with _thread_limit():
            return COMMANDS[args.command](args, argv)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
