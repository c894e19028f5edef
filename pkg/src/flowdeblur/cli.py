"""Command-line front end: deblur, synthesize, evaluate.

Exit codes: 0 on success, 2 on input errors (missing/corrupt files,
inconsistent sizes, bad flags), 3 on solver failures.
"""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .core import SolverParams
from .evalkit import (
    SceneSpec,
    demo_scene,
    epe,
    flow_to_color,
    psnr,
    render_scene,
    synthesize_blur,
)
from .fileio import load_image, read_flo, save_image, write_flo
from .latent import CGDivergenceError
from .pipeline import run

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _err(msg):
    print("error: %s" % msg, file=sys.stderr)


def _resolve_threads(value):
    if value is None:
        value = os.environ.get("FLOWDEBLUR_THREADS", "1")
    n = int(value)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    return n


def _params_from_args(args):
    duty = None
    if args.duty != "auto":
        duty = float(args.duty)
    levels = None
    if args.levels != "auto":
        levels = int(args.levels)
    params = SolverParams(
        lam=args.lam,
        mu=args.mu,
        nu=args.nu,
        sigma_i=args.sigma_i,
        sigma_w=args.sigma_w,
        n_neighbors=args.n_neighbors,
        pyr_scale=args.scale,
        pyr_levels=levels,
        outer_iters=args.outer_iters,
        pd_iters=args.pd_iters,
        cg_iters=args.cg_iters,
        duty=duty,
        temporal_enabled=not args.no_temporal,
        filter_finest_only=args.filter_finest_only,
    )
    return params.validate()


def _params_dict(params):
    return {
        "lambda": params.lam,
        "mu": params.mu_value,
        "nu": params.nu_value,
        "sigma_i": params.sigma_i,
        "sigma_w": params.sigma_w,
        "n_neighbors": params.n_neighbors,
        "scale": params.pyr_scale,
        "levels": params.pyr_levels,
        "outer_iters": params.outer_iters,
        "pd_iters": params.pd_iters,
        "flow_warps": params.flow_warps,
        "cg_iters": params.cg_iters,
        "cg_tol": params.cg_tol,
        "temporal_enabled": params.temporal_enabled,
        "filter_finest_only": params.filter_finest_only,
    }


def cmd_deblur(args):
    try:
        threads = _resolve_threads(args.threads)
        params = _params_from_args(args)
    except ValueError as exc:
        _err(exc)
        return EXIT_INPUT

    paths = sorted(glob.glob(args.inputs))
    if len(paths) < 2:
        _err("need at least 2 input frames, matched %d with %r" % (len(paths), args.inputs))
        return EXIT_INPUT
    try:
        frames = [load_image(p) for p in paths]
    except (OSError, ValueError) as exc:
        _err("cannot read inputs: %s" % exc)
        return EXIT_INPUT
    if any(f.shape != frames[0].shape for f in frames):
        _err("input frames must share one size")
        return EXIT_INPUT

    os.makedirs(args.out, exist_ok=True)
    log_fh = open(args.log, "w") if args.log else None
    records = []

    def progress(rec):
        records.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")

    t0 = time.perf_counter()
    try:
        state, _ = run(frames, params, progress=progress)
    except CGDivergenceError as exc:
        _err("solver failed: %s" % exc)
        return EXIT_SOLVER
    except ValueError as exc:
        _err(exc)
        return EXIT_INPUT
    finally:
        if log_fh:
            log_fh.close()
    elapsed = time.perf_counter() - t0

    outputs = []
    for i, img in enumerate(state.latent):
        name = "deblurred_%03d.png" % i
        save_image(os.path.join(args.out, name), img)
        outputs.append(name)
        write_flo(os.path.join(args.out, "flow_fwd_%03d.flo" % i), state.fwd[i])
        write_flo(os.path.join(args.out, "flow_bwd_%03d.flo" % i), state.bwd[i])
        if args.viz_flow:
            save_image(
                os.path.join(args.out, "flow_fwd_%03d.png" % i),
                flow_to_color(state.fwd[i]),
            )

    manifest = {
        "tool": "flowdeblur %s" % __version__,
        "command": "deblur",
        "input_pattern": args.inputs,
        "inputs": [os.path.basename(p) for p in paths],
        "outputs": outputs,
        "output_dir": os.path.abspath(args.out),
        "params": _params_dict(params),
        "duty": {
            "value": state.duty[0],
            "source": "user" if params.duty is not None else "estimated",
        },
        "threads": threads,
        "seed": args.seed,
        "timings": {"total_s": elapsed},
        "energy_log": records,
    }
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print("deblurred %d frames -> %s (%.1fs, duty %.2f)" % (
        len(outputs), args.out, elapsed, state.duty[0]))
    return EXIT_OK


def cmd_synthesize(args):
    try:
        if args.spec:
            spec = SceneSpec.from_json(args.spec)
        else:
            spec = demo_scene()
        if args.seed is not None:
            spec.bg_texture_seed = args.seed
            for k, obj in enumerate(spec.objects):
                obj.texture_seed = args.seed + 1 + k
        scene = render_scene(spec)
    except (OSError, ValueError, TypeError, KeyError, json.JSONDecodeError) as exc:
        _err("bad scene: %s" % exc)
        return EXIT_INPUT

    blurry = synthesize_blur(scene.sharp, scene.gt_fwd, scene.gt_bwd, scene.tau)
    os.makedirs(args.out, exist_ok=True)
    for i in range(len(scene.sharp)):
        save_image(os.path.join(args.out, "sharp_%03d.png" % i), scene.sharp[i])
        save_image(os.path.join(args.out, "blurry_%03d.png" % i), blurry[i])
        write_flo(os.path.join(args.out, "flow_fwd_%03d.flo" % i), scene.gt_fwd[i])
        write_flo(os.path.join(args.out, "flow_bwd_%03d.flo" % i), scene.gt_bwd[i])
    with open(os.path.join(args.out, "scene.json"), "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
    print("rendered %d frames (tau=%.2f) -> %s" % (len(scene.sharp), scene.tau, args.out))
    return EXIT_OK


def _load_series(directory, pattern, reader):
    paths = sorted(glob.glob(os.path.join(directory, pattern)))
    return paths, [reader(p) for p in paths]


def cmd_evaluate(args):
    try:
        _, restored = _load_series(args.result, "deblurred_*.png", load_image)
        if not restored:
            _, restored = _load_series(args.result, "sharp_*.png", load_image)
        _, truth = _load_series(args.truth, "sharp_*.png", load_image)
        _, res_fwd = _load_series(args.result, "flow_fwd_*.flo", read_flo)
        _, res_bwd = _load_series(args.result, "flow_bwd_*.flo", read_flo)
        _, gt_fwd = _load_series(args.truth, "flow_fwd_*.flo", read_flo)
        _, gt_bwd = _load_series(args.truth, "flow_bwd_*.flo", read_flo)
    except (OSError, ValueError) as exc:
        _err("cannot read inputs: %s" % exc)
        return EXIT_INPUT
    if not restored or len(restored) != len(truth):
        _err("frame counts differ between result and truth")
        return EXIT_INPUT
    if restored[0].shape != truth[0].shape:
        _err("frame sizes differ between result and truth")
        return EXIT_INPUT
    t = len(restored)
    have_flows = len(res_fwd) == len(gt_fwd) == t and len(res_bwd) == len(gt_bwd) == t

    rows = []
    for i in range(t):
        row = {"frame": i, "psnr": psnr(restored[i], truth[i])}
        if have_flows:
            if i < t - 1:
                row["epe_fwd"] = epe(res_fwd[i], gt_fwd[i])
            if i > 0:
                row["epe_bwd"] = epe(res_bwd[i], gt_bwd[i])
        rows.append(row)

    print("frame    psnr_db    epe_fwd    epe_bwd")
    for row in rows:
        print("%5d %10.3f %10s %10s" % (
            row["frame"], row["psnr"],
            "%.4f" % row["epe_fwd"] if "epe_fwd" in row else "-",
            "%.4f" % row["epe_bwd"] if "epe_bwd" in row else "-",
        ))
    finite = [r["psnr"] for r in rows if math.isfinite(r["psnr"])]
    mean_psnr = float(np.mean(finite)) if finite else math.inf
    epes = [r[k] for r in rows for k in ("epe_fwd", "epe_bwd") if k in r]
    summary = {"mean_psnr": mean_psnr if finite else math.inf,
               "mean_epe": float(np.mean(epes)) if epes else None}
    print("mean  %10.3f %10s" % (
        summary["mean_psnr"],
        "%.4f" % summary["mean_epe"] if summary["mean_epe"] is not None else "-"))
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({"frames": rows, "summary": summary}, fh, indent=2)
    return EXIT_OK


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="flowdeblur",
        description="Joint video deblurring and bidirectional flow estimation.",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("deblur", help="restore a blurry frame sequence")
    d.add_argument("--in", dest="inputs", required=True,
                   help="input glob, e.g. 'frames/blurry_*.png'")
    d.add_argument("--out", required=True, help="output directory")
    d.add_argument("--lambda", dest="lam", type=float, default=250.0)
    d.add_argument("--mu", type=float, default=None)
    d.add_argument("--nu", type=float, default=None)
    d.add_argument("--sigma-i", type=float, default=25.0 / 255.0)
    d.add_argument("--sigma-w", type=float, default=25.0 / 255.0,
                   help="patch-similarity bandwidth of the refinement filter")
    d.add_argument("--n-neighbors", type=int, default=2)
    d.add_argument("--scale", type=float, default=0.9)
    d.add_argument("--levels", default="auto")
    d.add_argument("--outer-iters", type=int, default=3)
    d.add_argument("--pd-iters", type=int, default=30)
    d.add_argument("--cg-iters", type=int, default=15)
    d.add_argument("--duty", default="auto", help="exposure fraction or 'auto'")
    d.add_argument("--no-temporal", action="store_true")
    d.add_argument("--filter-finest-only", action="store_true")
    d.add_argument("--viz-flow", action="store_true")
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--threads", default=None,
                   help="worker hint (env FLOWDEBLUR_THREADS); results are identical")
    d.add_argument("--log", default=None, help="write per-iteration energy JSONL here")
    d.set_defaults(func=cmd_deblur)

    s = sub.add_parser("synthesize", help="render a synthetic blurry dataset")
    s.add_argument("--spec", default=None, help="scene JSON (default: demo scene)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(func=cmd_synthesize)

    e = sub.add_parser("evaluate", help="score a result against ground truth")
    e.add_argument("--result", required=True, help="directory with deblurred_*/flow_*")
    e.add_argument("--truth", required=True, help="directory with sharp_*/flow_*")
    e.add_argument("--report", default=None, help="write JSON report here")
    e.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        _err(exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
