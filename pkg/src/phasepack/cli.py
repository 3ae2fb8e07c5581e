"""Command-line interface: single runs and the baseline-comparison bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import kernels
from .orchestrator import Phase2Config, export_snapshot, load_scene, phase2_run


def _add_common(parser):
    parser.add_argument("--max-iters", type=int, default=500)
    parser.add_argument("--tau-stop", type=float, default=0.5,
                        help="stop when overlap percentage falls to this")
    parser.add_argument("--grid", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-timing", action="store_true",
                        help="write 0.0 in the metrics ms column (reproducible output)")


def _config(args, mode, guidance):
    return Phase2Config(tau_stop=args.tau_stop, max_iters=args.max_iters,
                        mode=mode, guidance_spec=guidance, seed=args.seed,
                        resolution=args.grid, record_timing=not args.no_timing)


def cmd_run(args) -> int:
    scene = load_scene(args.scene)
    mode = {"mtv": "mtv", "isotropic": "isotropic", "semantic": "semantic"}[args.mode]
    config = _config(args, mode, args.guidance)
    result = phase2_run(scene, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.metrics.to_csv(out / "metrics.csv")
    export_snapshot(result.scene, result.membrane, out / "final.svg")
    for flag in result.flags:
        print(f"note: {flag}", file=sys.stderr)
    status = "converged" if result.success else "iteration cap"
    print(f"{args.scene}: mode={mode} overlap={result.overlap_pct:.3f}% "
          f"after {result.iterations} iterations ({status}) [{kernels.BACKEND} kernels]")
    return 0 if result.success else 2


def cmd_bench(args) -> int:
    suite = sorted(Path(args.suite).glob("*.json")) + sorted(Path(args.suite).glob("*.svg"))
    if not suite:
        print(f"no scenes found in {args.suite}", file=sys.stderr)
        return 2
    modes = ("mtv", "isotropic", "semantic")
    print(f"{'scene':30s} " + " ".join(f"{m + ' ov%':>14s}" for m in modes))
    worst = 0
    for scene_path in suite:
        cells = []
        for mode in modes:
            scene = load_scene(scene_path)
            result = phase2_run(scene, _config(args, mode, args.guidance))
            cells.append(f"{result.overlap_pct:7.3f}@{result.iterations:4d}it")
            if not result.success:
                worst = 2
        print(f"{scene_path.name:30s} " + " ".join(f"{c:>14s}" for c in cells))
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phasepack",
        description="Overlap-free rigid shape arrangement via an anisotropic "
                    "phase-field membrane")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scene")
    run.add_argument("--scene", required=True)
    run.add_argument("--mode", choices=("semantic", "isotropic", "mtv"), default="semantic")
    run.add_argument("--guidance", default="const-dir:0,1.0",
                     help="const-dir:<e1 deg>,<coherence> | silhouette:<image> | file:<dump>")
    run.add_argument("--out", required=True)
    _add_common(run)
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="compare the three modes on a scene suite")
    bench.add_argument("--suite", required=True, help="directory of scene files")
    bench.add_argument("--guidance", default="const-dir:90,1.0")
    _add_common(bench)
    bench.set_defaults(func=cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
