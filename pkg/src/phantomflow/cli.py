"""Command-line entry points.

    phantomflow run <config> [--output-dir D] [--vtk-stride K]
                             [--method pd_dmum|emum_only] [--seed S]
                             [--log-level L]
    phantomflow converge <config> --levels N [...]
    phantomflow validate-mesh <mesh-path>
"""

import argparse
import logging
import sys
from dataclasses import replace

from .cases import convergence_study, parse_config, run_case
from .errors import ConfigError
from .mesh import validate
from .meshio import read_mesh_text

log = logging.getLogger("phantomflow")


def _add_common(p):
    p.add_argument("--output-dir", default=None, help="override output directory")
    p.add_argument("--vtk-stride", type=int, default=None,
                   help="write a VTK snapshot every K slabs (0 disables)")
    p.add_argument("--method", choices=["pd_dmum", "emum_only"], default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="reserved; runs are deterministic")
    p.add_argument("--log-level", default="INFO")


def _apply_overrides(config, args):
    fields = {}
    if args.output_dir is not None:
        fields["output_dir"] = args.output_dir
    if args.vtk_stride is not None:
        fields["vtk_stride"] = args.vtk_stride
    if args.method is not None:
        fields["method"] = args.method
    return replace(config, **fields) if fields else config


def main(argv=None):
    parser = argparse.ArgumentParser(prog="phantomflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured case")
    p_run.add_argument("config")
    _add_common(p_run)

    p_conv = sub.add_parser("converge", help="mesh refinement study")
    p_conv.add_argument("config")
    p_conv.add_argument("--levels", type=int, default=3)
    _add_common(p_conv)

    p_val = sub.add_parser("validate-mesh", help="check a plain-text mesh file")
    p_val.add_argument("mesh")
    p_val.add_argument("--log-level", default="INFO")

    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "validate-mesh":
        mesh = read_mesh_text(args.mesh)
        report = validate(mesh)
        print(report.summary())
        return 0 if report.ok else 1

    try:
        config = _apply_overrides(parse_config(args.config), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        result = run_case(config)
        err = result.probe.time_averaged_error() if config.case == "poiseuille" else None
        print(f"completed {config.n_slabs} slabs; outputs in {config.output_dir}")
        if err is not None:
            print(f"time-averaged probe error: {err:.6e}")
        print(f"min element quality over run: {result.min_quality_overall:.4f}")
        return 0

    study = convergence_study(config, args.levels)
    print("level  nx    ny    h           error")
    for row in study.rows:
        print(f"{row.level:<6d} {row.nx:<5d} {row.ny:<5d} {row.h:<11.5e} {row.error:.6e}")
    if study.observed_order is not None:
        print(f"observed order: {study.observed_order:.3f}")
    if study.failure:
        print(f"study halted: {study.failure}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
