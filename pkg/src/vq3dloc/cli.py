"""Command-line entry point.

Each subcommand reads and writes the JSON documents of :mod:`vq3dloc.io`,
so a full run chains them::

    vq3dloc synth --out scene/
    vq3dloc register --model scene/models/video00 --anchors scene/anchors.json --out t0.json
    vq3dloc fuse --table t0.json --table t1.json --out fused.json
    vq3dloc constrain --table fused.json --scan scene/scan0.ply --out poses.json
    vq3dloc predict --queries scene/queries.json --poses poses.json --scan scene/scan0.ply --out preds.json
    vq3dloc evaluate --predictions preds.json --queries scene/queries.json --out report.json

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from .errors import (
    BehindCamera,
    DegenerateInput,
    DuplicatePrediction,
    InsufficientAnchors,
    MismatchedIds,
    NoConsensus,
    NumericalFailure,
    ParseError,
    SchemaError,
    UnknownScan,
    ValidationError,
)
from .io.colmap import parse_sparse_model
from .io.config import RunConfig, load_config
from .io.scan import load_scan
from .io.schemas import (
    anchors_from_json,
    anchors_to_table,
    points_from_json,
    pose_table_from_json,
    pose_table_to_json,
    predictions_from_json,
    predictions_to_json,
    queries_from_json,
    read_json,
    registration_to_json,
    report_to_json,
    write_json,
)
from .metrics import MetricsConfig, evaluate, format_report_table
from .pipeline import predict_queries
from .registration import constrain_table, filter_outliers, fuse
from .synth import generate, write_scene
from .workflow import register_one

log = logging.getLogger("vq3dloc")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_VALIDATION_ERRORS = (
    ValidationError,
    SchemaError,
    ParseError,
    MismatchedIds,
    DuplicatePrediction,
    UnknownScan,
)
_NUMERICAL_ERRORS = (NumericalFailure, DegenerateInput, NoConsensus, InsufficientAnchors, BehindCamera)


class CliIOError(OSError):
    pass


def _existing(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliIOError(f"{p}: no such file or directory")
    return p


def _load(path: str, kind_reader, strict: bool):
    return kind_reader(read_json(_existing(path)), strict=strict)


def _output(path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _with_seed(cfg: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return cfg
    robust = dataclasses.replace(cfg.robust_align, rng_seed=seed)
    return dataclasses.replace(
        cfg,
        robust_align=robust,
        workflow=dataclasses.replace(cfg.workflow, robust=robust),
        pnp=dataclasses.replace(cfg.pnp, rng_seed=seed),
        synth=dataclasses.replace(cfg.synth, rng_seed=seed),
    )


def cmd_synth(args, cfg: RunConfig) -> int:
    scene = generate(cfg.synth)
    paths = write_scene(scene, args.out)
    print(f"wrote scene with {len(scene.models)} models to {paths['manifest'].parent}")
    return EXIT_OK


def cmd_register(args, cfg: RunConfig) -> int:
    bundle = parse_sparse_model(_existing(args.model))
    anchors = anchors_to_table(_load(args.anchors, anchors_from_json, args.strict))
    name = args.name or Path(args.model).name
    table, result = register_one(
        name, bundle.reconstruction, anchors, cfg.workflow.robust, cfg.fusion.residual_gate
    )
    if args.registration:
        write_json(registration_to_json([result]), _output(args.registration))
    if result.status == "failed":
        print(f"{name}: {result.error}", file=sys.stderr)
        return EXIT_NUMERICAL
    write_json(pose_table_to_json(table), _output(args.out))
    print(f"{name}: {result.status}, {len(table.valid_keys())} frames")
    return EXIT_OK


def cmd_fuse(args, cfg: RunConfig) -> int:
    tables = [_load(p, pose_table_from_json, args.strict) for p in args.table]
    if args.anchors:
        tables.append(anchors_to_table(_load(args.anchors, anchors_from_json, args.strict)))
    fused = fuse(tables, cfg.fusion)
    write_json(pose_table_to_json(fused), _output(args.out))
    print(f"fused {len(tables)} tables: {len(fused.valid_keys())} valid frames")
    return EXIT_OK


def cmd_constrain(args, cfg: RunConfig) -> int:
    table = _load(args.table, pose_table_from_json, args.strict)
    scan = load_scan(_existing(args.scan))
    flagged = 0
    if args.filter or cfg.workflow.filter:
        margin = cfg.workflow.filter_margin if args.margin is None else args.margin
        table, flagged = filter_outliers(table, scan, margin)
    if not args.no_snap:
        table = constrain_table(table, scan)
    write_json(pose_table_to_json(table), _output(args.out))
    print(f"flagged {flagged} outliers")
    return EXIT_OK


def _scan_arg(spec: str):
    scan_id, sep, path = spec.partition("=")
    if not sep:
        return load_scan(_existing(spec))
    return load_scan(_existing(path), scan_id)


def cmd_predict(args, cfg: RunConfig) -> int:
    queries = _load(args.queries, queries_from_json, args.strict)
    poses = _load(args.poses, pose_table_from_json, args.strict)
    scans = {s.scan_id: s for s in map(_scan_arg, args.scan)}
    pcfg = cfg.predict
    points = None
    if args.points:
        points = _load(args.points, points_from_json, args.strict)
        pcfg = dataclasses.replace(pcfg, mode="given-point")
    if args.constraints:
        pcfg = dataclasses.replace(pcfg, constraints=True)
    preds = predict_queries(queries, poses, scans, pcfg, points)
    write_json(predictions_to_json(preds), _output(args.out))
    print(f"{sum(p.pose_available for p in preds)}/{len(preds)} queries with pose")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    preds = _load(args.predictions, predictions_from_json, args.strict)
    queries = _load(args.queries, queries_from_json, args.strict)
    gt = _load(args.gt_poses, pose_table_from_json, args.strict) if args.gt_poses else None
    if args.delta is not None:
        base = cfg.metrics
        mcfg = (
            MetricsConfig(args.delta)
            if base is None
            else dataclasses.replace(base, delta=args.delta)
        )
    else:
        mcfg = cfg.require_metrics()
    report = evaluate(preds, queries, gt, mcfg)
    if args.out:
        write_json(report_to_json(report), _output(args.out))
    print(format_report_table(report, args.name))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vq3dloc", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, help="override every RNG seed in the config")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument(
        "--strict", action=argparse.BooleanOptionalAction, default=True,
        help="reject unknown fields in input documents (default: on)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", help="register one sparse model to anchor poses")
    p.add_argument("--model", required=True, help="sparse-model directory")
    p.add_argument("--anchors", required=True)
    p.add_argument("--out", required=True, help="output pose table")
    p.add_argument("--name", help="model name in the registration record")
    p.add_argument("--registration", help="also write the fitted transform here")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("fuse", help="merge pose tables by provenance priority")
    p.add_argument("--table", action="append", required=True)
    p.add_argument("--anchors", help="include PnP anchors as a table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("constrain", help="flag outliers and snap camera centers into the scan")
    p.add_argument("--table", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter", action="store_true", help="flag centers far outside the scan")
    p.add_argument("--margin", type=float)
    p.add_argument("--no-snap", action="store_true", help="skip nearest-vertex snapping")
    p.set_defaults(func=cmd_constrain)

    p = sub.add_parser("predict", help="predict object locations for queries")
    p.add_argument("--queries", required=True)
    p.add_argument("--poses", required=True)
    p.add_argument("--scan", action="append", required=True, help="scan file, or ID=file")
    p.add_argument("--points", help="object points document; switches to given-point mode")
    p.add_argument("--constraints", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against annotations")
    p.add_argument("--predictions", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--gt-poses")
    p.add_argument("--delta", type=float, help="success-radius slack; overrides the config")
    p.add_argument("--name", default="run")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = _with_seed(load_config(args.config and _existing(args.config), args.strict), args.seed)
        return args.func(args, cfg)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
