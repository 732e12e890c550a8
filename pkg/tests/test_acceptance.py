"""Acceptance suite: thirteen end-to-end criteria, one PASS/FAIL line each.

Run under pytest (the summary is printed at the end of the session) or
directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import functools
import inspect
import itertools
import json
import time
import warnings
from decimal import Decimal, getcontext
from fractions import Fraction

import numpy as np
import pytest
from corpus import build_seed_corpus, fuzz_one, parse_any

from vq3dloc.cli import main as cli_main
from vq3dloc.errors import InsufficientAnchors
from vq3dloc.geometry import Box3, Pose, Rotation3, Sim3Transform
from vq3dloc.metrics import MetricsConfig, average_precision_3d, evaluate, iou_3d, success
from vq3dloc.pipeline import PredictConfig, predict_queries
from vq3dloc.pnp import CameraIntrinsics, Correspondences, PnPConfig, project, solve_pnp_ransac
from vq3dloc.procrustes import (
    CorrespondenceSet3D,
    RobustAlignConfig,
    solve_robust_procrustes,
    solve_weighted_procrustes,
    weighted_objective,
)
from vq3dloc.registration import ScanGeometry, apply_3d_constraints, fit_registration, pose_recall
from vq3dloc.synth import SynthConfig, generate, scan_model_name
from vq3dloc.workflow import WorkflowConfig, run_registration

RESULTS: dict[int, tuple[str, str]] = {}


def criterion(number: int, title: str):
    """Record PASS/FAIL for the wrapped test and print one line."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                RESULTS[number] = ("FAIL", title)
                print(f"criterion {number:2d}: FAIL  {title}")
                raise
            RESULTS[number] = ("PASS", title)
            print(f"criterion {number:2d}: PASS  {title}")

        return run

    return wrap


def summary_lines() -> list[str]:
    return [f"criterion {n:2d}: {RESULTS[n][0]}  {RESULTS[n][1]}" for n in sorted(RESULTS)]


def rot_error(a: Rotation3, b: Rotation3) -> float:
    return a.angle_to(b)


# ---------------------------------------------------------------------------
# 1-3: similarity fits
# ---------------------------------------------------------------------------


@criterion(1, "Procrustes exactness")
def test_c01_procrustes_exactness():
    rng = np.random.default_rng(100)
    worst = 0.0
    worst_obj = 0.0
    start = time.perf_counter()
    for _ in range(100):
        gen = Sim3Transform.random(rng)
        src = rng.uniform(-3, 3, size=(50, 3))
        c = CorrespondenceSet3D(src, gen.apply(src), rng.uniform(0.5, 2.0, 50))
        t = solve_weighted_procrustes(c)
        worst = max(
            worst,
            abs(t.scale - gen.scale),
            float(np.abs(t.rotation.matrix - gen.rotation.matrix).max()),
            float(np.abs(t.translation - gen.translation).max()),
        )
        worst_obj = max(worst_obj, weighted_objective(t, c))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-9, worst
    assert worst_obj <= 1e-16, worst_obj
    assert elapsed < 1.0, elapsed


@criterion(2, "Reflection guard")
def test_c02_reflection_guard():
    rng = np.random.default_rng(200)
    src = rng.uniform(-2, 2, size=(30, 3))
    dst = src * [-1.0, 1.0, 1.0] + rng.normal(scale=0.01, size=src.shape)
    c = CorrespondenceSet3D(src, dst)
    w = c.weights / c.weights.sum()
    p_bar, q_bar = w @ c.source, w @ c.target
    for method in ("mean-distance", "least-squares"):
        t = solve_weighted_procrustes(c, scale_method=method)
        assert abs(np.linalg.det(t.rotation.matrix) - 1.0) < 1e-12
        best = weighted_objective(t, c)
        for i in range(1000):
            angle = 10.0 ** rng.uniform(-6, np.log10(np.pi))
            axis = rng.normal(size=3)
            d = Rotation3.from_rotvec(axis / np.linalg.norm(axis) * angle)
            r = d @ t.rotation
            # best translation for this rotation and scale
            cand = Sim3Transform(t.scale, r, q_bar - t.scale * r.matrix @ p_bar)
            assert weighted_objective(cand, c) >= best * (1 - 1e-12), (method, i)


@criterion(3, "Robust alignment")
def test_c03_robust_alignment():
    sigma, n_in, n_out = 0.01, 70, 30
    tol = 5 * sigma / np.sqrt(n_in)
    cfg = RobustAlignConfig(inlier_threshold=0.06, max_iterations=2000)
    for trial in range(20):
        rng = np.random.default_rng(300 + trial)
        gen = Sim3Transform.random(rng, scale_range=(0.5, 2.0), translation_sigma=2.0)
        src = rng.uniform(-3, 3, size=(n_in + n_out, 3))
        dst = gen.apply(src) + rng.normal(scale=sigma, size=src.shape)
        lo, hi = dst.min(axis=0), dst.max(axis=0)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        out_idx = rng.choice(n_in + n_out, size=n_out, replace=False)
        dst[out_idx] = rng.uniform(mid - 10 * half, mid + 10 * half, size=(n_out, 3))
        truth = np.ones(n_in + n_out, bool)
        truth[out_idx] = False
        t, mask = solve_robust_procrustes(CorrespondenceSet3D(src, dst), cfg)
        assert np.array_equal(mask, truth), trial
        assert abs(t.scale - gen.scale) < tol, (trial, t.scale - gen.scale)
        assert rot_error(t.rotation, gen.rotation) < tol, trial
        assert np.abs(t.translation - gen.translation).max() < tol, trial


# ---------------------------------------------------------------------------
# 4: PnP
# ---------------------------------------------------------------------------

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)


def _pnp_scene(rng, n):
    pose = Pose(Rotation3.random(rng), rng.normal(scale=2.0, size=3))
    cam = np.column_stack([rng.uniform(-1.5, 1.5, n), rng.uniform(-1.0, 1.0, n), rng.uniform(2.0, 6.0, n)])
    world = cam @ pose.rotation.matrix.T + pose.translation
    px = np.array([project(pose, K, x) for x in world])
    return pose, world, px


@criterion(4, "PnP round-trip")
def test_c04_pnp_round_trip():
    for trial in range(100):
        rng = np.random.default_rng(400 + trial)
        n = int(rng.integers(10, 40))
        pose, world, px = _pnp_scene(rng, n)
        est, _ = solve_pnp_ransac(Correspondences(px, world), K)
        assert np.linalg.norm(est.center - pose.center) < 1e-6, trial
        assert rot_error(est.rotation, pose.rotation) < 1e-6, trial
    cfg = PnPConfig(reprojection_threshold=2.0)
    for trial in range(100):
        rng = np.random.default_rng(500 + trial)
        pose, world, px = _pnp_scene(rng, 30)
        bad = rng.choice(30, size=9, replace=False)
        px[bad] = rng.uniform([0, 0], [640, 480], size=(9, 2))
        est, _ = solve_pnp_ransac(Correspondences(px, world), K, cfg)
        assert np.linalg.norm(est.center - pose.center) < 1e-3, trial
        assert rot_error(est.rotation, pose.rotation) < 1e-3, trial


# ---------------------------------------------------------------------------
# 5-6: registration workflow
# ---------------------------------------------------------------------------


def _dropout_pattern(seed: int) -> SynthConfig:
    """Random per-video anchor dropout with at least one video left without anchors,
    and a scan-merge model that holds only part of every video."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    vids = [f"video{i:02d}" for i in range(n)]
    dead = set(rng.choice(vids, size=int(rng.integers(1, n)), replace=False).tolist())
    dropout = {v: 1.0 if v in dead else float(rng.uniform(0.0, 0.7)) for v in vids}
    return SynthConfig(
        rng_seed=seed,
        num_videos=n,
        frames_per_video=int(rng.integers(10, 20)),
        num_queries=2,
        anchor_dropout_per_video=dropout,
        scan_frame_fraction=float(rng.uniform(0.4, 0.9)),
    )


@criterion(5, "Fusion monotonicity")
def test_c05_fusion_monotonicity():
    for seed in range(50):
        scene = generate(_dropout_pattern(5000 + seed))
        totals = scene.frame_totals

        def run(use_video, use_scan):
            cfg = WorkflowConfig(use_video=use_video, use_scan=use_scan)
            return run_registration(scene.reconstructions, scene.anchor_table, cfg).fused

        video, scan, both = run(True, False), run(False, True), run(True, True)
        rv, rs, rb = (pose_recall(t, totals).frame_rate for t in (video, scan, both))
        assert rb >= max(rv, rs), seed
        if video.valid_keys() != scan.valid_keys():
            assert rb > max(rv, rs), (seed, rv, rs, rb)


@criterion(6, "Scan-config rescue")
def test_c06_scan_config_rescue():
    scene = generate(SynthConfig(rng_seed=600, num_videos=3, anchor_dropout_per_video={"video01": 0.95}))
    anchors = scene.anchor_table
    assert sum(1 for k in anchors.valid_keys() if k[0] == "video01") < 3
    with pytest.raises(InsufficientAnchors):
        fit_registration(scene.reconstructions["video01"], anchors)
    video = run_registration(scene.reconstructions, anchors, WorkflowConfig(use_scan=False))
    status = {r.name: r.status for r in video.results}
    assert status["video01"] == "failed"
    assert not any(k[0] == "video01" for k in video.fused.valid_keys())
    both = run_registration(scene.reconstructions, anchors, WorkflowConfig())
    assert {r.name: r.status for r in both.results}[scan_model_name("scan0")] == "ok"
    rescued = [k for k in both.fused.valid_keys() if k[0] == "video01"]
    assert len(rescued) == scene.frame_totals["video01"]
    for k in rescued:
        assert np.linalg.norm(both.fused[k].pose.center - scene.ground_truth[k].pose.center) < 1e-6


# ---------------------------------------------------------------------------
# 7-10: metrics
# ---------------------------------------------------------------------------


def _oracle_success(p, c1, c2, delta) -> bool:
    """|p - (c1 + c2)/2| < 6 (|c1 - c2| + delta), in 80-digit decimal arithmetic
    on the decimal values the inputs print as."""
    getcontext().prec = 80
    P = [Decimal(repr(float(v))) for v in p]
    A = [Decimal(repr(float(v))) for v in c1]
    B = [Decimal(repr(float(v))) for v in c2]
    d = Decimal(repr(float(delta)))
    m = [(a + b) / 2 for a, b in zip(A, B)]
    lhs = sum((x - y) ** 2 for x, y in zip(P, m)).sqrt()
    sep = sum((a - b) ** 2 for a, b in zip(A, B)).sqrt()
    return lhs < 6 * (sep + d)


def _boundary_cases():
    """Configurations with |p - m| exactly equal to 6 (|c1 - c2| + delta)."""
    triples = [(3, 4, 0, 5), (6, 8, 0, 10), (2, 3, 6, 7), (1, 4, 8, 9), (2, 6, 9, 11), (0, 0, 1, 1)]
    cases = []
    for (a, b, c, n), (x, y, z, k) in itertools.product(triples, repeat=2):
        for sep_scale, delta, offset in [("0.1", "0.05", "1.5"), ("0.02", "0.1", "-2.25"), ("1", "0.5", "0")]:
            s = Fraction(sep_scale)
            # c1 - c2 = s * (a, b, c), so |c1 - c2| = s * n exactly
            m = [Fraction(offset), Fraction(offset) * 2, Fraction(1, 4)]
            c1 = [m[i] + s * v / 2 for i, v in enumerate((a, b, c))]
            c2 = [m[i] - s * v / 2 for i, v in enumerate((a, b, c))]
            r = 6 * (s * n + Fraction(delta))
            # p = m + r * (x, y, z) / k
            p = [m[i] + r * v / k for i, v in enumerate((x, y, z))]
            vals = [float(v) for v in (*p, *c1, *c2)]
            exact = all(Fraction(repr(f)) == v for f, v in zip(vals, (*p, *c1, *c2)))
            if exact:
                cases.append((p, c1, c2, Fraction(delta)))
    return cases


@criterion(7, "Success-threshold oracle equivalence")
def test_c07_success_oracle():
    rng = np.random.default_rng(700)
    n = 100_000
    c1 = rng.uniform(-5, 5, size=(n, 3))
    c2 = c1 + rng.normal(scale=rng.choice([0.01, 0.3, 2.0], size=(n, 1)), size=(n, 3))
    delta = rng.choice([0.0, 0.01, 0.05, 0.1, 0.5], size=n)
    m = (c1 + c2) / 2
    radius = 6 * (np.linalg.norm(c1 - c2, axis=1) + delta)
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    # spread distances over [0, 3r] with a dense band around the boundary
    scale = np.where(rng.uniform(size=n) < 0.5, rng.uniform(0, 3, n), 1 + rng.normal(scale=1e-9, size=n))
    p = m + u * (radius * scale)[:, None]
    mismatches = 0
    for i in range(n):
        if success(p[i], c1[i], c2[i], float(delta[i])) != _oracle_success(p[i], c1[i], c2[i], delta[i]):
            mismatches += 1
    assert mismatches == 0, mismatches
    cases = _boundary_cases()
    assert len(cases) >= 50
    for p_, c1_, c2_, d in cases:
        pf, c1f, c2f = ([float(v) for v in x] for x in (p_, c1_, c2_))
        assert _oracle_success(pf, c1f, c2f, float(d)) is False
        assert success(pf, c1f, c2f, float(d)) is False


def _metric_fixture(seed, coverage):
    scene = generate(SynthConfig(rng_seed=seed, num_queries=10, query_pose_coverage=coverage))
    rng = np.random.default_rng(seed)
    pts = {q.query_id: scene.object_points[q.query_id] + rng.normal(scale=1.0, size=3) for q in scene.queries}
    fused = run_registration(scene.reconstructions, scene.anchor_table).fused
    cfg = PredictConfig(mode="given-point")
    return scene, predict_queries(scene.queries, fused, {"scan0": scene.scan}, cfg, pts)


@criterion(8, "Metric identities")
def test_c08_metric_identities():
    mc = MetricsConfig(delta=0.05)
    for seed, coverage in itertools.product(range(10), (1.0, 0.9, 0.6, 0.3)):
        scene, preds = _metric_fixture(800 + seed, coverage)
        r = evaluate(preds, scene.queries, scene.ground_truth, mc)
        if r.qwp_pct < 100:
            assert r.succ_pct <= r.succ_star_pct
        if r.counts.with_pose:
            assert abs(r.succ_pct - r.succ_star_pct * r.qwp_pct / 100) < 1e-9
        rng = np.random.default_rng(seed)
        for _ in range(3):
            pp = [preds[i] for i in rng.permutation(len(preds))]
            qq = [scene.queries[i] for i in rng.permutation(len(scene.queries))]
            s = evaluate(pp, qq, scene.ground_truth, mc)
            assert s.counts == r.counts and s.ap_per_threshold == r.ap_per_threshold
            for a, b in [(s.succ_pct, r.succ_pct), (s.l2, r.l2), (s.angle, r.angle), (s.qwp_pct, r.qwp_pct)]:
                assert a == b or (np.isnan(a) and np.isnan(b))


def _gt(i):
    return Box3.cube([10.0 * i, 0, 0], 1.0)


def _hit(i):
    return _gt(i)


def _miss(i):
    return Box3.cube([10.0 * i + 5.0, 0, 0], 1.0)


def _half(i):
    # IoU with the ground truth is 0.5 / 1.5 = 1/3
    return Box3.cube([10.0 * i + 0.5, 0, 0], 1.0)


# (predictions, ground-truth query ids, threshold, expected curve, expected AP), worked by hand
AP_FIXTURES = [
    (
        [(_hit(0), 0.9, "q0"), (_miss(1), 0.8, "q1"), (_hit(2), 0.7, "q2")],
        ["q0", "q1", "q2"], 0.5,
        [(1, Fraction(1, 3)), (Fraction(1, 2), Fraction(1, 3)), (Fraction(2, 3), Fraction(2, 3))],
        Fraction(5, 9),
    ),
    (
        [(_miss(0), 0.9, "q0"), (_miss(1), 0.4, "q1")],
        ["q0", "q1"], 0.1,
        [(0, 0), (0, 0)],
        Fraction(0),
    ),
    (
        [(_hit(i), c, f"q{i}") for i, c in enumerate((0.3, 0.9, 0.5, 0.7))],
        ["q0", "q1", "q2", "q3"], 0.5,
        [(1, Fraction(1, 4)), (1, Fraction(1, 2)), (1, Fraction(3, 4)), (1, 1)],
        Fraction(1),
    ),
    (
        [(_hit(0), 0.9, "q0"), (_hit(0), 0.8, "q0"), (_hit(1), 0.6, "q1")],
        ["q0", "q1"], 0.5,
        [(1, Fraction(1, 2)), (Fraction(1, 2), Fraction(1, 2)), (Fraction(2, 3), 1)],
        Fraction(5, 6),
    ),
    (
        [(_half(1), 0.5, "q1"), (_miss(0), 0.5, "q0"), (_hit(2), 0.9, "q2"), (_hit(3), 0.3, "q3")],
        ["q0", "q1", "q2"], 0.25,
        [(1, Fraction(1, 3)), (Fraction(1, 2), Fraction(1, 3)), (Fraction(2, 3), Fraction(2, 3)),
         (Fraction(1, 2), Fraction(2, 3))],
        Fraction(5, 9),
    ),
]


@criterion(9, "AP correctness")
def test_c09_ap_correctness():
    for k, (preds, gt_ids, th, curve, ap) in enumerate(AP_FIXTURES):
        gts = [(_gt(int(q[1:])), q) for q in gt_ids]
        got_ap, got_curve = average_precision_3d(preds, gts, th)
        assert len(got_curve) == len(curve), k
        for (p, r), (ep, er) in zip(got_curve, curve):
            assert abs(p - float(ep)) < 1e-12 and abs(r - float(er)) < 1e-12, k
        assert abs(got_ap - float(ap)) < 1e-12, (k, got_ap)
    # fixture 5 at the stricter threshold: only the first prediction counts
    preds, gt_ids, _, _, _ = AP_FIXTURES[4]
    got_ap, _ = average_precision_3d(preds, [(_gt(int(q[1:])), q) for q in gt_ids], 0.5)
    assert abs(got_ap - 1 / 3) < 1e-12
    # complete lack of overlap and perfect predictions over a synthetic scene
    scene = generate(SynthConfig(rng_seed=900, num_queries=6))
    far = [(Box3.cube(q.gt_box.center + 100.0, 0.5), 1.0, q.query_id) for q in scene.queries]
    exact = [(q.gt_box, 0.8, q.query_id) for q in scene.queries]
    gts = [(q.gt_box, q.query_id) for q in scene.queries]
    for th in (0.1, 0.25, 0.5):
        assert average_precision_3d(far, gts, th)[0] == 0.0
        assert average_precision_3d(exact, gts, th)[0] == 1.0


@criterion(10, "IoU Monte-Carlo oracle")
def test_c10_iou_monte_carlo():
    rng = np.random.default_rng(1000)
    for pair in range(50):
        ca = rng.uniform(-1, 1, 3)
        a = Box3(ca, rng.uniform(0.2, 1.0, 3))
        b = Box3(ca + rng.uniform(-0.8, 0.8, 3), rng.uniform(0.2, 1.0, 3))
        lo = np.minimum(a.center - a.half_extents, b.center - b.half_extents)
        hi = np.maximum(a.center + a.half_extents, b.center + b.half_extents)
        x = rng.uniform(lo, hi, size=(1_000_000, 3))
        in_a = np.all(np.abs(x - a.center) <= a.half_extents, axis=1)
        in_b = np.all(np.abs(x - b.center) <= b.half_extents, axis=1)
        union = np.count_nonzero(in_a | in_b)
        mc = np.count_nonzero(in_a & in_b) / union
        assert abs(iou_3d(a, b) - mc) < 0.01, (pair, iou_3d(a, b), mc)


# ---------------------------------------------------------------------------
# 11-13: pipeline, constraints, formats
# ---------------------------------------------------------------------------


@criterion(11, "End-to-end noiseless pipeline")
def test_c11_end_to_end(tmp_path):
    from vq3dloc.io.schemas import read_json, report_from_json

    start = time.perf_counter()
    s = tmp_path / "scene"
    assert cli_main(["--seed", "1100", "synth", "--out", str(s)]) == 0
    tables = []
    for model in sorted((s / "models").iterdir()):
        out = tmp_path / f"{model.name}.json"
        assert cli_main(["register", "--model", str(model), "--anchors", str(s / "anchors.json"),
                         "--out", str(out)]) == 0
        tables += ["--table", str(out)]
    assert cli_main(["fuse", *tables, "--out", str(tmp_path / "fused.json")]) == 0
    assert cli_main(["predict", "--queries", str(s / "queries.json"), "--poses", str(tmp_path / "fused.json"),
                     "--scan", str(s / "scan0.ply"), "--points", str(s / "object_points.json"),
                     "--out", str(tmp_path / "preds.json")]) == 0
    assert cli_main(["evaluate", "--predictions", str(tmp_path / "preds.json"),
                     "--queries", str(s / "queries.json"), "--gt-poses", str(s / "gt_poses.json"),
                     "--delta", "0.05", "--out", str(tmp_path / "report.json")]) == 0
    elapsed = time.perf_counter() - start
    r = report_from_json(read_json(tmp_path / "report.json"))
    assert r.succ_pct == 100.0 and r.qwp_pct == 100.0
    assert r.l2 < 1e-6 and r.angle < 1e-6
    assert elapsed < 30.0, elapsed


@criterion(12, "Constraint correctness and idempotence")
def test_c12_constraints():
    rng = np.random.default_rng(1200)
    verts = rng.uniform(0, 1, size=(300, 3)) * [4, 3, 2]
    verts[:8] = [[x, y, z] for x in (0, 4) for y in (0, 3) for z in (0, 2)]
    scan = ScanGeometry("s", verts)
    pts = rng.uniform(-3, 7, size=(20_000, 3))
    outside = pts[~scan.bounds.contains(pts)][:10_000]
    assert len(outside) == 10_000
    snapped = apply_3d_constraints(outside, scan)
    for i, x in enumerate(outside):
        best, best_d = 0, None
        for j, v in enumerate(verts):
            d = (x[0] - v[0]) ** 2 + (x[1] - v[1]) ** 2 + (x[2] - v[2]) ** 2
            if best_d is None or d < best_d:
                best, best_d = j, d
        assert np.array_equal(snapped[i], verts[best]), i
    inside = rng.uniform(0.1, 0.9, size=(100, 3)) * [4, 3, 2]
    assert np.array_equal(apply_3d_constraints(inside, scan), inside)
    mixed = np.vstack([outside, inside])
    once = apply_3d_constraints(mixed, scan)
    assert np.array_equal(apply_3d_constraints(once, scan), once)


@criterion(13, "Format round-trips and fuzzing")
def test_c13_formats(tmp_path):
    import shutil

    from vq3dloc.io.colmap import parse_sparse_model, write_sparse_model
    from vq3dloc.io.config import config_from_json, config_to_json
    from vq3dloc.io.scan import load_scan, write_ply, write_xyz
    from vq3dloc.io.schemas import (
        anchors_from_json, anchors_to_json, dumps, points_from_json, points_to_json,
        pose_table_from_json, pose_table_to_json, predictions_from_json, predictions_to_json,
        queries_from_json, queries_to_json, read_json, registration_from_json, registration_to_json,
        validate,
    )

    json_codecs = {
        "anchors.json": (anchors_from_json, anchors_to_json),
        "queries.json": (queries_from_json, queries_to_json),
        "gt_poses.json": (pose_table_from_json, pose_table_to_json),
        "generators.json": (registration_from_json, registration_to_json),
        "object_points.json": (points_from_json, points_to_json),
        "predictions.json": (predictions_from_json, predictions_to_json),
        "config.json": (config_from_json, config_to_json),
    }
    seeds = build_seed_corpus(tmp_path / "seed")
    checked = set()
    for path in seeds:
        name = path.name
        if name in json_codecs:
            read, write = json_codecs[name]
            once = dumps(write(read(read_json(path))))
            twice = dumps(write(read(json.loads(once))))
            assert once == twice, name
        elif name == "scene.json":
            doc = read_json(path)
            validate(doc, "scene")
            assert dumps(doc) == path.read_text()
        elif path.suffix in (".ply", ".xyz"):
            scan = load_scan(path)
            for binary in (True, False):
                write_ply(scan, tmp_path / "a.ply", binary)
                write_ply(load_scan(tmp_path / "a.ply", scan.scan_id), tmp_path / "b.ply", binary)
                assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
            write_xyz(scan, tmp_path / "a.xyz")
            write_xyz(load_scan(tmp_path / "a.xyz"), tmp_path / "b.xyz")
            assert (tmp_path / "a.xyz").read_bytes() == (tmp_path / "b.xyz").read_bytes()
        else:
            model = path.parent
            if model in checked:
                continue
            checked.add(model)
            one, two = tmp_path / "m1" / model.name, tmp_path / "m2" / model.name
            shutil.rmtree(tmp_path / "m1", ignore_errors=True)
            shutil.rmtree(tmp_path / "m2", ignore_errors=True)
            write_sparse_model(parse_sparse_model(model), one)
            write_sparse_model(parse_sparse_model(one), two)
            for f in ("cameras.txt", "images.txt", "points3D.txt", "source.json"):
                assert (one / f).read_bytes() == (two / f).read_bytes(), (model.name, f)
        parse_any(path)
    assert checked
    rng = np.random.default_rng(1300)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i in range(1000):
            fuzz_one(seeds[i % len(seeds)], tmp_path / "fuzz", rng)


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted(globals().items()):
        if not name.startswith("test_c"):
            continue
        try:
            if "tmp_path" in inspect.signature(fn).parameters:
                fn(Path(tempfile.mkdtemp()))
            else:
                fn()
        except BaseException:  # noqa: BLE001
            failed += 1
    print("\n".join(summary_lines()))
    sys.exit(1 if failed else 0)
