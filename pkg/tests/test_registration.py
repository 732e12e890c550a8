import numpy as np
import pytest

from vq3dloc.errors import DegenerateInput, InsufficientAnchors, ValidationError
from vq3dloc.geometry import Pose, Rotation3, Sim3Transform
from vq3dloc.procrustes import RobustAlignConfig
from vq3dloc.registration import (
    FusionPolicy,
    ReconstructionSource,
    ScanGeometry,
    SparseReconstruction,
    apply_3d_constraints,
    apply_registration,
    constrain_table,
    filter_outliers,
    fit_registration,
    fuse,
    nearest_vertex,
    pose_recall,
    register,
)
from vq3dloc.tables import PoseEntry, PoseTable, Provenance

UNIT_CUBE = ScanGeometry("cube", [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)])


def trajectory(rng, n):
    return [Pose(Rotation3.random(rng), rng.uniform(0.5, 5.5, size=3)) for _ in range(n)]


def relative_model(gt, gen, video="v"):
    inv = gen.inverse()
    frames = {(video, i): inv.apply_to_pose(p) for i, p in enumerate(gt)}
    return SparseReconstruction(frames, {k: 1 for k in frames}, ReconstructionSource.video(video))


def anchor_table(gt, keys, video="v"):
    return PoseTable({(video, i): PoseEntry(gt[i], Provenance.PNP) for i in keys})


def entry(c, prov=Provenance.PNP, **kw):
    return PoseEntry(Pose(Rotation3.identity(), c), prov, **kw)


def test_fit_recovers_generator():
    rng = np.random.default_rng(0)
    gt = trajectory(rng, 12)
    gen = Sim3Transform.random(rng)
    t, diag = fit_registration(relative_model(gt, gen), anchor_table(gt, [0, 3, 5, 8, 11]))
    assert t.allclose(gen, atol=1e-9)
    assert diag.anchor_count == 5 and diag.inlier_count == 5 and not diag.outlier_keys


def test_fit_needs_three_anchors():
    rng = np.random.default_rng(1)
    gt = trajectory(rng, 6)
    with pytest.raises(InsufficientAnchors):
        fit_registration(relative_model(gt, Sim3Transform.identity()), anchor_table(gt, [0, 1]))


def test_fit_rejects_collinear_anchors():
    gt = [Pose(Rotation3.identity(), [i, 0.0, 0.0]) for i in range(5)]
    with pytest.raises(DegenerateInput):
        fit_registration(relative_model(gt, Sim3Transform.identity()), anchor_table(gt, range(5)))


def test_fit_excludes_corrupted_anchors():
    rng = np.random.default_rng(2)
    gt = trajectory(rng, 20)
    gen = Sim3Transform.random(rng)
    anchors = dict(anchor_table(gt, range(20)).items())
    bad = [1, 4, 7, 12, 15, 18]
    for i in bad:
        anchors[("v", i)] = entry(rng.uniform(-50, 50, size=3))
    t, diag = fit_registration(
        relative_model(gt, gen), PoseTable(anchors), RobustAlignConfig(inlier_threshold=0.05)
    )
    assert t.allclose(gen, atol=1e-6)
    assert sorted(f for _, f in diag.outlier_keys) == bad


def test_anchor_consistency():
    rng = np.random.default_rng(3)
    gt = trajectory(rng, 15)
    gen = Sim3Transform.random(rng)
    anchors = dict(anchor_table(gt, range(15)).items())
    for k, e in list(anchors.items()):
        anchors[k] = entry(e.pose.center + rng.normal(scale=0.02, size=3))
    cfg = RobustAlignConfig(inlier_threshold=0.1)
    recon = relative_model(gt, gen)
    t, diag = fit_registration(recon, PoseTable(anchors), cfg)
    table = apply_registration(recon, t)
    for k in diag.inlier_keys:
        assert np.linalg.norm(table[k].pose.center - anchors[k].pose.center) < cfg.inlier_threshold


def test_apply_identity_and_empty():
    rng = np.random.default_rng(4)
    gt = trajectory(rng, 4)
    recon = relative_model(gt, Sim3Transform.identity())
    table = apply_registration(recon, Sim3Transform.identity())
    for i, p in enumerate(gt):
        assert table[("v", i)].pose.allclose(p)
        assert table[("v", i)].provenance is Provenance.VIDEO_PROCRUSTES
    empty = SparseReconstruction({}, {}, ReconstructionSource.video("v"))
    assert len(apply_registration(empty, Sim3Transform.identity())) == 0


def test_apply_recovers_ground_truth():
    rng = np.random.default_rng(5)
    gt = trajectory(rng, 10)
    gen = Sim3Transform.random(rng)
    table = apply_registration(relative_model(gt, gen), gen)
    for i, p in enumerate(gt):
        assert np.allclose(table[("v", i)].pose.center, p.center, atol=1e-9)
        assert table[("v", i)].pose.rotation.allclose(p.rotation, atol=1e-9)


def test_register_residual_gate():
    rng = np.random.default_rng(6)
    gt = trajectory(rng, 8)
    anchors = PoseTable(
        {("v", i): entry(p.center + rng.normal(scale=0.3, size=3)) for i, p in enumerate(gt)}
    )
    cfg = RobustAlignConfig(inlier_threshold=5.0)
    table, t, diag = register(relative_model(gt, Sim3Transform.identity()), anchors, cfg, 1e-3)
    assert len(table) == 0 and t is None and diag.mean_residual > 1e-3
    table, t, _ = register(relative_model(gt, Sim3Transform.identity()), anchors, cfg, 10.0)
    assert len(table) == 8 and t is not None


def test_fuse_union_and_priority():
    video = PoseTable({("v", 1): entry([1, 0, 0], Provenance.VIDEO_PROCRUSTES),
                       ("v", 2): entry([2, 0, 0], Provenance.VIDEO_PROCRUSTES)})
    scan = PoseTable({("v", 2): entry([9, 9, 9], Provenance.SCAN_PROCRUSTES),
                      ("v", 3): entry([3, 0, 0], Provenance.SCAN_PROCRUSTES)})
    out = fuse([video, scan])
    assert out.valid_keys() == {("v", 1), ("v", 2), ("v", 3)}
    assert out[("v", 2)].provenance is Provenance.VIDEO_PROCRUSTES
    # order of the input list does not override provenance priority
    assert fuse([scan, video])[("v", 2)].provenance is Provenance.VIDEO_PROCRUSTES
    flipped = FusionPolicy(order=(Provenance.SCAN_PROCRUSTES, Provenance.VIDEO_PROCRUSTES))
    assert fuse([video, scan], flipped)[("v", 2)].provenance is Provenance.SCAN_PROCRUSTES


def test_fuse_single_table_is_identity():
    t = PoseTable({("v", 1): entry([1, 2, 3])})
    out = fuse([t])
    assert list(out.items()) == list(t.items())


def test_fuse_prefers_valid_and_unflagged():
    flagged = PoseTable({("v", 1): entry([1, 0, 0], Provenance.VIDEO_PROCRUSTES, outlier=True)})
    clean = PoseTable({("v", 1): entry([2, 0, 0], Provenance.PNP)})
    invalid = PoseTable({("v", 1): PoseEntry(None, Provenance.VIDEO_PROCRUSTES, valid=False)})
    assert fuse([flagged, clean])[("v", 1)].provenance is Provenance.PNP
    assert fuse([invalid, flagged])[("v", 1)].outlier


def test_fuse_monotone_on_random_tables():
    rng = np.random.default_rng(7)
    for _ in range(50):
        tables = [
            PoseTable({("v", int(i)): entry(rng.normal(size=3), p)
                       for i in rng.choice(30, size=rng.integers(0, 30), replace=False)})
            for p in (Provenance.VIDEO_PROCRUSTES, Provenance.SCAN_PROCRUSTES)
        ]
        fused = fuse(tables)
        totals = {"v": 30}
        fr = pose_recall(fused, totals).frame_rate
        assert fr >= max(pose_recall(t, totals).frame_rate for t in tables)
        assert fused.valid_keys() == tables[0].valid_keys() | tables[1].valid_keys()


def test_filter_outliers():
    scan = ScanGeometry("room", [[x, y, z] for x in (0, 4) for y in (0, 4) for z in (0, 2)])
    inside = PoseTable({("v", i): entry([1 + i * 0.5, 2, 1]) for i in range(4)})
    out, n = filter_outliers(inside, scan, 1.0)
    assert n == 0 and list(out.items()) == list(inside.items())
    t = inside.with_entries({("v", 9): entry([4 + 2.0, 2, 1])})
    out, n = filter_outliers(t, scan, 1.0)
    assert n == 1 and out[("v", 9)].outlier and out[("v", 9)].valid
    assert np.array_equal(out[("v", 9)].pose.center, t[("v", 9)].pose.center)
    assert sum(e.outlier for _, e in out.items()) == 1


def test_filter_flags_exactly_injected():
    rng = np.random.default_rng(8)
    scan = ScanGeometry("room", rng.uniform(0, 5, size=(200, 3)))
    lo, hi = scan.bounds.lo, scan.bounds.hi
    entries = {("v", i): entry(rng.uniform(lo, hi)) for i in range(200)}
    injected = set(int(i) for i in rng.choice(200, size=10, replace=False))
    for i in injected:
        direction = rng.normal(size=3)
        entries[("v", i)] = entry(hi + 3.0 + np.abs(direction))
    out, n = filter_outliers(PoseTable(entries), scan, margin=1.0)
    assert n == 10
    assert {f for (_, f), e in out.items() if e.outlier} == injected
    for k, e in out.items():
        assert np.array_equal(e.pose.center, entries[k].pose.center)


def test_constraints_inside_unchanged():
    p = np.array([[0.5, 0.5, 0.5], [1, 1, 1]])
    assert np.array_equal(apply_3d_constraints(p, UNIT_CUBE), p)


def test_constraints_snap_to_brute_force_vertex():
    rng = np.random.default_rng(9)
    scan = ScanGeometry("s", rng.normal(size=(300, 3)))
    pts = rng.normal(scale=4.0, size=(500, 3))
    out = apply_3d_constraints(pts, scan)
    inside = scan.bounds.contains(pts)
    for p, o, ins in zip(pts, out, inside):
        if ins:
            assert np.array_equal(p, o)
        else:
            d = np.sum((scan.vertices - p) ** 2, axis=1)
            assert np.array_equal(o, scan.vertices[np.argmin(d)])


def test_constraints_tie_break_lowest_index():
    scan = ScanGeometry("s", [[0, 0, 0], [2, 0, 0], [0, 2, 0], [0, 0, 2], [2, 2, 2]])
    # (1, -1, 0) is equidistant from vertices 0 and 1
    assert nearest_vertex(np.array([[1.0, -1.0, 0.0]]), scan).tolist() == [0]
    dup = ScanGeometry("d", [[5, 5, 5], [0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [5, 5, 5]])
    assert nearest_vertex(np.array([[6.0, 6.0, 6.0]]), dup).tolist() == [0]


def test_constraints_idempotent():
    rng = np.random.default_rng(10)
    scan = ScanGeometry("s", rng.uniform(-1, 1, size=(100, 3)))
    pts = rng.uniform(-3, 3, size=(300, 3))
    once = apply_3d_constraints(pts, scan)
    assert np.array_equal(apply_3d_constraints(once, scan), once)


def test_constrain_table_moves_only_outside_centers():
    t = PoseTable({("v", 0): entry([0.5, 0.5, 0.5]), ("v", 1): entry([3.0, 0.2, 0.1])})
    out = constrain_table(t, UNIT_CUBE)
    assert out[("v", 0)] is t[("v", 0)]
    assert np.array_equal(out[("v", 1)].pose.center, [1, 0, 0])


def test_pose_recall():
    full = PoseTable({("a", i): entry([0, 0, 0]) for i in range(10)})
    r = pose_recall(full, {"a": 10})
    assert (r.frame_rate, r.video_rate) == (100.0, 100.0)
    half = PoseTable({("a", i): entry([0, 0, 0]) for i in range(5)})
    r = pose_recall(half, {"a": 10, "b": 10})
    assert (r.frame_rate, r.video_rate) == (25.0, 50.0)
    flagged = half.flag([("a", 0)])
    assert pose_recall(flagged, {"a": 10}).valid_frames == 4
    with pytest.raises(ValidationError):
        pose_recall(half, {"b": 10})


def test_scan_requires_volume():
    with pytest.raises(ValidationError):
        ScanGeometry("flat", [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])
    with pytest.raises(ValidationError):
        ScanGeometry("tiny", [[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    assert np.allclose(UNIT_CUBE.bounds.hi, [1, 1, 1])
