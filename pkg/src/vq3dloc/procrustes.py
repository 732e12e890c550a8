"""Weighted similarity alignment of corresponding 3D point sets.

``solve_weighted_procrustes`` fits ``(s, R, T)`` minimizing
``sum_k w_k |s R p_k + T - q_k|^2`` in closed form: weighted centroids, the
weighted cross-covariance of the centered sets, an SVD with a determinant
correction so that ``R`` is never a reflection, and a scale estimate.
``solve_robust_procrustes`` wraps it in a seeded RANSAC loop.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DegenerateInput, NoConsensus, NumericalFailure, ValidationError
from .geometry import Rotation3, Sim3Transform

ScaleMethod = Literal["mean-distance", "least-squares", "fixed"]

SCALE_EPS = 1e-7
MIN_POINTS = 3


@dataclass(frozen=True, eq=False)
class CorrespondenceSet3D:
    """Paired points: ``source`` (reconstruction frame) -> ``target`` (scan frame)."""

    source: NDArray[np.float64]
    target: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __init__(self, source: ArrayLike, target: ArrayLike, weights: ArrayLike | None = None):
        src = np.array(source, dtype=np.float64).reshape(-1, 3)
        dst = np.array(target, dtype=np.float64).reshape(-1, 3)
        if len(src) != len(dst):
            raise ValidationError(f"source has {len(src)} points, target has {len(dst)}")
        if len(src) < 1:
            raise ValidationError("correspondence set is empty")
        w = np.ones(len(src)) if weights is None else np.array(weights, dtype=np.float64).ravel()
        if w.shape != (len(src),):
            raise ValidationError("one weight per correspondence required")
        if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst)) and np.all(np.isfinite(w))):
            raise ValidationError("non-finite coordinates or weights")
        if np.any(w <= 0):
            raise ValidationError("weights must be positive")
        for a in (src, dst, w):
            a.setflags(write=False)
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", dst)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.source)

    def subset(self, index: ArrayLike) -> CorrespondenceSet3D:
        idx = np.asarray(index)
        return CorrespondenceSet3D(self.source[idx], self.target[idx], self.weights[idx])


@dataclass(frozen=True)
class RobustAlignConfig:
    max_iterations: int = 2000
    inlier_threshold: float = 0.25
    min_inliers: int = 3
    rng_seed: int = 0
    collinearity_tolerance: float = 1e-4
    scale_eps: float = SCALE_EPS
    scale_method: ScaleMethod = "mean-distance"

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be positive")
        if not self.inlier_threshold > 0:
            raise ValidationError("inlier_threshold must be positive")
        if self.min_inliers < MIN_POINTS:
            raise ValidationError("min_inliers must be at least 3")
        if self.collinearity_tolerance < 0:
            raise ValidationError("collinearity_tolerance must be non-negative")


def collinearity_check(points: ArrayLike, tolerance: float = 1e-4) -> bool:
    """True when the points span at least a plane.

    Compares the second singular value of the centered point matrix against
    ``tolerance`` times the first. Identical points count as not spanning.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        return False
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return bool(sv[0] > 0.0 and sv[1] > tolerance * sv[0])


def weighted_objective(t: Sim3Transform, c: CorrespondenceSet3D) -> float:
    r = t.apply(c.source) - c.target
    return float(np.sum(c.weights * np.einsum("ij,ij->i", r, r)))


def residuals(t: Sim3Transform, c: CorrespondenceSet3D) -> NDArray[np.float64]:
    """Per-correspondence distance in the target frame."""
    return np.linalg.norm(t.apply(c.source) - c.target, axis=1)


def solve_weighted_procrustes(
    c: CorrespondenceSet3D,
    *,
    collinearity_tolerance: float = 1e-4,
    scale_eps: float = SCALE_EPS,
    scale_method: ScaleMethod = "mean-distance",
) -> Sim3Transform:
    """Closed-form weighted similarity fit.

    Args:
        c: Correspondences, at least three, source side not collinear.
        collinearity_tolerance: Singular-value ratio used by
            :func:`collinearity_check` on the source points.
        scale_eps: Lower clamp on the source spread in the scale denominator.
        scale_method: ``"mean-distance"`` takes the ratio of weighted mean
            distances to the centroids (exact on noiseless data);
            ``"least-squares"`` uses the trace formula that minimizes the
            objective for the chosen rotation; ``"fixed"`` returns scale 1.

    Raises:
        DegenerateInput: fewer than three points or collinear source points.
        NumericalFailure: the SVD did not converge.
    """
    n = len(c)
    if n < MIN_POINTS:
        raise DegenerateInput(f"need at least {MIN_POINTS} correspondences, got {n}")
    if not collinearity_check(c.source, collinearity_tolerance):
        raise DegenerateInput("source points are collinear; at least three non-collinear points are required")

    w = c.weights
    wsum = w.sum()
    p_hat = w @ c.source / wsum
    q_hat = w @ c.target / wsum
    x = c.source - p_hat
    y = c.target - q_hat

    # 3x3 cross-covariance X W Y^T with X, Y holding the centered vectors as columns.
    s_mat = (x * w[:, None]).T @ y
    try:
        u, sigma, vt = np.linalg.svd(s_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T)) or 1.0
    r = v @ np.diag([1.0, 1.0, d]) @ u.T

    if scale_method == "mean-distance":
        x_bar = float(w @ np.linalg.norm(x, axis=1)) / wsum
        y_bar = float(w @ np.linalg.norm(y, axis=1)) / wsum
        s = y_bar / max(x_bar, scale_eps)
    elif scale_method == "least-squares":
        var_x = float(w @ np.einsum("ij,ij->i", x, x))
        s = float(sigma[0] + sigma[1] + d * sigma[2]) / max(var_x, scale_eps)
    elif scale_method == "fixed":
        s = 1.0
    else:
        raise ValidationError(f"unknown scale_method {scale_method!r}")
    if not s > 0.0:
        raise DegenerateInput("target points have no spread; scale is zero")

    t = q_hat - s * (r @ p_hat)
    return Sim3Transform(s, Rotation3(r), t)


def _sample_triples(n: int, cfg: RobustAlignConfig, rng: np.random.Generator):
    total = math.comb(n, 3)
    if total <= cfg.max_iterations:
        yield from itertools.combinations(range(n), 3)
        return
    for _ in range(cfg.max_iterations):
        yield tuple(int(i) for i in rng.choice(n, size=3, replace=False))


def solve_robust_procrustes(
    c: CorrespondenceSet3D, cfg: RobustAlignConfig = RobustAlignConfig()
) -> tuple[Sim3Transform, NDArray[np.bool_]]:
    """RANSAC over minimal 3-point samples, then a weighted refit on the consensus.

    Small problems (``C(n, 3) <= max_iterations``) are enumerated
    exhaustively instead of sampled. Among hypotheses with equal inlier
    count, the lowest mean inlier residual wins; remaining ties go to the
    earliest sample. The refit is repeated until the consensus set stops
    changing; the returned transform is the weighted fit on the returned
    mask. When the refit settles (the usual case) the mask is exactly the
    set of correspondences within ``inlier_threshold`` of the transform;
    if it starts to cycle, the loop stops at the last unseen consensus.

    Raises:
        DegenerateInput: every sample was collinear.
        NoConsensus: no hypothesis gathered ``min_inliers`` inliers.
    """
    n = len(c)
    if n < cfg.min_inliers:
        raise NoConsensus(f"{n} correspondences cannot reach min_inliers={cfg.min_inliers}")
    if not collinearity_check(c.source, cfg.collinearity_tolerance):
        raise DegenerateInput("all source points are collinear")

    solve = lambda cs: solve_weighted_procrustes(  # noqa: E731
        cs,
        collinearity_tolerance=cfg.collinearity_tolerance,
        scale_eps=cfg.scale_eps,
        scale_method=cfg.scale_method,
    )
    rng = np.random.default_rng(cfg.rng_seed)
    best_key: tuple[int, float] | None = None
    best_mask: NDArray[np.bool_] | None = None
    any_valid = False
    for triple in _sample_triples(n, cfg, rng):
        idx = np.array(triple)
        if not collinearity_check(c.source[idx], cfg.collinearity_tolerance):
            continue
        try:
            hyp = solve(c.subset(idx))
        except DegenerateInput:
            continue
        any_valid = True
        res = residuals(hyp, c)
        mask = res < cfg.inlier_threshold
        count = int(mask.sum())
        if count == 0:
            continue
        key = (-count, float(res[mask].mean()))
        if best_key is None or key < best_key:
            best_key, best_mask = key, mask
            if count == n:
                break

    if not any_valid:
        raise DegenerateInput("every sampled triple was collinear")
    if best_mask is None or int(best_mask.sum()) < cfg.min_inliers:
        got = 0 if best_mask is None else int(best_mask.sum())
        raise NoConsensus(f"best hypothesis has {got} inliers, need {cfg.min_inliers}")

    mask = best_mask
    seen: list[bytes] = []
    for _ in range(20):
        if not collinearity_check(c.source[mask], cfg.collinearity_tolerance):
            raise DegenerateInput("consensus set is collinear")
        model = solve(c.subset(np.flatnonzero(mask)))
        new_mask = residuals(model, c) < cfg.inlier_threshold
        if np.array_equal(new_mask, mask):
            break
        key = new_mask.tobytes()
        if key in seen or int(new_mask.sum()) < cfg.min_inliers:
            break
        seen.append(key)
        mask = new_mask
    if int(mask.sum()) < cfg.min_inliers:
        raise NoConsensus("consensus collapsed during refit")
    return model, mask
