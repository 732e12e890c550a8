"""End-to-end registration over several reconstructions, with the ablation
switches: video and/or scan configurations, outlier filtering, 3D
constraints."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

from .errors import DegenerateInput, InsufficientAnchors, NoConsensus, NumericalFailure
from .io.schemas import RegistrationResult
from .procrustes import RobustAlignConfig
from .registration import (
    FusionPolicy,
    ScanGeometry,
    SourceKind,
    SparseReconstruction,
    constrain_table,
    filter_outliers,
    fuse,
    register,
)
from .tables import PoseTable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkflowConfig:
    use_video: bool = True
    use_scan: bool = True
    include_pnp: bool = False
    filter: bool = False
    filter_margin: float = 1.0
    constraints: bool = False
    robust: RobustAlignConfig = field(default_factory=RobustAlignConfig)
    fusion: FusionPolicy = field(default_factory=FusionPolicy)


@dataclass(frozen=True, eq=False)
class WorkflowResult:
    fused: PoseTable
    tables: dict[str, PoseTable]
    results: list[RegistrationResult]
    flagged: int = 0


def register_one(
    name: str,
    recon: SparseReconstruction,
    anchors: PoseTable,
    robust: RobustAlignConfig,
    residual_gate: float | None,
) -> tuple[PoseTable, RegistrationResult]:
    """Register a single reconstruction; failures become an empty table and a ``failed`` record."""
    try:
        table, transform, diag = register(recon, anchors, robust, residual_gate)
    except (InsufficientAnchors, DegenerateInput, NoConsensus, NumericalFailure) as exc:
        log.info("registration of %s failed: %s", name, exc)
        return PoseTable(), RegistrationResult(name, "failed", error=f"{type(exc).__name__}: {exc}")
    status = "ok" if transform is not None else "gated"
    return table, RegistrationResult(
        name, status, transform, diag.anchor_count, diag.inlier_count, diag.mean_residual
    )


def run_registration(
    models: Mapping[str, SparseReconstruction],
    anchors: PoseTable,
    cfg: WorkflowConfig = WorkflowConfig(),
    scan: ScanGeometry | None = None,
) -> WorkflowResult:
    """Fit every enabled reconstruction, fuse, then post-process.

    Fusion order follows ``cfg.fusion``; tables are offered in name order so
    the result is independent of mapping order.
    """
    tables: dict[str, PoseTable] = {}
    results: list[RegistrationResult] = []
    for name in sorted(models):
        recon = models[name]
        kind = recon.source.kind
        if (kind is SourceKind.VIDEO and not cfg.use_video) or (
            kind is SourceKind.SCAN_MERGE and not cfg.use_scan
        ):
            continue
        table, res = register_one(name, recon, anchors, cfg.robust, cfg.fusion.residual_gate)
        tables[name] = table
        results.append(res)
    inputs = [tables[n] for n in sorted(tables)]
    if cfg.include_pnp:
        inputs.append(anchors)
    fused = fuse(inputs, cfg.fusion) if inputs else PoseTable()
    flagged = 0
    if cfg.filter:
        if scan is None:
            raise ValueError("outlier filtering needs the scan")
        fused, flagged = filter_outliers(fused, scan, cfg.filter_margin)
    if cfg.constraints:
        if scan is None:
            raise ValueError("3D constraints need the scan")
        fused = constrain_table(fused, scan)
    return WorkflowResult(fused, tables, results, flagged)
