"""Run configuration: one JSON document with a section per config type.

Example::

    {
      "schema_version": 1,
      "kind": "config",
      "robust_align": {"inlier_threshold": 0.1},
      "metrics": {"delta": 0.05},
      "synth": {"num_videos": 3, "noise": {"anchor_dropout": 0.3}}
    }

Missing sections and keys take the dataclass defaults, except the metrics
``delta`` which must be given before anything is evaluated.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import SchemaError, ValidationError
from ..metrics import MetricsConfig
from ..pipeline import PredictConfig
from ..pnp import PnPConfig
from ..procrustes import RobustAlignConfig
from ..registration import FusionPolicy
from ..synth import NoiseConfig, SynthConfig
from ..workflow import WorkflowConfig
from .schemas import read_json, validate

# Fields of WorkflowConfig that come from their own sections.
_WORKFLOW_NESTED = ("robust", "fusion")


@dataclass(frozen=True)
class RunConfig:
    robust_align: RobustAlignConfig = field(default_factory=RobustAlignConfig)
    pnp: PnPConfig = field(default_factory=PnPConfig)
    fusion: FusionPolicy = field(default_factory=FusionPolicy)
    workflow: WorkflowConfig = field(default_factory=WorkflowConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    metrics: MetricsConfig | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)

    def require_metrics(self) -> MetricsConfig:
        if self.metrics is None:
            raise ValidationError("metrics.delta must be set in the config to evaluate")
        return self.metrics


def _build(cls, section: dict, path: str, strict: bool, skip: tuple[str, ...] = (), **extra: Any):
    if not isinstance(section, dict):
        raise SchemaError("section must be an object", path)
    names = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in section.items():
        if key not in names or key in skip:
            if strict:
                raise SchemaError(f"unknown key {key!r}", f"{path}.{key}")
            warnings.warn(f"{path}.{key}: unknown key ignored", stacklevel=3)
            continue
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (ValidationError, ValueError, TypeError) as exc:
        raise SchemaError(str(exc), path) from exc


def config_from_json(doc: dict, strict: bool = True) -> RunConfig:
    validate(doc, "config", strict)
    robust = _build(RobustAlignConfig, doc.get("robust_align", {}), "$.robust_align", strict)
    fusion_sec = dict(doc.get("fusion", {}))
    fusion = _build(FusionPolicy, fusion_sec, "$.fusion", strict)
    workflow = _build(
        WorkflowConfig, doc.get("workflow", {}), "$.workflow", strict, _WORKFLOW_NESTED,
        robust=robust, fusion=fusion,
    )
    synth_sec = dict(doc.get("synth", {}))
    noise = _build(NoiseConfig, synth_sec.pop("noise", {}), "$.synth.noise", strict)
    if "anchor_dropout_per_video" in synth_sec:
        synth_sec["anchor_dropout_per_video"] = dict(synth_sec["anchor_dropout_per_video"])
    synth = _build(SynthConfig, synth_sec, "$.synth", strict, ("noise",), noise=noise)
    metrics_sec = doc.get("metrics", {})
    metrics = (
        _build(MetricsConfig, metrics_sec, "$.metrics", strict) if "delta" in metrics_sec else None
    )
    if metrics is None and metrics_sec:
        raise SchemaError("metrics section needs 'delta'", "$.metrics")
    return RunConfig(
        robust_align=robust,
        pnp=_build(PnPConfig, doc.get("pnp", {}), "$.pnp", strict),
        fusion=fusion,
        workflow=workflow,
        predict=_build(PredictConfig, doc.get("predict", {}), "$.predict", strict),
        metrics=metrics,
        synth=synth,
    )


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def config_to_json(cfg: RunConfig) -> dict:
    workflow = _plain(cfg.workflow)
    for key in _WORKFLOW_NESTED:
        workflow.pop(key)
    doc = {
        "schema_version": 1,
        "kind": "config",
        "robust_align": _plain(cfg.robust_align),
        "pnp": _plain(cfg.pnp),
        "fusion": _plain(cfg.fusion),
        "workflow": workflow,
        "predict": _plain(cfg.predict),
        "synth": _plain(cfg.synth),
    }
    if cfg.metrics is not None:
        doc["metrics"] = _plain(cfg.metrics)
    return doc


def load_config(path: str | Path | None, strict: bool = True) -> RunConfig:
    """Read a config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    return config_from_json(read_json(path), strict)
