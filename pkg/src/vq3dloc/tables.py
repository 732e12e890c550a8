"""Per-frame world poses with provenance and validity flags."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType

from .errors import ValidationError
from .geometry import Pose

FrameKey = tuple[str, int]


class Provenance(str, Enum):
    PNP = "pnp"
    PNP_TEMPORAL = "pnp-temporal"
    VIDEO_PROCRUSTES = "video-procrustes"
    SCAN_PROCRUSTES = "scan-procrustes"
    GROUND_TRUTH = "ground-truth"


@dataclass(frozen=True, eq=False)
class PoseEntry:
    """One frame of a :class:`PoseTable`.

    ``outlier`` marks a valid pose that a post-hoc filter rejected; invalid
    entries carry no pose.
    """

    pose: Pose | None
    provenance: Provenance
    valid: bool = True
    outlier: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.valid and self.pose is None:
            raise ValidationError("valid entry needs a pose")
        if self.outlier and not self.valid:
            raise ValidationError("outlier entries must be valid")

    @property
    def usable(self) -> bool:
        return self.valid and not self.outlier


@dataclass(frozen=True, eq=False)
class PoseTable:
    """Immutable map ``(video_id, frame_id) -> PoseEntry``. Updates return new tables."""

    entries: Mapping[FrameKey, PoseEntry] = field(default_factory=dict)

    def __post_init__(self) -> None:
        normalized = {(str(v), int(f)): e for (v, f), e in self.entries.items()}
        object.__setattr__(self, "entries", MappingProxyType(dict(sorted(normalized.items()))))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[FrameKey]:
        return iter(self.entries)

    def __contains__(self, key: object) -> bool:
        return key in self.entries

    def __getitem__(self, key: FrameKey) -> PoseEntry:
        return self.entries[key]

    def get(self, key: FrameKey) -> PoseEntry | None:
        return self.entries.get(key)

    def items(self) -> Iterable[tuple[FrameKey, PoseEntry]]:
        return self.entries.items()

    def usable_pose(self, key: FrameKey) -> Pose | None:
        """Pose for ``key`` if it is valid and not flagged as an outlier."""
        e = self.entries.get(key)
        return e.pose if e is not None and e.usable else None

    def valid_keys(self, include_outliers: bool = False) -> set[FrameKey]:
        return {
            k for k, e in self.entries.items() if e.valid and (include_outliers or not e.outlier)
        }

    def videos(self) -> set[str]:
        return {v for v, _ in self.entries}

    def with_entries(self, updates: Mapping[FrameKey, PoseEntry]) -> PoseTable:
        merged = dict(self.entries)
        merged.update(updates)
        return PoseTable(merged)

    def flag(self, keys: Iterable[FrameKey]) -> PoseTable:
        """Copy with ``outlier=True`` on the given valid entries."""
        merged = dict(self.entries)
        for k in keys:
            merged[k] = replace(merged[k], outlier=True)
        return PoseTable(merged)
