"""Curation-to-evaluation toolkit for dual-task airborne object analysis."""

from .core_types import (
    AODTA_SPACE,
    AVD_SPACE,
    DataError,
    DatasetManifest,
    ImageRecord,
    LabelSpace,
    ThreatLevel,
    ValidationError,
    load_manifest,
    make_label_space,
    manifest_counts,
    save_manifest,
)

__all__ = [
    "AODTA_SPACE",
    "AVD_SPACE",
    "DataError",
    "DatasetManifest",
    "ImageRecord",
    "LabelSpace",
    "ThreatLevel",
    "ValidationError",
    "load_manifest",
    "make_label_space",
    "manifest_counts",
    "save_manifest",
]
