"""Shared domain vocabulary: label spaces, threat levels, image records, manifests.

All types are immutable after construction; manifests are rebuilt rather than
mutated in place, so they are safe to share across concurrent readers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence


class ValidationError(ValueError):
    """Raised when a precondition or structural invariant is violated."""


class DataError(RuntimeError):
    """Raised when input data cannot be processed (missing files, bad labels)."""


class ThreatLevel(enum.IntEnum):
    """Ordinal threat level, Low < Medium < High."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @classmethod
    def from_name(cls, name: str) -> "ThreatLevel":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown threat level: {name!r}") from None

    def display(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class LabelSpace:
    """Named, ordered set of category labels (e.g. AVD vs AODTA)."""

    name: str
    members: tuple[str, ...]

    def __contains__(self, label: str) -> bool:
        return label in self.members

    def index(self, label: str) -> int:
        try:
            return self.members.index(label)
        except ValueError:
            raise ValidationError(
                f"label {label!r} not in label space {self.name!r}"
            ) from None

    def to_json(self) -> dict:
        return {"name": self.name, "members": list(self.members)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "LabelSpace":
        return make_label_space(obj["name"], obj["members"])


def make_label_space(name: str, members: Sequence[str]) -> LabelSpace:
    """Build an immutable label space; members must be non-empty and unique."""
    members = tuple(members)
    if len(members) < 2:
        raise ValidationError(f"label space {name!r} needs >= 2 members, got {len(members)}")
    if len(set(members)) != len(members):
        raise ValidationError(f"label space {name!r} has duplicate members: {members}")
    return LabelSpace(name=name, members=members)


# The paper's two label spaces.
AVD_SPACE = make_label_space("AVD", ["Airplane", "Drone", "Helicopter", "UAV"])
AODTA_SPACE = make_label_space("AODTA", ["Airplane", "Drone", "Helicopter", "Bird"])


@dataclass(frozen=True)
class ImageRecord:
    """One catalogued image with labels, provenance and pixel hash."""

    id: str
    source_dataset: str
    path: str
    width: int
    height: int
    category: str
    threat: Optional[ThreatLevel] = None
    attributes: tuple[str, ...] = ()
    provenance: str = "original"  # original | augmented
    parent_id: Optional[str] = None
    augmentation_desc: Optional[str] = None
    content_hash: str = ""

    def __post_init__(self):
        if self.provenance not in ("original", "augmented"):
            raise ValidationError(f"bad provenance {self.provenance!r} on {self.id}")
        augmented = self.provenance == "augmented"
        if augmented != (self.parent_id is not None) or augmented != (
            self.augmentation_desc is not None
        ):
            raise ValidationError(
                f"record {self.id}: provenance=augmented requires parent_id and "
                "augmentation_desc, and vice versa"
            )

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source_dataset": self.source_dataset,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "category": self.category,
            "threat": self.threat.display() if self.threat is not None else None,
            "attributes": list(self.attributes),
            "provenance": self.provenance,
            "parent_id": self.parent_id,
            "augmentation_desc": self.augmentation_desc,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ImageRecord":
        threat = obj.get("threat")
        return cls(
            id=obj["id"],
            source_dataset=obj["source_dataset"],
            path=obj["path"],
            width=int(obj["width"]),
            height=int(obj["height"]),
            category=obj["category"],
            threat=ThreatLevel.from_name(threat) if threat is not None else None,
            attributes=tuple(obj.get("attributes", ())),
            provenance=obj.get("provenance", "original"),
            parent_id=obj.get("parent_id"),
            augmentation_desc=obj.get("augmentation_desc"),
            content_hash=obj.get("content_hash", ""),
        )


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered catalog of records over one label space, with optional split."""

    name: str
    label_space: LabelSpace
    records: tuple[ImageRecord, ...] = ()
    split_assignments: Optional[Mapping[str, str]] = None  # id -> train|test

    def validate(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            seen, dupes = set(), set()
            for i in ids:
                (dupes if i in seen else seen).add(i)
            raise ValidationError(f"duplicate record ids: {sorted(dupes)[:5]}")
        by_id = {r.id: r for r in self.records}
        for r in self.records:
            if r.category not in self.label_space:
                raise ValidationError(
                    f"record {r.id}: category {r.category!r} not in label space "
                    f"{self.label_space.name!r}"
                )
            if r.parent_id is not None:
                parent = by_id.get(r.parent_id)
                if parent is None or parent.provenance != "original":
                    raise ValidationError(
                        f"record {r.id}: parent_id {r.parent_id!r} does not refer "
                        "to an original record"
                    )
                if parent.category != r.category or parent.threat != r.threat:
                    raise ValidationError(
                        f"record {r.id}: labels differ from parent {parent.id}"
                    )
        if self.split_assignments is not None:
            assigned = set(self.split_assignments)
            if assigned != set(ids):
                raise ValidationError("split_assignments do not cover record ids exactly")
            bad = {v for v in self.split_assignments.values() if v not in ("train", "test")}
            if bad:
                raise ValidationError(f"bad split values: {bad}")

    def with_records(self, records: Iterable[ImageRecord]) -> "DatasetManifest":
        return replace(self, records=tuple(records))

    def record_by_id(self, rid: str) -> ImageRecord:
        for r in self.records:
            if r.id == rid:
                return r
        raise KeyError(rid)

    def split_records(self, which: str) -> tuple[ImageRecord, ...]:
        if self.split_assignments is None:
            raise ValidationError(f"manifest {self.name!r} has no split assignments")
        return tuple(r for r in self.records if self.split_assignments[r.id] == which)


def manifest_counts(manifest: DatasetManifest) -> dict[str, int]:
    """Per-category record counts, in label-space order."""
    counts = {label: 0 for label in manifest.label_space.members}
    for r in manifest.records:
        counts[r.category] += 1
    return counts


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write JSON Lines: header line with name/label_space, then one record per line."""
    path = Path(path)
    header = {"name": manifest.name, "label_space": manifest.label_space.to_json()}
    if manifest.split_assignments is not None:
        header["split_assignments"] = dict(manifest.split_assignments)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines:
        raise DataError(f"empty manifest file: {path}")
    header = json.loads(lines[0])
    records = tuple(ImageRecord.from_json(json.loads(ln)) for ln in lines[1:])
    split = header.get("split_assignments")
    manifest = DatasetManifest(
        name=header["name"],
        label_space=LabelSpace.from_json(header["label_space"]),
        records=records,
        split_assignments=dict(split) if split is not None else None,
    )
    manifest.validate()
    return manifest
