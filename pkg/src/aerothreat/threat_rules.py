"""Priority-ordered rule engine assigning threat levels from record attributes."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .core_types import (
    DataError,
    DatasetManifest,
    ImageRecord,
    ThreatLevel,
    ValidationError,
)

WILDCARD = "*"


class UnannotatableError(DataError):
    """No rule matched and the ruleset has no default level."""

    def __init__(self, record_ids: list[str]):
        self.record_ids = record_ids
        preview = ", ".join(record_ids[:10])
        super().__init__(
            f"{len(record_ids)} record(s) matched no rule and no default level is set: {preview}"
        )


@dataclass(frozen=True)
class ThreatRule:
    category: str  # label name or "*"
    attribute_pattern: str  # case-insensitive substring
    level: ThreatLevel
    priority: int  # higher wins

    def matches(self, record: ImageRecord) -> bool:
        if self.category != WILDCARD and self.category != record.category:
            return False
        needle = self.attribute_pattern.lower()
        return any(needle in attr.lower() for attr in record.attributes)


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[ThreatRule, ...]
    default_level: Optional[ThreatLevel] = None

    def __post_init__(self):
        priorities = [r.priority for r in self.rules]
        if len(set(priorities)) != len(priorities):
            raise ValidationError("rule priorities must be unique within a ruleset")
        ordered = tuple(sorted(self.rules, key=lambda r: -r.priority))
        object.__setattr__(self, "rules", ordered)


def annotate(record: ImageRecord, ruleset: RuleSet) -> ThreatLevel:
    """First matching rule in descending priority wins; else the default."""
    for rule in ruleset.rules:
        if rule.matches(record):
            return rule.level
    if ruleset.default_level is not None:
        return ruleset.default_level
    raise UnannotatableError([record.id])


def annotate_manifest(manifest: DatasetManifest, ruleset: RuleSet) -> DatasetManifest:
    """Annotate every record; augmented records inherit their parent's level."""
    levels: dict[str, ThreatLevel] = {}
    failed: list[str] = []
    for r in manifest.records:
        if r.provenance == "augmented":
            continue
        try:
            levels[r.id] = annotate(r, ruleset)
        except UnannotatableError:
            failed.append(r.id)
    if failed:
        raise UnannotatableError(sorted(failed))
    out_records = []
    for r in manifest.records:
        level = levels[r.parent_id] if r.provenance == "augmented" else levels[r.id]
        out_records.append(replace(r, threat=level))
    out = manifest.with_records(out_records)
    out.validate()
    return out


def default_ruleset() -> RuleSet:
    """The shipped example annotation criteria: civilian/hobby -> Low,
    military/attack -> High, everything else defaults to Medium."""
    rows = [
        ("Airplane", "civilian", ThreatLevel.LOW),
        ("Airplane", "fighter", ThreatLevel.HIGH),
        ("Bird", "live", ThreatLevel.LOW),
        ("Bird", "military", ThreatLevel.HIGH),
        ("Drone", "hobby", ThreatLevel.LOW),
        ("Drone", "military", ThreatLevel.HIGH),
        ("Helicopter", "news", ThreatLevel.LOW),
        ("Helicopter", "attack", ThreatLevel.HIGH),
    ]
    rules = tuple(
        ThreatRule(category=c, attribute_pattern=p, level=lv, priority=80 - 10 * i)
        for i, (c, p, lv) in enumerate(rows)
    )
    return RuleSet(rules=rules, default_level=ThreatLevel.MEDIUM)


def load_ruleset(path: str | Path) -> RuleSet:
    """Rules file: JSON array of rule objects, or an object with "rules" and
    an optional "default_level"."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, list):
        raw_rules, default = obj, None
    else:
        raw_rules = obj.get("rules", [])
        default = obj.get("default_level")
    rules = tuple(
        ThreatRule(
            category=r.get("category", WILDCARD),
            attribute_pattern=r["attribute_pattern"],
            level=ThreatLevel.from_name(r["level"]),
            priority=int(r["priority"]),
        )
        for r in raw_rules
    )
    return RuleSet(
        rules=rules,
        default_level=ThreatLevel.from_name(default) if default is not None else None,
    )


def save_ruleset(ruleset: RuleSet, path: str | Path) -> None:
    obj = {
        "rules": [
            {
                "category": r.category,
                "attribute_pattern": r.attribute_pattern,
                "level": r.level.display(),
                "priority": r.priority,
            }
            for r in ruleset.rules
        ],
    }
    if ruleset.default_level is not None:
        obj["default_level"] = ruleset.default_level.display()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
