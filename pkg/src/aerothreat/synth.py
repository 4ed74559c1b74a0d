"""Deterministic synthetic dataset: category <-> shape, threat <-> dominant hue.

Each image is a single filled shape (square, circle, triangle, cross) drawn
over a dark noisy background. The shape's color channel encodes the threat
level (green=low, blue=medium, red=high), so both heads have clean signal.
Filenames carry the threat token so rule-based annotation recovers the level.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .core_types import make_label_space
from .threat_rules import RuleSet, ThreatRule, save_ruleset
from .core_types import ThreatLevel

SYNTH_SPACE = make_label_space("SYNTH", ["Square", "Circle", "Triangle", "Cross"])
THREAT_ORDER = ["low", "medium", "high"]
# dominant channel per threat token
_THREAT_COLOR = {
    "low": np.array([40, 210, 40]),
    "medium": np.array([40, 60, 220]),
    "high": np.array([220, 40, 40]),
}


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size].astype(float)
    if shape == "Square":
        return (np.abs(xs - cx) <= r) & (np.abs(ys - cy) <= r)
    if shape == "Circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    if shape == "Triangle":
        # upward triangle: inside three half-planes
        top = cy - r
        bottom = cy + r
        in_vert = (ys >= top) & (ys <= bottom)
        half_width = (ys - top) / (2 * r + 1e-9) * r
        return in_vert & (np.abs(xs - cx) <= half_width)
    if shape == "Cross":
        bar = r * 0.38
        return ((np.abs(xs - cx) <= bar) & (np.abs(ys - cy) <= r)) | (
            (np.abs(ys - cy) <= bar) & (np.abs(xs - cx) <= r)
        )
    raise ValueError(f"unknown shape {shape!r}")


def render_shape_image(
    shape: str, threat_token: str, rng: np.random.Generator, size: int = 64
) -> np.ndarray:
    """One uint8 RGB image with jittered shape geometry and background noise."""
    noise = rng.normal(18, 5, size=(size, size, 3))
    img = np.clip(noise, 0, 45)
    jitter = size * 0.04
    cx = size / 2 + rng.uniform(-jitter, jitter)
    cy = size / 2 + rng.uniform(-jitter, jitter)
    # per-shape base size keeps the fill fraction (and so the pooled feature
    # statistics) well separated between categories
    base_r = {"Square": 0.36, "Circle": 0.32, "Cross": 0.30, "Triangle": 0.24}[shape]
    r = size * base_r * rng.uniform(0.98, 1.02)
    mask = _shape_mask(shape, size, cx, cy, r)
    color = _THREAT_COLOR[threat_token] + rng.normal(0, 10, size=3)
    img[mask] = np.clip(color, 0, 255)
    return np.clip(img, 0, 255).astype(np.uint8)


def synth_ruleset() -> RuleSet:
    rules = tuple(
        ThreatRule(category="*", attribute_pattern=token, level=level, priority=30 - 10 * i)
        for i, (token, level) in enumerate(
            [("high", ThreatLevel.HIGH), ("medium", ThreatLevel.MEDIUM), ("low", ThreatLevel.LOW)]
        )
    )
    return RuleSet(rules=rules, default_level=None)


def generate_synthetic_dataset(
    out_dir: str | Path,
    per_category: int = 130,
    seed: int = 0,
    size: int = 64,
) -> dict[str, Path]:
    """Write one directory of PNGs per category plus a matching rules file.

    Returns {category: directory}. Threat levels cycle low/medium/high within
    each category so every (category, threat) cell is populated.
    """
    out_dir = Path(out_dir)
    dirs: dict[str, Path] = {}
    rng = np.random.default_rng(seed)
    for shape in SYNTH_SPACE.members:
        cat_dir = out_dir / shape.lower()
        cat_dir.mkdir(parents=True, exist_ok=True)
        dirs[shape] = cat_dir
        for i in range(per_category):
            token = THREAT_ORDER[i % 3]
            img = render_shape_image(shape, token, rng, size=size)
            name = f"{shape.lower()}_{token}_{i:04d}.png"
            Image.fromarray(img).save(cat_dir / name)
    save_ruleset(synth_ruleset(), out_dir / "rules.json")
    return dirs
