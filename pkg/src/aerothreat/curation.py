"""Dataset curation: ingestion, dedup, preprocessing, splitting and balancing.

Images are catalogued at native resolution and preprocessed on demand to the
network's 32x32x3 input. Balancing raises every category to the majority count
by writing provenance-tracked augmented copies of minority-class originals.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .core_types import (
    DataError,
    DatasetManifest,
    ImageRecord,
    ThreatLevel,
    ValidationError,
    manifest_counts,
)

IMAGE_SIZE = 32
IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg"}


def worker_count() -> int:
    """Parallelism cap, from AEROTHREAT_THREADS (default: cpu count, max 8)."""
    env = os.environ.get("AEROTHREAT_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


@dataclass(frozen=True)
class AugmentationParams:
    rotation_max: float = 20.0  # degrees
    shift_max: float = 0.1  # fraction of width/height
    shear_max: float = 10.0  # degrees
    zoom_range: tuple[float, float] = (0.9, 1.1)
    hflip_enabled: bool = True
    fill_mode: str = "nearest"
    seed: int = 0

    def __post_init__(self):
        if self.rotation_max < 0:
            raise ValidationError("rotation_max must be >= 0")
        if not (0 <= self.shift_max < 1):
            raise ValidationError("shift_max must be in [0, 1)")
        zmin, zmax = self.zoom_range
        if not (zmin <= 1 <= zmax):
            raise ValidationError("zoom_range must bracket 1")
        if self.fill_mode != "nearest":
            raise ValidationError(f"unsupported fill_mode {self.fill_mode!r}")


@dataclass(frozen=True)
class SplitConfig:
    train_fraction: float = 0.8
    seed: int = 0
    shuffle_train: bool = True

    def __post_init__(self):
        if not (0 < self.train_fraction < 1):
            raise ValidationError("train_fraction must be in (0, 1)")


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to a HxWx3 uint8 RGB array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def content_hash(pixels: np.ndarray) -> str:
    """Hex digest over decoded RGB pixel bytes (dims prefixed to avoid aliasing)."""
    h, w = pixels.shape[:2]
    digest = hashlib.sha256()
    digest.update(f"{w}x{h}:".encode())
    digest.update(np.ascontiguousarray(pixels).tobytes())
    return digest.hexdigest()


def _tokenize_stem(stem: str) -> tuple[str, ...]:
    return tuple(t.lower() for t in re.split(r"[^0-9A-Za-z]+", stem) if t)


def ingest_source(
    directory: str | Path,
    source_name: str,
    category: str,
    manifest: DatasetManifest,
) -> DatasetManifest:
    """Catalog every readable image under directory as an original record.

    Unreadable files are skipped with a warning, not fatal. Attributes are
    derived from filename tokens (e.g. "hobby_drone_01.png" -> hobby, drone).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"source directory does not exist: {directory}")
    if category not in manifest.label_space:
        raise ValidationError(
            f"category {category!r} not in label space {manifest.label_space.name!r}"
        )
    files = sorted(
        p for p in directory.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )

    def build(path: Path):
        try:
            pixels = load_image(path)
        except DataError as exc:
            return ("skip", path, str(exc))
        rel = path.relative_to(directory).as_posix()
        record = ImageRecord(
            id=f"{source_name}:{rel}",
            source_dataset=source_name,
            path=str(path),
            width=pixels.shape[1],
            height=pixels.shape[0],
            category=category,
            attributes=_tokenize_stem(path.stem),
            content_hash=content_hash(pixels),
        )
        return ("ok", path, record)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(build, files))

    added = [r for kind, _, r in results if kind == "ok"]
    skipped = [(p, msg) for kind, p, msg in results if kind == "skip"]
    for path, msg in skipped:
        print(f"warning: skipping unreadable file: {msg}")
    if not added:
        raise ValidationError(f"no readable images in {directory}")
    out = manifest.with_records(list(manifest.records) + added)
    out.validate()
    return out


def dedupe(manifest: DatasetManifest) -> tuple[DatasetManifest, int]:
    """Drop records sharing a content hash, keeping the smallest id per group."""
    keep_for_hash: dict[str, str] = {}
    for r in manifest.records:
        if not r.content_hash:
            raise ValidationError(f"record {r.id} has no content_hash")
        best = keep_for_hash.get(r.content_hash)
        if best is None or r.id < best:
            keep_for_hash[r.content_hash] = r.id
    kept = [r for r in manifest.records if keep_for_hash[r.content_hash] == r.id]
    removed = len(manifest.records) - len(kept)
    return manifest.with_records(kept), removed


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of a HxWxC float array."""
    in_h, in_w = image.shape[:2]
    if in_h < 1 or in_w < 1:
        raise ValidationError("image must have >= 1 pixel")
    ys = (
        np.linspace(0.0, in_h - 1.0, out_h)
        if out_h > 1 and in_h > 1
        else np.zeros(out_h)
    )
    xs = (
        np.linspace(0.0, in_w - 1.0, out_w)
        if out_w > 1 and in_w > 1
        else np.zeros(out_w)
    )
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess_image(pixels: np.ndarray) -> np.ndarray:
    """Raw decoded image -> (32, 32, 3) float array in [0, 1]."""
    if pixels.ndim == 2:
        pixels = np.repeat(pixels[:, :, None], 3, axis=2)
    if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
        raise ValidationError(f"expected 1 or 3 channels, got shape {pixels.shape}")
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    resized = resize_bilinear(pixels.astype(np.float64), IMAGE_SIZE, IMAGE_SIZE)
    return resized / 255.0


def load_preprocessed(path: str | Path) -> np.ndarray:
    return preprocess_image(load_image(path))


def apply_affine(
    image: np.ndarray,
    rotation_deg: float = 0.0,
    shift_x: float = 0.0,
    shift_y: float = 0.0,
    shear_deg: float = 0.0,
    zoom: float = 1.0,
    hflip: bool = False,
) -> np.ndarray:
    """Affine warp about the image center with bilinear sampling.

    Shifts are fractions of width/height. Out-of-frame samples clamp to the
    nearest edge pixel. The horizontal flip is a pure column reversal applied
    last, so flipping twice is a bit-exact identity.
    """
    h, w = image.shape[:2]
    out = image
    if rotation_deg != 0.0 or shift_x != 0.0 or shift_y != 0.0 or shear_deg != 0.0 or zoom != 1.0:
        theta = math.radians(rotation_deg)
        shear = math.radians(shear_deg)
        # forward map: p_out = R @ Sh @ S @ (p - c) + c + t   (x right, y down)
        rot = np.array(
            [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
        )
        sh = np.array([[1.0, -math.sin(shear)], [0.0, math.cos(shear)]])
        fwd = rot @ sh * zoom
        inv = np.linalg.inv(fwd)
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        tx, ty = shift_x * w, shift_y * h
        xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        dx = xs - cx - tx
        dy = ys - cy - ty
        src_x = inv[0, 0] * dx + inv[0, 1] * dy + cx
        src_y = inv[1, 0] * dx + inv[1, 1] * dy + cy
        # nearest-edge fill via coordinate clamping
        src_x = np.clip(src_x, 0.0, w - 1.0)
        src_y = np.clip(src_y, 0.0, h - 1.0)
        x0 = np.floor(src_x).astype(int)
        y0 = np.floor(src_y).astype(int)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        wx = (src_x - x0)[:, :, None]
        wy = (src_y - y0)[:, :, None]
        img = image.astype(np.float64)
        out = (
            img[y0, x0] * (1 - wx) * (1 - wy)
            + img[y0, x1] * wx * (1 - wy)
            + img[y1, x0] * (1 - wx) * wy
            + img[y1, x1] * wx * wy
        )
    if hflip:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def draw_augmentation(
    params: AugmentationParams, draw_seed: int
) -> tuple[dict, str]:
    """Draw one set of transform parameters uniformly within bounds."""
    rng = np.random.default_rng(draw_seed)
    rotation = rng.uniform(-params.rotation_max, params.rotation_max)
    shift_x = rng.uniform(-params.shift_max, params.shift_max)
    shift_y = rng.uniform(-params.shift_max, params.shift_max)
    shear = rng.uniform(-params.shear_max, params.shear_max)
    zoom = rng.uniform(params.zoom_range[0], params.zoom_range[1])
    hflip = bool(params.hflip_enabled and rng.integers(0, 2))
    draw = {
        "rotation_deg": rotation,
        "shift_x": shift_x,
        "shift_y": shift_y,
        "shear_deg": shear,
        "zoom": zoom,
        "hflip": hflip,
    }
    desc = (
        f"rot={rotation:.3f} shift=({shift_x:.4f},{shift_y:.4f}) "
        f"shear={shear:.3f} zoom={zoom:.4f} hflip={int(hflip)} seed={draw_seed}"
    )
    return draw, desc


def augment_image(
    image: np.ndarray, params: AugmentationParams, draw_seed: int
) -> tuple[np.ndarray, str]:
    """Apply one randomly drawn label-preserving transform to a 32x32x3 image."""
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise ValidationError(f"expected (32, 32, 3) image, got {image.shape}")
    draw, desc = draw_augmentation(params, draw_seed)
    out = apply_affine(image, **draw)
    return np.clip(out, 0.0, 1.0), desc


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(manifest: DatasetManifest, config: SplitConfig) -> DatasetManifest:
    """Assign train/test per category at config.train_fraction.

    Train count per category is round-half-up(fraction * count); deterministic
    under config.seed. The returned manifest lists train records first
    (shuffled iff shuffle_train), then test records in original order.
    """
    counts = manifest_counts(manifest)
    for label, n in counts.items():
        if 0 < n < 2:
            raise ValidationError(f"category {label!r} has {n} record(s); need >= 2")
    rng = np.random.default_rng(config.seed)
    assignments: dict[str, str] = {}
    train_ids: list[str] = []
    for label in manifest.label_space.members:
        ids = [r.id for r in manifest.records if r.category == label]
        if not ids:
            continue
        order = rng.permutation(len(ids))
        n_train = _round_half_up(config.train_fraction * len(ids))
        chosen = {ids[i] for i in order[:n_train]}
        for rid in ids:
            assignments[rid] = "train" if rid in chosen else "test"
        train_ids.extend(ids[i] for i in order[:n_train])
    by_id = {r.id: r for r in manifest.records}
    if config.shuffle_train:
        shuffle = rng.permutation(len(train_ids))
        train_records = [by_id[train_ids[i]] for i in shuffle]
    else:
        train_records = [r for r in manifest.records if assignments[r.id] == "train"]
    test_records = [r for r in manifest.records if assignments[r.id] == "test"]
    out = DatasetManifest(
        name=manifest.name,
        label_space=manifest.label_space,
        records=tuple(train_records + test_records),
        split_assignments=assignments,
    )
    out.validate()
    return out


def balance_by_augmentation(
    manifest: DatasetManifest,
    params: AugmentationParams,
    out_dir: str | Path,
) -> DatasetManifest:
    """Raise every category to the pre-balancing maximum count.

    New records are augmented copies of originals, parents chosen round-robin
    in id order, written as 32x32 PNGs under out_dir. Deterministic under
    params.seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = manifest_counts(manifest)
    present = {k: v for k, v in counts.items() if v > 0}
    if not present:
        raise ValidationError("manifest is empty")
    for label in manifest.label_space.members:
        if counts[label] == 0:
            raise ValidationError(f"category {label!r} has no records; cannot balance")
    target = max(counts.values())

    cache: dict[str, np.ndarray] = {}

    def parent_array(record: ImageRecord) -> np.ndarray:
        arr = cache.get(record.path)
        if arr is None:
            arr = load_preprocessed(record.path)
            cache[record.path] = arr
        return arr

    new_records: list[ImageRecord] = []
    seed_rng = np.random.default_rng(params.seed)
    for label in manifest.label_space.members:
        originals = sorted(
            (r for r in manifest.records if r.category == label and r.provenance == "original"),
            key=lambda r: r.id,
        )
        deficit = target - counts[label]
        for k in range(deficit):
            parent = originals[k % len(originals)]
            draw_seed = int(seed_rng.integers(0, 2**63 - 1))
            arr, desc = augment_image(parent_array(parent), params, draw_seed)
            pixels = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
            rid = f"{parent.id}#aug{k}"
            fname = hashlib.sha1(rid.encode()).hexdigest()[:16] + ".png"
            path = out_dir / fname
            Image.fromarray(pixels).save(path)
            new_records.append(
                replace(
                    parent,
                    id=rid,
                    path=str(path),
                    width=IMAGE_SIZE,
                    height=IMAGE_SIZE,
                    provenance="augmented",
                    parent_id=parent.id,
                    augmentation_desc=desc,
                    content_hash=content_hash(pixels),
                )
            )
    out = manifest.with_records(list(manifest.records) + new_records)
    out.validate()
    return out
