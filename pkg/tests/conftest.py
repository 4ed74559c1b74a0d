import numpy as np
import pytest
from PIL import Image

from aerothreat.core_types import (
    DatasetManifest,
    ImageRecord,
    ThreatLevel,
    make_label_space,
)


@pytest.fixture
def aodta_space():
    return make_label_space("AODTA", ["Airplane", "Drone", "Helicopter", "Bird"])


@pytest.fixture
def avd_space():
    return make_label_space("AVD", ["Airplane", "Drone", "Helicopter", "UAV"])


def make_record(rid, category, threat=None, parent=None, attributes=(), chash=None):
    augmented = parent is not None
    return ImageRecord(
        id=rid,
        source_dataset="test",
        path=f"/nonexistent/{rid}.png",
        width=32,
        height=32,
        category=category,
        threat=threat,
        attributes=tuple(attributes),
        provenance="augmented" if augmented else "original",
        parent_id=parent,
        augmentation_desc="test-aug" if augmented else None,
        content_hash=chash if chash is not None else f"hash-{rid}",
    )


def make_manifest(space, records, name="test"):
    m = DatasetManifest(name=name, label_space=space, records=tuple(records))
    m.validate()
    return m


def write_png(path, pixels):
    """Write a uint8 HxWx3 array as PNG."""
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path)
    return path


def random_image(rng, h=48, w=48):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
