import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from canopy.raster import RasterImage

REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDEN_DIR = REPO_ROOT / "golden"
FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures"

# Disks are placed so that every disk fits wholly inside at least one
# 200px tile of the 300px scene and any seam-clipped fragment is either
# unreachable by grid points or a large fraction of the disk.
SCENE_DISKS = ((60, 60, 25), (150, 150, 30), (240, 70, 25), (80, 230, 28), (230, 240, 22))


def make_disk_scene(width, height, disks, background=0, foreground=255):
    """Synthetic scene of bright disks; returns (raster, per-disk pixel counts).

    A pixel is foreground when its center falls inside the disk, which
    is exactly the predicate the luminance-threshold oracle sees, so the
    returned counts are ground truth for mask areas.
    """
    data = np.full((height, width, 3), background, np.uint8)
    cols, rows = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    counts = []
    for cx, cy, r in disks:
        inside = (cols - cx) ** 2 + (rows - cy) ** 2 <= r * r
        data[inside] = foreground
        counts.append(int(inside.sum()))
    return RasterImage(data), counts


@pytest.fixture
def disk_scene():
    return make_disk_scene(300, 300, SCENE_DISKS)


@pytest.fixture
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture
def fixture_dir():
    return FIXTURE_DIR
