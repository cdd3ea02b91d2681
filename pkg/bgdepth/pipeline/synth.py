"""Procedural indoor-like scenes with exact depth, segmentation and silhouettes."""
from itertools import product
from typing import List

import numpy as np
import structlog

from bgdepth.exceptions import ConfigError
from bgdepth.imaging import DepthMap, ImageGray, ImageRGB
from bgdepth.pipeline.config import SynthSpec
from bgdepth.pipeline.dataset import Sample
from bgdepth.pipeline.rng import make_rng

logger = structlog.get_logger(__name__)

MIN_SCENE_SIZE = 16
NEAREST_DEPTH = 1.0
BACKGROUND_SPAN = 1.5
# six levels per channel round-trip exactly through 8-bit samples
PALETTE = np.array(list(product(range(6), repeat=3)), dtype=np.float64) / 5.0


def _object_masks(rng, width, height, n_objects):
    ys, xs = np.mgrid[0:height, 0:width]
    masks = []
    for _ in range(n_objects):
        cx = rng.uniform(0.15, 0.85) * (width - 1)
        cy = rng.uniform(0.15, 0.85) * (height - 1)
        rx = max(rng.uniform(0.1, 0.25) * width, 2.0)
        ry = max(rng.uniform(0.1, 0.25) * height, 2.0)
        if rng.random() < 0.5:
            mask = (np.abs(xs - cx) <= rx) & (np.abs(ys - cy) <= ry)
        else:
            mask = ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0
        masks.append(mask)
    return masks


def silhouettes(labels: np.ndarray) -> np.ndarray:
    """Pixels with a 4-neighbour of a different label."""
    edge = np.zeros(labels.shape, dtype=bool)
    vertical = labels[1:, :] != labels[:-1, :]
    horizontal = labels[:, 1:] != labels[:, :-1]
    edge[1:, :] |= vertical
    edge[:-1, :] |= vertical
    edge[:, 1:] |= horizontal
    edge[:, :-1] |= horizontal
    return edge


def synth_scene(seed: int, width: int = 64, height: int = 64, n_objects: int = 3, min_gap: float = 0.5) -> Sample:
    """Rectangles and ellipses at distinct depths in front of a tilted background plane.

    Object depths are pairwise at least ``min_gap`` apart and the background is at
    least ``min_gap`` behind every object, so every silhouette is a depth step of at
    least ``min_gap`` meters.
    """
    if width < MIN_SCENE_SIZE or height < MIN_SCENE_SIZE:
        raise ConfigError(f"Synthetic scenes need at least {MIN_SCENE_SIZE}x{MIN_SCENE_SIZE} pixels")
    if n_objects < 1 or n_objects >= len(PALETTE):
        raise ConfigError(f"n_objects must be in [1, {len(PALETTE) - 1}], got {n_objects}")
    rng = make_rng(seed, "synth.scene")
    gaps = min_gap + rng.uniform(0.0, 0.5, size=n_objects)
    object_depths = NEAREST_DEPTH + np.cumsum(gaps) - gaps[0]
    rng.shuffle(object_depths)
    masks = _object_masks(rng, width, height, n_objects)

    rows = np.arange(height, dtype=np.float64)[:, None] / (height - 1)
    background_near = object_depths.max() + min_gap + rng.uniform(0.0, 0.5)
    depth = np.broadcast_to(background_near + BACKGROUND_SPAN * (1.0 - rows), (height, width)).copy()
    labels = np.zeros((height, width), dtype=np.int64)
    # far to near, nearer objects occlude
    for index in np.argsort(-object_depths, kind="stable"):
        depth[masks[index]] = object_depths[index]
        labels[masks[index]] = index + 1

    colors = PALETTE[rng.choice(len(PALETTE), size=n_objects + 1, replace=False)]
    albedo = rng.uniform(0.35, 1.0, size=(n_objects + 1, 3))
    far = depth.max()
    shade = 0.3 + 0.7 * (far - depth) / (far - NEAREST_DEPTH)
    rgb = albedo[labels] * shade[..., None]
    return Sample(
        id=f"scene_{seed}",
        rgb=ImageRGB.clipped(rgb),
        depth=DepthMap(depth),
        seg=ImageRGB(colors[labels]),
        edge=ImageGray(silhouettes(labels).astype(np.float64)),
    )


def scene_seed(seed: int, index: int) -> int:
    return int(make_rng(seed, f"synth.dataset.{index}").integers(0, 2 ** 62))


def synth_dataset(spec: SynthSpec, split: str = "train") -> List[Sample]:
    """``spec.count`` training scenes or ``spec.test_count`` held-out scenes."""
    count = spec.count if split == "train" else spec.test_count
    offset = 0 if split == "train" else spec.count
    samples = []
    for index in range(count):
        scene = synth_scene(scene_seed(spec.seed, offset + index), spec.width, spec.height, spec.n_objects, spec.min_gap)
        samples.append(
            Sample(id=f"{split}_{index:04d}", rgb=scene.rgb, depth=scene.depth, seg=scene.seg, edge=scene.edge)
        )
    logger.info("Synthesized scenes", split=split, count=count, seed=spec.seed)
    return samples
