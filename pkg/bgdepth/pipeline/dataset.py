"""On-disk sample layout.

A dataset directory holds, per sample stem, ``<stem>.ppm`` (color) and
``<stem>.depth.pgm`` (16-bit depth with a ``<stem>.depth.meta`` scale sidecar), plus the
optional ``<stem>.seg.ppm``, ``<stem>.edge.pgm`` and ``<stem>.geom.pgm`` maps.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional

import structlog

from bgdepth.exceptions import DatasetError, DimensionMismatchError, OrphanedFileError, UnwritablePathError
from bgdepth.imaging import DepthMap, ImageGray, ImageRGB, load_depth, load_gray, load_image, save_depth, save_image
from bgdepth.imaging.netpbm import DEFAULT_DEPTH_SCALE

logger = structlog.get_logger(__name__)

RGB_SUFFIX = ".ppm"
DEPTH_SUFFIX = ".depth.pgm"
DEPTH_META_SUFFIX = ".depth.meta"
SEG_SUFFIX = ".seg.ppm"
EDGE_SUFFIX = ".edge.pgm"
GEOMETRY_SUFFIX = ".geom.pgm"

# longest first so ".seg.ppm" is not taken for a color image
_SUFFIXES = (DEPTH_META_SUFFIX, DEPTH_SUFFIX, SEG_SUFFIX, EDGE_SUFFIX, GEOMETRY_SUFFIX, RGB_SUFFIX)


@dataclass(frozen=True)
class Sample:
    id: str
    rgb: ImageRGB
    depth: DepthMap
    seg: Optional[ImageRGB] = None
    edge: Optional[ImageGray] = None
    geometry: Optional[ImageGray] = None

    def __post_init__(self):
        expected = self.rgb.shape[:2]
        for f in fields(self)[2:]:
            value = getattr(self, f.name)
            if value is not None and value.shape[:2] != expected:
                raise DimensionMismatchError(
                    f"Sample {self.id!r}: {f.name} is {value.shape[:2]}, color image is {expected}"
                )

    @property
    def shape(self):
        return self.rgb.shape[:2]


def _split_name(name: str):
    for suffix in _SUFFIXES:
        if name.endswith(suffix) and len(name) > len(suffix):
            return name[: -len(suffix)], suffix
    return None, None


def _index(directory: Path) -> Dict[str, Dict[str, Path]]:
    stems: Dict[str, Dict[str, Path]] = {}
    for path in directory.iterdir():
        if not path.is_file():
            continue
        stem, suffix = _split_name(path.name)
        if stem is None:
            logger.debug("Ignoring file", path=str(path))
            continue
        stems.setdefault(stem, {})[suffix] = path
    return stems


def _load_stem(stem: str, files: Dict[str, Path]) -> Sample:
    def optional(suffix, loader):
        return loader(files[suffix]) if suffix in files else None

    return Sample(
        id=stem,
        rgb=load_image(files[RGB_SUFFIX]),
        depth=load_depth(files[DEPTH_SUFFIX]),
        seg=optional(SEG_SUFFIX, load_image),
        edge=optional(EDGE_SUFFIX, load_gray),
        geometry=optional(GEOMETRY_SUFFIX, load_gray),
    )


def load_dataset(directory, workers: int = 1) -> List[Sample]:
    """Samples of ``directory`` in lexicographic stem order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"Dataset directory {directory} does not exist")
    stems = _index(directory)
    for stem, files in sorted(stems.items()):
        missing = [suffix for suffix in (RGB_SUFFIX, DEPTH_SUFFIX) if suffix not in files]
        if missing:
            raise OrphanedFileError(
                f"Stem {stem!r} has {sorted(p.name for p in files.values())} but lacks {missing}"
            )
    ordered = sorted(stems)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        samples = list(pool.map(lambda stem: _load_stem(stem, stems[stem]), ordered))
    logger.info("Loaded dataset", directory=str(directory), samples=len(samples))
    return samples


def save_sample(sample: Sample, directory, depth_scale: float = DEFAULT_DEPTH_SCALE):
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UnwritablePathError(f"Cannot create dataset directory {directory}: {e}") from e
    save_image(sample.rgb, directory / f"{sample.id}{RGB_SUFFIX}")
    save_depth(sample.depth, directory / f"{sample.id}{DEPTH_SUFFIX}", scale=depth_scale)
    if sample.seg is not None:
        save_image(sample.seg, directory / f"{sample.id}{SEG_SUFFIX}")
    if sample.edge is not None:
        save_image(sample.edge, directory / f"{sample.id}{EDGE_SUFFIX}")
    if sample.geometry is not None:
        save_image(sample.geometry, directory / f"{sample.id}{GEOMETRY_SUFFIX}")
