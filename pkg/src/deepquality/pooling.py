"""Sliding-window patch extraction and low-variance selection.

Windows land on a stride grid clamped so a final window sits flush with each
border; candidate patches are ranked by pixel variance and the flattest l are
kept. Ranking ties resolve by row-major location, so selection does not
depend on enumeration order.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np

WINDOW = 64


@dataclass(frozen=True)
class PatchLocation:
    row: int
    col: int


@dataclass(frozen=True)
class PoolingConfig:
    stride: int = 32
    patches_per_image: int = 70
    prefer_high_variance: bool = False  # experimentation knob; default keeps flattest

    def __post_init__(self):
        if not 1 <= self.stride <= WINDOW:
            raise ValueError(f"stride must be in [1, {WINDOW}], got {self.stride}")
        if self.patches_per_image < 1:
            raise ValueError(f"patches_per_image must be >= 1, got {self.patches_per_image}")


class SelectedPatch(NamedTuple):
    location: PatchLocation
    patch: np.ndarray
    variance: float


class Selection(NamedTuple):
    patches: List[SelectedPatch]
    shortfall: bool  # fewer candidates than requested


def grid_offsets(extent, stride):
    """Window start offsets along one axis: {0, stride, ...} plus a final
    offset flush with the border."""
    last = extent - WINDOW
    offsets = list(range(0, last + 1, stride))
    if offsets[-1] != last:
        offsets.append(last)
    return offsets


def extract_patches(image, config) -> List[Tuple[PatchLocation, np.ndarray]]:
    """All windows on the clamped stride grid, in row-major order.

    Each returned patch is a copy of the corresponding image slice.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D luminance image, got shape {image.shape}")
    h, w = image.shape
    if h < WINDOW or w < WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {WINDOW}x{WINDOW} window")
    out = []
    for r in grid_offsets(h, config.stride):
        for c in grid_offsets(w, config.stride):
            out.append((PatchLocation(r, c), image[r:r + WINDOW, c:c + WINDOW].copy()))
    return out


def patch_variance(patch):
    """Population variance (divide by N) of the patch values, in float64."""
    patch = np.asarray(patch)
    if patch.shape != (WINDOW, WINDOW):
        raise ValueError(f"expected a {WINDOW}x{WINDOW} patch, got shape {patch.shape}")
    return float(np.var(patch, dtype=np.float64))


def select_low_variance(patches, l) -> Selection:
    """The l candidates with the smallest variance, ascending.

    Ties break by (row, col). When fewer than l candidates exist, all are
    returned and the shortfall flag is set.
    """
    if l < 1:
        raise ValueError(f"selection count must be >= 1, got {l}")
    if not patches:
        raise ValueError("no candidate patches to select from")
    scored = [SelectedPatch(loc, p, patch_variance(p)) for loc, p in patches]
    scored.sort(key=lambda s: (s.variance, s.location.row, s.location.col))
    return Selection(scored[:l], shortfall=len(scored) < l)


def select_patches(image, config) -> Selection:
    """Extract candidates and keep the configured number by variance rank."""
    candidates = extract_patches(image, config)
    if config.prefer_high_variance:
        scored = [SelectedPatch(loc, p, patch_variance(p)) for loc, p in candidates]
        scored.sort(key=lambda s: (-s.variance, s.location.row, s.location.col))
        return Selection(scored[:config.patches_per_image],
                         shortfall=len(scored) < config.patches_per_image)
    return select_low_variance(candidates, config.patches_per_image)
