"""Procedural grayscale test scenes.

Multi-octave filtered noise plus an oriented grating and a slow gradient:
enough structure at every spatial scale that blur, noise, contrast, and
blocking all leave a visible signature on any 64x64 window. Used by the demo
workflow and the test suite; real photographs work just as well.
"""

import numpy as np

from .distortions import gaussian_blur


def make_texture(seed, size=192):
    rng = np.random.default_rng(seed)
    img = np.zeros((size, size))
    for sigma, weight in ((0.0, 0.6), (2.0, 1.0), (6.0, 1.5), (16.0, 2.0)):
        octave = rng.standard_normal((size, size))
        if sigma > 0:
            octave = _smooth(octave, sigma)
        img += weight * octave / octave.std()

    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(0.05, 0.25)
    yy, xx = np.mgrid[0:size, 0:size]
    img += rng.uniform(0.5, 1.5) * np.sin(
        2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + rng.uniform(0, 2 * np.pi))

    gy, gx = rng.uniform(-1, 1, size=2)
    img += 1.0 * (gy * yy + gx * xx) / size

    img = (img - img.mean()) / (3.5 * img.std())
    return np.clip(0.5 + img, 0.02, 0.98).astype(np.float32)


def _smooth(field, sigma):
    # reuse the blur operator on a zero-mean field; rescale to unit range first
    lo, hi = field.min(), field.max()
    unit = (field - lo) / (hi - lo)
    return gaussian_blur(unit, sigma).astype(np.float64) * (hi - lo) + lo


def write_textures(out_dir, count, seed=0, size=192):
    """Render numbered texture PNGs into a directory; returns the paths."""
    from pathlib import Path

    from .imgio import save_gray_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out_dir / f"texture{i:03d}.png"
        save_gray_png(path, make_texture(seed + i, size))
        paths.append(path)
    return paths
