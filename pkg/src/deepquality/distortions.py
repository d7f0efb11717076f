"""Synthetic degradations at five graded severities: Gaussian blur, additive
pink Gaussian noise, global contrast decrement, and a blockwise-DCT
compression stand-in that reproduces JPEG-style blocking and ringing without
entropy coding.

All operations take and return float images in [0, 1]. Identity settings
(sigma 0, noise std 0, contrast factor 1) return the input bit-exactly.
"""

import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import fft as sp_fft
from scipy import ndimage

KINDS = ("blur", "pink_noise", "contrast", "jpeg_proxy")

# severity ladders, level 0 (mildest, grade c0) .. 4 (harshest, c4)
LADDERS = {
    "blur": [0.5, 1.0, 2.0, 4.0, 8.0],            # gaussian sigma
    "pink_noise": [0.01, 0.03, 0.06, 0.12, 0.24],  # spatial std
    "contrast": [0.9, 0.7, 0.5, 0.3, 0.15],        # scale about the mean
    "jpeg_proxy": [1.0, 2.0, 4.0, 8.0, 16.0],      # quantization table scale
}

# standard JPEG luminance quantization table
JPEG_QTABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    level: int
    params: dict = field(default_factory=dict)
    seed: Optional[int] = None  # noise only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}, expected one of {KINDS}")
        if not 0 <= self.level <= 4:
            raise ValueError(f"distortion level must be 0..4, got {self.level}")


PARAM_KEYS = {"blur": "sigma", "pink_noise": "std", "contrast": "factor",
              "jpeg_proxy": "quant_scale"}


def build_ladder(kind, params=None):
    """Five specs for one kind, level i carrying grade c_i severity."""
    if kind not in KINDS:
        raise ValueError(f"unknown distortion kind {kind!r}, expected one of {KINDS}")
    values = params if params is not None else LADDERS[kind]
    if len(values) != 5:
        raise ValueError(f"a ladder needs exactly 5 levels, got {len(values)}")
    key = PARAM_KEYS[kind]
    return [DistortionSpec(kind, lvl, {key: float(values[lvl])}) for lvl in range(5)]


def apply_distortion(image, spec):
    if spec.kind == "blur":
        return gaussian_blur(image, spec.params["sigma"])
    if spec.kind == "pink_noise":
        if spec.seed is None:
            raise ValueError("pink_noise spec needs a seed")
        return pink_noise(image, spec.params["std"], spec.seed)
    if spec.kind == "contrast":
        return contrast_decrement(image, spec.params["factor"])
    return jpeg_proxy(image, spec.params["quant_scale"])


def gaussian_blur(image, sigma):
    """Separable Gaussian blur, kernel radius ceil(3*sigma), reflected borders."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    image = np.asarray(image)
    if sigma == 0:
        return image.copy()
    radius = int(np.ceil(3 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()
    # ndimage "mirror" reflects about the edge sample, matching np.pad "reflect"
    out = ndimage.correlate1d(image.astype(np.float64), kernel, axis=0, mode="mirror")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="mirror")
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def pink_noise_field(shape, seed):
    """Unit-variance noise field with power falling off as 1/frequency."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(shape)
    spectrum = np.fft.rfft2(white)
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.rfftfreq(shape[1])[None, :]
    freq = np.hypot(fy, fx)
    amp = np.zeros_like(freq)
    nonzero = freq > 0
    amp[nonzero] = 1.0 / np.sqrt(freq[nonzero])  # amplitude 1/sqrt(f) -> power 1/f
    field = np.fft.irfft2(spectrum * amp, s=shape)
    return field / field.std()


def pink_noise(image, std, seed):
    """Add seeded pink noise scaled to the requested spatial std, then clamp."""
    if std < 0:
        raise ValueError(f"noise std must be >= 0, got {std}")
    image = np.asarray(image)
    if std == 0:
        return image.copy()
    field = pink_noise_field(image.shape, seed)
    return np.clip(image.astype(np.float64) + std * field, 0.0, 1.0).astype(image.dtype)


def contrast_decrement(image, factor):
    """Scale deviations about the global mean by factor in (0, 1]."""
    if not 0 < factor <= 1:
        raise ValueError(f"contrast factor must be in (0, 1], got {factor}")
    image = np.asarray(image)
    if factor == 1:
        return image.copy()
    mean = image.astype(np.float64).mean()
    return np.clip(mean + factor * (image - mean), 0.0, 1.0).astype(image.dtype)


def jpeg_proxy(image, quant_scale):
    """Blockwise 8x8 DCT quantize/dequantize round trip.

    Pixels are mapped to 0..255 levels, level-shifted by 128, transformed per
    block (orthonormal DCT-II), divided by the scaled luminance table,
    rounded, multiplied back, and inverse transformed. Edge blocks are padded
    by replication.
    """
    if quant_scale < 1:
        raise ValueError(f"quant_scale must be >= 1, got {quant_scale}")
    image = np.asarray(image)
    h, w = image.shape
    ph = (-h) % 8
    pw = (-w) % 8
    levels = np.pad(image.astype(np.float64) * 255.0 - 128.0,
                    ((0, ph), (0, pw)), mode="edge")
    hb, wb = levels.shape[0] // 8, levels.shape[1] // 8
    blocks = levels.reshape(hb, 8, wb, 8)
    coef = sp_fft.dctn(blocks, type=2, axes=(1, 3), norm="ortho")
    q = JPEG_QTABLE * quant_scale
    coef = np.round(coef / q[None, :, None, :]) * q[None, :, None, :]
    pixels = sp_fft.idctn(coef, type=2, axes=(1, 3), norm="ortho")
    out = (pixels.reshape(levels.shape)[:h, :w] + 128.0) / 255.0
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def pair_seed(base_seed, source_id, kind, level):
    """Stable per-(image, kind, level) noise seed; independent of work order."""
    mix = zlib.crc32(source_id.encode("utf-8"))
    return int(np.random.SeedSequence(
        [int(base_seed), mix, KINDS.index(kind), int(level)]).generate_state(1)[0])


def synthesize_corpus(sources, out_dir, seed, kinds=KINDS, ladders=None, workers=None):
    """Render every (source, kind, level) combination and write a manifest.

    sources maps source_id -> luminance image. Outputs land in
    out_dir/images/, one JSON manifest record per line in out_dir/
    manifest.jsonl: {source_id, kind, level, params, seed, output_path,
    grade}. Noise seeds derive from (seed, source, kind, level), so the
    result is independent of worker scheduling.
    """
    import dataclasses
    import json
    from pathlib import Path

    from .imgio import save_gray_png
    from .parallel import map_ordered

    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown distortion kind {kind!r}, expected one of {KINDS}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for source_id in sorted(sources):
        for kind in kinds:
            ladder = build_ladder(kind, (ladders or {}).get(kind))
            for spec in ladder:
                if kind == "pink_noise":
                    spec = dataclasses.replace(
                        spec, seed=pair_seed(seed, source_id, kind, spec.level))
                jobs.append((source_id, spec))

    def render(job):
        source_id, spec = job
        name = f"{source_id}.{spec.kind}.{spec.level}.png"
        save_gray_png(image_dir / name, apply_distortion(sources[source_id], spec))
        return {
            "source_id": source_id,
            "kind": spec.kind,
            "level": spec.level,
            "params": spec.params,
            "seed": spec.seed,
            "output_path": f"images/{name}",
            "grade": spec.level,
        }

    records = map_ordered(render, jobs, workers)
    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return manifest_path, records
