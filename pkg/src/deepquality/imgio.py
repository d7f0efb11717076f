"""Image loading and saving. Everything downstream works on single-channel
luminance in [0, 1]; color inputs are reduced with the BT.601 weights the
model header declares.
"""

import numpy as np
from PIL import Image

BT601 = np.array([0.299, 0.587, 0.114])


class ImageReadError(Exception):
    pass


def load_luminance(path):
    """Read an image file as float32 luminance in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I"):
                arr = np.asarray(im.convert("I"), dtype=np.float64)
                scale = 65535.0 if im.mode == "I;16" else 255.0
                return np.clip(arr / scale, 0.0, 1.0).astype(np.float32)
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as e:
        raise ImageReadError(f"cannot read image {path}: {e}") from e
    return (rgb @ BT601).astype(np.float32)


def save_gray_png(path, image):
    """Write a [0, 1] luminance image as 8-bit grayscale PNG."""
    levels = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(levels, mode="L").save(path, format="PNG")
