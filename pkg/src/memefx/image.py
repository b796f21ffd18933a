"""Image decoding, resizing and normalization. Images are ``(H, W, 3)`` float arrays."""
from __future__ import annotations

import numpy as np
from PIL import Image as PILImage

from .errors import ContractError, FormatError


def read_ppm(path):
    try:
        with PILImage.open(path) as im:
            if im.format != "PPM":
                raise FormatError(f"{path}: expected a PPM image, got {im.format}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return arr


def write_ppm(path, pixels):
    """Write an ``(H, W, 3)`` array of 0..255 values as binary P6."""
    arr = np.clip(np.rint(np.asarray(pixels, dtype=np.float64)), 0, 255).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractError(f"expected an HxWx3 image, got shape {arr.shape}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def _axis_weights(n_src, n_dst):
    # corner-aligned: output sample 0 and n_dst-1 land exactly on source 0 and n_src-1
    if n_dst == 1 or n_src == 1:
        pos = np.zeros(n_dst)
    else:
        pos = np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))
    lo = np.minimum(np.floor(pos).astype(np.intp), n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(img, height, width):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ContractError(f"cannot resize an empty image of shape {img.shape}")
    if height < 1 or width < 1:
        raise ContractError(f"target size must be positive, got {height}x{width}")
    h, w, _ = img.shape
    if (h, w) == (height, width):
        return img.copy()
    r0, r1, fr = _axis_weights(h, height)
    c0, c1, fc = _axis_weights(w, width)
    fr = fr[:, None, None]
    fc = fc[None, :, None]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bottom = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def min_max_scale(img, bounds=None):
    """Per-channel ``(x - min) / (max - min)``; a constant channel becomes zeros.

    ``bounds`` optionally supplies fixed ``(min, max)`` per channel, e.g.
    dataset-wide statistics, instead of the image's own; values are clipped
    into [0, 1] in that case.
    """
    img = np.asarray(img, dtype=np.float64)
    if bounds is not None:
        lo = np.asarray(bounds[0], dtype=np.float64).reshape(1, 1, -1)
        hi = np.asarray(bounds[1], dtype=np.float64).reshape(1, 1, -1)
        span = hi - lo
        scaled = np.where(span > 0, (img - lo) / np.where(span > 0, span, 1.0), 0.0)
        return np.clip(scaled, 0.0, 1.0)
    lo = img.min(axis=(0, 1), keepdims=True)
    hi = img.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (img - lo) / safe, 0.0)


def load_image(path, height, width):
    return min_max_scale(resize_bilinear(read_ppm(path), height, width))
