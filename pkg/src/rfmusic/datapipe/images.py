"""Spectrogram image export: 8-bit grayscale binary PGM with a sidecar text
file recording the linear min-max scaling. Frequency runs up the vertical
axis (origin bottom-left), so mel bin 0 is the bottom row of the image."""

import numpy as np

from ..errors import InputError


def write_pgm(path, values, sidecar=True):
    """Write a 2-D array as P5 PGM, bin 0 at the bottom; returns (lo, hi)."""
    arr = np.asarray(values, np.float64)
    if arr.ndim != 2:
        raise InputError(f"image export needs a 2-D array, got shape {arr.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.round((arr - lo) * scale).astype(np.uint8)
    img = img[::-1, :]  # origin bottom-left
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())
    if sidecar:
        with open(str(path) + ".txt", "w") as f:
            f.write(f"min {lo}\nmax {hi}\nscaling linear\norientation freq-bottom-up\n")
    return lo, hi


def read_pgm(path):
    """Read a binary P5 PGM back into a float array (bin 0 at the bottom)."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise InputError(f"{path}: not a binary PGM")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        img = np.frombuffer(f.read(w * h), np.uint8).reshape(h, w)
    return img[::-1, :].astype(np.float64) / maxval


def hstack_grid(images, pad=4, pad_value=None):
    """Concatenate equal-height arrays horizontally with separator columns."""
    images = [np.asarray(im) for im in images]
    h = images[0].shape[0]
    if any(im.shape[0] != h for im in images):
        raise InputError("grid images must share their height")
    if pad_value is None:
        pad_value = max(float(im.max()) for im in images)
    sep = np.full((h, pad), pad_value)
    parts = []
    for i, im in enumerate(images):
        if i:
            parts.append(sep)
        parts.append(im)
    return np.concatenate(parts, axis=1)
