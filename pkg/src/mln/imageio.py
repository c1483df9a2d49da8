"""8-bit PNG / binary PPM (P6) reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageIOError(OSError):
    pass


def to_uint8(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Load an RGB image as float64 in [0, 1], shape (H, W, 3)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise ImageIOError(f"no such file: {path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from None
    return rgb


def write_image(path, image) -> None:
    """Write RGB float data; ``.ppm`` writes P6, anything else PNG."""
    path = Path(path)
    data = to_uint8(image)
    if path.suffix.lower() == ".ppm":
        h, w, _ = data.shape
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())
    else:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")


def write_mask(path, mask) -> None:
    """Binary mask as 8-bit grayscale PNG (0 or 255)."""
    data = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(Path(path), format="PNG")
