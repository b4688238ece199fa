"""Input validation helpers for the estimator API.

The estimators accept images in the forgiving forms numpy users reach
for (single arrays, lists of arrays, grayscale or RGB) and normalise
them to float32 [H, W, C] in [0, 1] before handing off to the core.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

__all__ = ["as_image", "as_image_list"]


def as_image(x, name: str = "image") -> np.ndarray:
    """Coerce one image to float32 [H, W, C] with values in [0, 1]."""
    arr = np.asarray(x)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(
            f"{name}: expected [H,W], [H,W,1] or [H,W,3], got shape {np.asarray(x).shape}"
        )
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: empty image of shape {arr.shape}")
    arr = arr.astype(np.float32, copy=False)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(
            f"{name}: values outside [0,1] (min {arr.min():.4g}, max {arr.max():.4g}); "
            "divide 8-bit images by 255 first"
        )
    return arr


def as_image_list(X, name: str = "X") -> list[np.ndarray]:
    """Coerce a batch (list of images, or one stacked/single array)."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return [as_image(X[i], f"{name}[{i}]") for i in range(X.shape[0])]
    if isinstance(X, np.ndarray) and X.ndim in (2, 3):
        return [as_image(X, name)]
    if isinstance(X, (list, tuple)):
        if not X:
            raise DataError(f"{name}: empty image list")
        return [as_image(img, f"{name}[{i}]") for i, img in enumerate(X)]
    raise ShapeError(f"{name}: expected an image, an [N,H,W,C] array, or a list of images")
