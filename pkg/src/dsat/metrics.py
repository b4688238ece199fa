"""Evaluation metrics: PSNR, SSIM, bicubic baseline, embedding separability.

PSNR and SSIM are computed on the luma channel of RGB inputs (weights
0.299/0.587/0.114, which sum to 1 so constant offsets behave the same
in gray and colour).  Callers crop ``border`` pixels (conventionally
the scale factor) before comparison to discount boundary effects.
"""

from __future__ import annotations

import numpy as np
from scipy import signal
from sklearn.metrics import silhouette_score

from .degradation import cubic_resize
from .errors import DataError, ShapeError

__all__ = ["to_luma", "psnr", "ssim", "bicubic_baseline", "separability"]

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)
PSNR_CAP = 100.0  # reported for an exact match (MSE = 0)


def to_luma(img: np.ndarray) -> np.ndarray:
    """[H, W], [H, W, 1] or [H, W, 3] -> luma [H, W] in float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ LUMA_WEIGHTS
    raise ShapeError(f"expected [H,W], [H,W,1] or [H,W,3] image, got shape {arr.shape}")


def _crop(arr: np.ndarray, border: int) -> np.ndarray:
    if border == 0:
        return arr
    if 2 * border >= min(arr.shape[0], arr.shape[1]):
        raise ShapeError(f"border {border} leaves no pixels of image {arr.shape}")
    return arr[border:-border, border:-border]


def psnr(reference: np.ndarray, test: np.ndarray, border: int = 0) -> float:
    """Peak signal-to-noise ratio in dB on [0,1] luma; identical -> 100."""
    a = _crop(to_luma(reference), border)
    b = _crop(to_luma(test), border)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    g = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(g**2) / (2.0 * sigma**2))
    w2 = np.outer(w, w)
    return w2 / w2.sum()


def ssim(
    reference: np.ndarray,
    test: np.ndarray,
    border: int = 0,
    k1: float = 0.01,
    k2: float = 0.03,
) -> float:
    """Mean structural similarity on luma with an 11x11 Gaussian window.

    Uses the standard local-statistics form with C1 = (k1*L)^2,
    C2 = (k2*L)^2 on dynamic range L = 1; windows are fully interior
    ('valid' filtering), matching the common reference implementation.
    """
    a = _crop(to_luma(reference), border)
    b = _crop(to_luma(test), border)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    win = _ssim_window()
    if a.shape[0] < win.shape[0] or a.shape[1] < win.shape[1]:
        raise ShapeError(f"image {a.shape} smaller than the {win.shape} SSIM window")

    def filt(x):
        return signal.fftconvolve(x, win, mode="valid")

    c1 = k1 * k1
    c2 = k2 * k2
    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def bicubic_baseline(lr: np.ndarray, scale: int) -> np.ndarray:
    """Plain bicubic upsampling of an LR image, the no-model reference."""
    arr = np.asarray(lr)
    return cubic_resize(arr, arr.shape[0] * scale, arr.shape[1] * scale, antialias=False)


def separability(embeddings: np.ndarray, labels) -> float:
    """Mean silhouette of the embeddings under cosine distance.

    Near 1 means tight same-degradation clusters far from the others;
    near 0 means no structure.  Requires at least two labels and more
    samples than labels.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    if emb.ndim != 2:
        raise ShapeError(f"expected [n, d] embeddings, got shape {emb.shape}")
    if emb.shape[0] != lab.shape[0]:
        raise ShapeError(f"{emb.shape[0]} embeddings but {lab.shape[0]} labels")
    n_labels = len(np.unique(lab))
    if not 2 <= n_labels <= emb.shape[0] - 1:
        raise DataError(f"need 2 <= labels < samples, got {n_labels} labels, {emb.shape[0]} samples")
    return float(silhouette_score(emb, lab, metric="cosine"))
