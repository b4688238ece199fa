"""Synthetic degradation: Gaussian blur, bicubic downsampling, noise.

LR training inputs are produced as ``(hr conv k) down_s + n``: the HR
image is blurred with a 21x21 Gaussian kernel (isotropic or rotated
anisotropic), bicubic-downsampled by the scale factor, and corrupted
with additive white Gaussian noise whose standard deviation is given on
the 8-bit [0,255] scale.  Pixels live in [0,1]; the result is clamped.

Everything here is pure given an explicit seed, so batches for
different seeds can be generated independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .errors import ConfigError, ShapeError

__all__ = [
    "SIGMA_RANGES",
    "LAMBDA_RANGE",
    "NOISE_RANGE",
    "DegradationSpec",
    "gaussian_kernel",
    "bicubic_downsample",
    "cubic_resize",
    "degrade",
    "sample_spec",
]

# isotropic blur width range per scale factor
SIGMA_RANGES = {2: (0.2, 2.0), 3: (0.2, 3.0), 4: (0.2, 4.0)}
# anisotropic covariance eigenvalue range (shared by all scales)
LAMBDA_RANGE = (0.2, 4.0)
# AWGN standard deviation range on the [0,255] scale
NOISE_RANGE = (0.0, 25.0)


@dataclass(frozen=True)
class DegradationSpec:
    """Parameters of one degradation: blur shape, scale factor, noise level.

    ``kind`` selects the blur family.  Isotropic kernels are described
    by a single width ``sigma``; anisotropic kernels by the covariance
    eigenvalues ``lambda1``, ``lambda2`` and rotation ``theta`` so that
    the covariance is R(theta) @ diag(lambda1, lambda2) @ R(theta).T.
    """

    kind: str  # "isotropic" | "anisotropic"
    scale: int
    sigma: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    theta: float = 0.0
    noise_sigma: float = 0.0
    kernel_size: int = 21

    def validate(self) -> "DegradationSpec":
        if self.scale not in SIGMA_RANGES:
            raise ConfigError(f"scale must be one of {sorted(SIGMA_RANGES)}, got {self.scale}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.kind == "isotropic":
            lo, hi = SIGMA_RANGES[self.scale]
            if not lo <= self.sigma <= hi:
                raise ConfigError(
                    f"isotropic sigma {self.sigma} outside [{lo},{hi}] for x{self.scale}"
                )
        elif self.kind == "anisotropic":
            lo, hi = LAMBDA_RANGE
            for name, lam in (("lambda1", self.lambda1), ("lambda2", self.lambda2)):
                if not lo <= lam <= hi:
                    raise ConfigError(f"{name} {lam} outside [{lo},{hi}]")
            if not 0.0 <= self.theta < np.pi:
                raise ConfigError(f"theta {self.theta} outside [0, pi)")
        else:
            raise ConfigError(f"unknown degradation kind {self.kind!r}")
        nlo, nhi = NOISE_RANGE
        if not nlo <= self.noise_sigma <= nhi:
            raise ConfigError(f"noise_sigma {self.noise_sigma} outside [{nlo},{nhi}]")
        return self

    def covariance(self) -> np.ndarray:
        """2x2 blur covariance on the pixel grid."""
        if self.kind == "isotropic":
            return np.diag([self.sigma**2, self.sigma**2]).astype(np.float64)
        c, s = np.cos(self.theta), np.sin(self.theta)
        rot = np.array([[c, -s], [s, c]], dtype=np.float64)
        return rot @ np.diag([self.lambda1, self.lambda2]) @ rot.T


def gaussian_kernel(spec: DegradationSpec) -> np.ndarray:
    """Blur kernel: the Gaussian density on the integer grid, renormalised.

    The density is evaluated at the kernel_size x kernel_size integer
    offsets centred on 0 (no subpixel integration) and divided by its
    sum, so the result is nonnegative and sums to 1 up to rounding.
    Axis convention: index [i, j] is (row, column) = (y, x).
    """
    spec.validate()
    cov = spec.covariance()
    det = float(np.linalg.det(cov))
    if det <= 0.0:
        raise ConfigError(f"degenerate blur covariance (det={det:g})")
    inv = np.linalg.inv(cov)
    half = (spec.kernel_size - 1) // 2
    g = np.arange(-half, half + 1, dtype=np.float64)
    yy, xx = np.meshgrid(g, g, indexing="ij")
    quad = inv[0, 0] * yy * yy + (inv[0, 1] + inv[1, 0]) * yy * xx + inv[1, 1] * xx * xx
    kernel = np.exp(-0.5 * quad)
    return kernel / kernel.sum()


# -- cubic resampling ----------------------------------------------------------

def _cubic_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic kernel with a = -0.5 (Catmull-Rom); support (-2, 2)."""
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * (t3 - 5.0 * t2 + 8.0 * t - 4.0)
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _resize_matrix(n_in: int, n_out: int, antialias: bool) -> np.ndarray:
    """Row-stochastic [n_out, n_in] cubic resampling weights.

    Output sample j reads input coordinate x = (j + 0.5) * scale - 0.5
    (pixel centres aligned).  When downsampling with antialias the
    kernel is stretched by the scale factor.  Out-of-range taps clamp
    to the border pixel; rows are renormalised so constants are
    reproduced exactly.
    """
    scale = n_in / n_out
    stretch = scale if (antialias and scale > 1.0) else 1.0
    support = 2.0 * stretch
    j = np.arange(n_out, dtype=np.float64)
    x = (j + 0.5) * scale - 0.5
    i_min = np.floor(x - support).astype(int) + 1
    n_taps = int(np.ceil(2.0 * support)) + 1
    taps = i_min[:, None] + np.arange(n_taps)[None, :]  # [n_out, n_taps]
    weights = _cubic_weight((taps - x[:, None]) / stretch)
    weights /= weights.sum(axis=1, keepdims=True)
    matrix = np.zeros((n_out, n_in), dtype=np.float64)
    np.add.at(matrix, (j.astype(int)[:, None], np.clip(taps, 0, n_in - 1)), weights)
    return matrix


def cubic_resize(img: np.ndarray, out_h: int, out_w: int, antialias: bool = False) -> np.ndarray:
    """Separable cubic resampling of [H, W] or [H, W, C] to (out_h, out_w).

    Computed in float64 and returned in the input dtype; constants are
    reproduced bit-exactly after the final cast.
    """
    arr = np.asarray(img)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    rows = _resize_matrix(h, out_h, antialias)
    cols = _resize_matrix(w, out_w, antialias)
    out = np.tensordot(rows, arr.astype(np.float64), axes=(1, 0))  # [out_h, W, C]
    out = np.tensordot(cols, out, axes=(1, 1)).transpose(1, 0, 2)  # [out_h, out_w, C]
    out = out.astype(np.asarray(img).dtype, copy=False)
    return out[:, :, 0] if squeeze else out


def bicubic_downsample(img: np.ndarray, s: int, antialias: bool = False) -> np.ndarray:
    """Downsample by an integer factor with pixel-centre aligned cubics.

    The default plain cubic reproduces linear ramps exactly away from the
    borders; ``antialias=True`` stretches the kernel by s instead, which
    trades that property for less aliasing on high-frequency content.
    Dimensions must be divisible by s.
    """
    arr = np.asarray(img)
    h, w = arr.shape[0], arr.shape[1]
    if s < 1:
        raise ConfigError(f"scale must be >= 1, got {s}")
    if h % s or w % s:
        raise ShapeError(f"image size ({h}, {w}) not divisible by scale {s}; crop first")
    if s == 1:
        return arr.copy()
    return cubic_resize(arr, h // s, w // s, antialias=antialias)


# -- full degradation ----------------------------------------------------------

def _blur_reflect(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size blur with reflect padding; float64 in, float64 out."""
    half = (kernel.shape[0] - 1) // 2
    padded = np.pad(img, ((half, half), (half, half), (0, 0)), mode="reflect")
    return signal.fftconvolve(padded, kernel[:, :, None], mode="valid")


def degrade(hr: np.ndarray, spec: DegradationSpec, rng_seed: int) -> np.ndarray:
    """Apply blur, bicubic downsample and AWGN to an HR image.

    Parameters
    ----------
    hr : [H, W] or [H, W, C] array with values in [0, 1]; H and W must
        be divisible by ``spec.scale``.
    rng_seed : seed for the noise draw; the output is a pure function
        of (hr, spec, rng_seed).

    Returns
    -------
    float32 LR image of size [H/s, W/s(, C)], clamped to [0, 1].
    """
    spec.validate()
    arr = np.asarray(hr, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"expected 2-D or 3-D image, got shape {np.asarray(hr).shape}")
    h, w, _ = arr.shape
    s = spec.scale
    if h % s or w % s:
        raise ShapeError(f"image size ({h}, {w}) not divisible by scale {s}; crop first")
    half = (spec.kernel_size - 1) // 2
    if h <= half or w <= half:
        raise ShapeError(
            f"image ({h}, {w}) too small for a {spec.kernel_size}x{spec.kernel_size} kernel"
        )

    kernel = gaussian_kernel(spec)
    blurred = _blur_reflect(arr, kernel)
    lr = cubic_resize(blurred, h // s, w // s)
    if spec.noise_sigma > 0.0:
        rng = np.random.default_rng(rng_seed)
        lr = lr + rng.normal(0.0, spec.noise_sigma / 255.0, size=lr.shape)
    lr = np.clip(lr, 0.0, 1.0).astype(np.float32)
    return lr[:, :, 0] if squeeze else lr


def sample_spec(rng: np.random.Generator, scale: int, mode: str = "general") -> DegradationSpec:
    """Draw a random degradation from the configured parameter ranges.

    ``isotropic_noisefree`` draws only a blur width (noise stays 0);
    ``general`` draws an anisotropic kernel plus a noise level.  Draw
    order is fixed (sigma | lambda1, lambda2, theta, noise) so given an
    rng state the result is reproducible.
    """
    if scale not in SIGMA_RANGES:
        raise ConfigError(f"scale must be one of {sorted(SIGMA_RANGES)}, got {scale}")
    if mode == "isotropic_noisefree":
        lo, hi = SIGMA_RANGES[scale]
        return DegradationSpec(kind="isotropic", scale=scale, sigma=float(rng.uniform(lo, hi)))
    if mode == "general":
        lo, hi = LAMBDA_RANGE
        lam1 = float(rng.uniform(lo, hi))
        lam2 = float(rng.uniform(lo, hi))
        theta = float(rng.uniform(0.0, np.pi))
        noise = float(rng.uniform(*NOISE_RANGE))
        return DegradationSpec(
            kind="anisotropic",
            scale=scale,
            lambda1=lam1,
            lambda2=lam2,
            theta=theta,
            noise_sigma=noise,
        )
    raise ConfigError(f"unknown sampling mode {mode!r}")
