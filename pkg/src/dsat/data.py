"""Image IO, synthetic training pools and training batch assembly.

A training batch pairs two LR patches per source image: both patches
come from the same degraded image (hence share one degradation), which
is what makes them a positive pair for contrastive learning.  Batch
layout is fixed: row i and row B + i hold the two patches of image i.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .degradation import DegradationSpec, cubic_resize, degrade, sample_spec
from .errors import DataError

__all__ = [
    "load_image",
    "save_image",
    "load_manifest",
    "dihedral",
    "synth_pool",
    "TrainBatch",
    "make_batch",
]


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG as float32 [H, W, C] in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise DataError(f"image not found: {path}")
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(path, img: np.ndarray) -> None:
    """Write a float [H, W] / [H, W, C] image in [0, 1] as an 8-bit PNG."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(Path(path))


def load_manifest(path) -> list[np.ndarray]:
    """Load every image listed (one path per line) in a manifest file.

    Blank lines and lines starting with '#' are ignored.  Paths are
    resolved relative to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    images = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        entry = Path(line)
        if not entry.is_absolute():
            entry = path.parent / entry
        images.append(load_image(entry))
    if not images:
        raise DataError(f"manifest {path} lists no images")
    return images


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 axis-aligned symmetries: k%4 quarter-turns, flip if k>=4."""
    out = np.rot90(img, k % 4, axes=(0, 1))
    if k >= 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def synth_pool(n: int, size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Generate structured RGB test images: smooth fields, edges, texture.

    Each image mixes an upsampled low-frequency noise background with a
    few random rectangles and a sinusoidal grating, so crops contain
    both flat regions and sharp transitions.  Values lie in [0, 1].
    """
    pool = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
    for _ in range(n):
        base = rng.random((6, 6, 3)).astype(np.float32)
        img = cubic_resize(base, size, size, antialias=False).astype(np.float32)
        for _ in range(int(rng.integers(3, 7))):
            y0, x0 = rng.integers(0, size - 8, size=2)
            hgt, wid = rng.integers(6, max(7, size // 2), size=2)
            color = rng.random(3).astype(np.float32)
            img[y0 : y0 + hgt, x0 : x0 + wid] = 0.35 * img[y0 : y0 + hgt, x0 : x0 + wid] + 0.65 * color
        freq = float(rng.uniform(4.0, 14.0))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        angle = float(rng.uniform(0.0, np.pi))
        wave = 0.5 + 0.5 * np.sin(
            2.0 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase
        )
        amp = float(rng.uniform(0.1, 0.3))
        img = (1.0 - amp) * img + amp * wave[:, :, None].astype(np.float32)
        pool.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return pool


@dataclass
class TrainBatch:
    """One optimisation step's worth of patch pairs.

    ``lr`` is [2B, p, p, C] and ``hr`` is [2B, p*s, p*s, C], with the
    two patches of source image i at rows i and B + i.  Rows [0, B) act
    as queries; rows [B, 2B) are the matching keys.  ``specs`` has one
    degradation per source image, shared by both of its patches.
    """

    lr: np.ndarray
    hr: np.ndarray
    specs: list[DegradationSpec] = field(default_factory=list)

    @property
    def pair_count(self) -> int:
        return len(self.specs)


def make_batch(
    hr_pool: list[np.ndarray],
    rng: np.random.Generator,
    scale: int = 4,
    lr_patch: int = 48,
    batch_images: int = 16,
    mode: str = "general",
    sample=None,
    augment: bool = True,
) -> TrainBatch:
    """Assemble a contrastive SR training batch from an HR image pool.

    For each of ``batch_images`` draws: pick a pool image, apply a random
    dihedral augmentation, degrade the whole image under one sampled
    spec, then cut two aligned LR/HR patch pairs at random offsets.
    ``sample`` overrides the spec sampler (callable rng -> spec);
    otherwise specs come from :func:`sample_spec` with ``mode``.

    Images whose LR rendition is smaller than ``lr_patch`` are skipped
    with a warning; an unusable pool raises a data error.
    """
    if not hr_pool:
        raise DataError("empty HR pool")
    if sample is None:
        sample = lambda r: sample_spec(r, scale, mode)

    queries_lr, keys_lr, queries_hr, keys_hr, specs = [], [], [], [], []
    ps = lr_patch * scale
    skipped: set[int] = set()
    attempts = 0
    while len(specs) < batch_images:
        attempts += 1
        if attempts > 20 * batch_images and not specs:
            raise DataError(f"no pool image supports {lr_patch}x{lr_patch} LR patches at x{scale}")
        idx = int(rng.integers(len(hr_pool)))
        hr = hr_pool[idx]
        if augment:
            hr = dihedral(hr, int(rng.integers(8)))
        h, w = hr.shape[0] - hr.shape[0] % scale, hr.shape[1] - hr.shape[1] % scale
        if h < ps or w < ps:
            if idx not in skipped:
                skipped.add(idx)
                warnings.warn(
                    f"pool image {idx} ({hr.shape[0]}x{hr.shape[1]}) too small for "
                    f"{ps}x{ps} HR crops; skipping",
                    stacklevel=2,
                )
                if len(skipped) == len(hr_pool):
                    raise DataError(
                        f"no pool image supports {lr_patch}x{lr_patch} LR patches at x{scale}"
                    )
            continue
        hr = hr[:h, :w]
        spec = sample(rng)
        lr = degrade(hr, spec, rng_seed=int(rng.integers(2**63)))
        lh, lw = lr.shape[0], lr.shape[1]
        for bucket_lr, bucket_hr in ((queries_lr, queries_hr), (keys_lr, keys_hr)):
            oy = int(rng.integers(lh - lr_patch + 1))
            ox = int(rng.integers(lw - lr_patch + 1))
            bucket_lr.append(lr[oy : oy + lr_patch, ox : ox + lr_patch])
            bucket_hr.append(hr[oy * scale : oy * scale + ps, ox * scale : ox * scale + ps])
        specs.append(spec)

    lr_all = np.stack(queries_lr + keys_lr).astype(np.float32)
    hr_all = np.stack(queries_hr + keys_hr).astype(np.float32)
    if lr_all.ndim == 3:  # grayscale pool
        lr_all, hr_all = lr_all[..., None], hr_all[..., None]
    return TrainBatch(lr=lr_all, hr=hr_all, specs=specs)
