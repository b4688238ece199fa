"""Degradation synthesis: kernels, resampling, the full blur/downsample/noise
pipeline, and spec sampling.  Oracles are closed forms or brute-force
recomputations, never the code under test.
"""

import numpy as np
import pytest
from scipy import stats

from dsat.degradation import (
    LAMBDA_RANGE,
    NOISE_RANGE,
    SIGMA_RANGES,
    DegradationSpec,
    bicubic_downsample,
    cubic_resize,
    degrade,
    gaussian_kernel,
    sample_spec,
)
from dsat.errors import ConfigError, ShapeError


def iso(sigma, scale=2, noise=0.0, size=21):
    return DegradationSpec(kind="isotropic", scale=scale, sigma=sigma,
                           noise_sigma=noise, kernel_size=size)


def aniso(lam1, lam2, theta, scale=4, noise=0.0, size=21):
    return DegradationSpec(kind="anisotropic", scale=scale, lambda1=lam1,
                           lambda2=lam2, theta=theta, noise_sigma=noise,
                           kernel_size=size)


class TestGaussianKernel:
    def test_sums_to_one_and_nonnegative(self):
        rng = np.random.default_rng(0)
        specs = [iso(s) for s in np.linspace(0.2, 2.0, 12)]
        specs += [aniso(rng.uniform(0.2, 4.0), rng.uniform(0.2, 4.0),
                        rng.uniform(0.0, np.pi)) for _ in range(24)]
        for spec in specs:
            k = gaussian_kernel(spec)
            assert k.shape == (21, 21)
            assert (k >= 0.0).all()
            assert abs(k.sum() - 1.0) <= 1e-8

    def test_isotropic_symmetry_exact(self):
        # Transpose and 90-degree rotation must be bit-identical, not just close.
        for sigma in (0.2, 0.8, 1.7, 2.0):
            k = gaussian_kernel(iso(sigma))
            assert np.array_equal(k, k.T)
            assert np.array_equal(k, np.rot90(k))
            assert np.array_equal(k, k[::-1, :])
            assert np.array_equal(k, k[:, ::-1])

    def test_anisotropic_reduces_to_isotropic(self):
        for theta in (0.0, 0.3, 1.2, np.pi - 0.01):
            for sigma in (0.7, 1.5):
                ka = gaussian_kernel(aniso(sigma**2, sigma**2, theta))
                ki = gaussian_kernel(iso(sigma, scale=2))
                np.testing.assert_allclose(ka, ki, atol=1e-10)

    def test_near_delta_at_minimum_width(self):
        k = gaussian_kernel(iso(0.2))
        assert k[10, 10] > 0.99

    def test_empirical_covariance_matches_target(self):
        # Independent moment oracle: second moments of the discrete kernel
        # against Sigma = R diag(l1,l2) R^T (axis 0 = rows).  Eigenvalues are
        # kept >= 0.5: below ~0.4 the integer-grid discretisation itself
        # biases the moments by more than the 2% budget.
        rng = np.random.default_rng(1)
        g = np.arange(21, dtype=np.float64) - 10.0
        yy, xx = np.meshgrid(g, g, indexing="ij")
        for _ in range(40):
            lam1 = rng.uniform(0.5, 4.0)
            lam2 = rng.uniform(0.5, 4.0)
            theta = rng.uniform(0.0, np.pi)
            c, s = np.cos(theta), np.sin(theta)
            rot = np.array([[c, -s], [s, c]])
            target = rot @ np.diag([lam1, lam2]) @ rot.T
            k = gaussian_kernel(aniso(lam1, lam2, theta))
            emp = np.empty((2, 2))
            emp[0, 0] = (k * yy * yy).sum()
            emp[0, 1] = emp[1, 0] = (k * yy * xx).sum()
            emp[1, 1] = (k * xx * xx).sum()
            rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
            assert rel < 0.02, f"lam=({lam1:.3f},{lam2:.3f}) theta={theta:.3f}: {rel:.4f}"

    def test_isotropic_moments_match_sigma(self):
        g = np.arange(21, dtype=np.float64) - 10.0
        for sigma in (0.8, 1.3, 2.0):
            k = gaussian_kernel(iso(sigma))
            m2 = (k.sum(axis=1) * g * g).sum()
            assert abs(m2 - sigma**2) / sigma**2 < 0.02

    def test_degenerate_covariance_rejected(self):
        with pytest.raises(ConfigError):
            gaussian_kernel(aniso(0.0, 1.0, 0.0))

    def test_out_of_range_parameters_rejected(self):
        with pytest.raises(ConfigError):
            iso(2.5, scale=2).validate()  # above the x2 ceiling
        iso(2.5, scale=3).validate()  # fine one scale up
        with pytest.raises(ConfigError):
            aniso(1.0, 1.0, -0.1).validate()
        with pytest.raises(ConfigError):
            iso(1.0, noise=26.0).validate()
        with pytest.raises(ConfigError):
            DegradationSpec(kind="isotropic", scale=5, sigma=1.0).validate()
        with pytest.raises(ConfigError):
            iso(1.0, size=20).validate()

    def test_sigma_range_constants(self):
        assert SIGMA_RANGES == {2: (0.2, 2.0), 3: (0.2, 3.0), 4: (0.2, 4.0)}
        assert LAMBDA_RANGE == (0.2, 4.0)
        assert NOISE_RANGE == (0.0, 25.0)


class TestCubicResize:
    def test_constant_exact(self):
        c = np.full((8, 8, 1), 0.4213, dtype=np.float32)
        out = bicubic_downsample(c, 2)
        assert out.shape == (4, 4, 1)
        assert np.array_equal(out, c[:4, :4])

    def test_constant_exact_antialiased(self):
        c = np.full((12, 12), 0.7717, dtype=np.float32)
        out = bicubic_downsample(c, 3, antialias=True)
        assert np.array_equal(out, c[:4, :4])

    def test_scale_one_identity(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(5, 7, 3)).astype(np.float32)
        out = bicubic_downsample(img, 1)
        assert np.array_equal(out, img)

    def test_linear_ramp_reproduced(self):
        # Downsampled pixel centres sit at x_src = 2*j + 0.5; on a linear
        # ramp the cubic must reproduce the ramp there (away from borders).
        x = np.linspace(0.0, 1.0, 8)
        img = np.tile(x, (8, 1))[:, :, None]
        out = bicubic_downsample(img, 2)
        src = (np.arange(4) + 0.5) * 2 - 0.5
        expected = np.interp(src, np.arange(8), x)
        err = np.abs(out[:, 1:3, 0] - expected[1:3]).max()
        assert err < 1e-6
        # rows are constant along the ramp's perpendicular
        assert np.ptp(out[:, 1, 0]) < 1e-12

    def test_vertical_ramp_reproduced(self):
        y = np.linspace(0.3, 0.9, 12)
        img = np.tile(y[:, None], (1, 12))[:, :, None]
        out = bicubic_downsample(img, 3)
        src = (np.arange(4) + 0.5) * 3 - 0.5
        expected = np.interp(src, np.arange(12), y)
        err = np.abs(out[1:3, :, 0] - expected[1:3, None]).max()
        assert err < 1e-6

    def test_upsample_interpolates_ramp(self):
        x = np.linspace(0.0, 1.0, 6)
        img = np.tile(x, (6, 1))[:, :, None]
        out = cubic_resize(img, 12, 12)
        src = (np.arange(12) + 0.5) * 0.5 - 0.5
        expected = np.interp(src, np.arange(6), x)
        # columns whose 4-tap support stays inside the source: src in [1, 4]
        assert np.abs(out[4, 3:9, 0] - expected[3:9]).max() < 1e-6

    def test_non_divisible_rejected(self):
        with pytest.raises(ShapeError):
            bicubic_downsample(np.zeros((9, 8)), 2)

    def test_matches_bruteforce_cubic(self):
        # Brute-force separable Catmull-Rom (a=-0.5) with edge clamping,
        # written independently with explicit loops.
        def w(t):
            t = abs(t)
            if t <= 1.0:
                return 1.5 * t**3 - 2.5 * t**2 + 1.0
            if t < 2.0:
                return -0.5 * t**3 + 2.5 * t**2 - 4.0 * t + 2.0
            return 0.0

        def resize1d(v, n_out):
            n_in = len(v)
            scale = n_in / n_out
            out = np.zeros(n_out)
            for j in range(n_out):
                x = (j + 0.5) * scale - 0.5
                base = int(np.floor(x))
                acc = 0.0
                norm = 0.0
                for k in range(base - 2, base + 3):
                    wk = w(x - k)
                    if wk == 0.0:
                        continue
                    acc += wk * v[min(max(k, 0), n_in - 1)]
                    norm += wk
                out[j] = acc / norm
            return out

        rng = np.random.default_rng(3)
        img = rng.uniform(size=(8, 6)).astype(np.float64)
        out = bicubic_downsample(img, 2)
        rows = np.stack([resize1d(img[i], 3) for i in range(8)])
        ref = np.stack([resize1d(rows[:, j], 4) for j in range(3)], axis=1)
        np.testing.assert_allclose(out, ref, atol=1e-12)


class TestDegrade:
    def test_constant_image_exact(self):
        for spec in (iso(1.3, scale=2), aniso(2.0, 0.7, 0.9, scale=4),
                     iso(0.2, scale=3)):
            c = np.float32(0.4213)
            hr = np.full((24, 24, 3), c, dtype=np.float32)
            lr = degrade(hr, spec, rng_seed=0)
            assert lr.shape == (24 // spec.scale, 24 // spec.scale, 3)
            assert lr.dtype == np.float32
            assert np.array_equal(lr, np.full_like(lr, c))

    def test_near_delta_blur_matches_plain_bicubic(self):
        yy, xx = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0.2, 0.8, 32),
                             indexing="ij")
        hr = (0.5 * yy + 0.3 * xx)[:, :, None].astype(np.float64)
        lr = degrade(hr, iso(0.2, scale=2), rng_seed=0)
        ref = bicubic_downsample(hr, 2).astype(np.float32)
        assert np.abs(lr - ref).max() < 1e-3

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(4)
        hr = rng.uniform(size=(16, 16, 3)).astype(np.float32)
        spec = aniso(1.0, 3.0, 0.4, scale=2, noise=15.0)
        a = degrade(hr, spec, rng_seed=123)
        b = degrade(hr, spec, rng_seed=123)
        assert np.array_equal(a, b)
        c = degrade(hr, spec, rng_seed=124)
        assert not np.array_equal(a, c)

    def test_mean_preserved_without_noise(self):
        # Low-frequency content so border effects stay negligible.
        yy, xx = np.meshgrid(np.linspace(0, np.pi, 64), np.linspace(0, np.pi, 64),
                             indexing="ij")
        hr = (0.5 + 0.3 * np.sin(yy) * np.cos(2 * xx))[:, :, None]
        lr = degrade(hr, iso(1.5, scale=2), rng_seed=0)
        assert abs(lr.mean() - hr.mean()) < 1e-3

    def test_noise_scale_is_8bit_std(self):
        hr = np.full((128, 128, 1), 0.5, dtype=np.float32)
        lr = degrade(hr, iso(1.0, scale=2, noise=20.0), rng_seed=7)
        resid = lr.astype(np.float64) - 0.5
        assert abs(resid.std() - 20.0 / 255.0) < 0.05 * (20.0 / 255.0)
        assert abs(resid.mean()) < 3e-3

    def test_output_clamped(self):
        hr = np.ones((32, 32, 1), dtype=np.float32)
        lr = degrade(hr, iso(1.0, scale=2, noise=25.0), rng_seed=8)
        assert lr.max() <= 1.0
        assert (lr == 1.0).any()
        lo = degrade(np.zeros_like(hr), iso(1.0, scale=2, noise=25.0), rng_seed=8)
        assert lo.min() >= 0.0

    def test_grayscale_2d_roundtrip(self):
        rng = np.random.default_rng(5)
        hr = rng.uniform(size=(20, 20)).astype(np.float32)
        lr = degrade(hr, iso(0.9, scale=2), rng_seed=0)
        assert lr.shape == (10, 10)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            degrade(np.zeros((15, 16, 3), dtype=np.float32), iso(1.0, scale=2), 0)
        with pytest.raises(ShapeError):
            # smaller than half the kernel: reflect padding is impossible
            degrade(np.zeros((8, 8, 3), dtype=np.float32), iso(1.0, scale=2), 0)


class TestSampleSpec:
    def test_isotropic_ranges_and_uniformity(self):
        for scale in (2, 3, 4):
            rng = np.random.default_rng(100 + scale)
            sigmas = np.array([sample_spec(rng, scale, "isotropic_noisefree").sigma
                               for _ in range(10_000)])
            lo, hi = SIGMA_RANGES[scale]
            assert sigmas.min() >= lo and sigmas.max() <= hi
            p = stats.kstest(sigmas, stats.uniform(lo, hi - lo).cdf).pvalue
            assert p > 0.01
            spec = sample_spec(np.random.default_rng(0), scale, "isotropic_noisefree")
            assert spec.noise_sigma == 0.0
            assert spec.kind == "isotropic"

    def test_general_ranges_and_uniformity(self):
        rng = np.random.default_rng(200)
        specs = [sample_spec(rng, 4, "general") for _ in range(10_000)]
        lam1 = np.array([s.lambda1 for s in specs])
        lam2 = np.array([s.lambda2 for s in specs])
        theta = np.array([s.theta for s in specs])
        noise = np.array([s.noise_sigma for s in specs])
        for vals, (lo, hi) in ((lam1, LAMBDA_RANGE), (lam2, LAMBDA_RANGE),
                               (theta, (0.0, np.pi)), (noise, NOISE_RANGE)):
            assert vals.min() >= lo and vals.max() <= hi
            assert stats.kstest(vals, stats.uniform(lo, hi - lo).cdf).pvalue > 0.01
        assert all(s.kind == "anisotropic" for s in specs)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            sample_spec(np.random.default_rng(0), 2, "freestyle")

    def test_draws_are_validatable(self):
        rng = np.random.default_rng(300)
        for _ in range(50):
            sample_spec(rng, 3, "general").validate()
            sample_spec(rng, 2, "isotropic_noisefree").validate()
