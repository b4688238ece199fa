"""Estimator-style wrappers over the training and inference pipeline.

These follow the scikit-learn conventions (constructor stores
hyperparameters verbatim, ``fit`` learns and returns self, learned
state lives in trailing-underscore attributes), so the pipeline
composes with sklearn tooling: ``get_params``, ``clone``, grid search.

All three default to the desk-scale architecture; pass the size
hyperparameters explicitly to scale up.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .degradation import DegradationSpec, degrade
from .metrics import psnr
from .tensor import Tensor, no_grad
from .train import TrainConfig, advance, build_state
from .validation import as_image_list

__all__ = ["DegradationSynthesizer", "DegradationEmbedder", "SuperResolver"]


class DegradationSynthesizer(BaseEstimator, TransformerMixin):
    """Stateless transformer: HR images -> degraded LR images.

    One fixed degradation (the constructor parameters) is applied to
    every input; ``fit`` is a no-op kept for pipeline compatibility.
    Images are cropped to a multiple of ``scale`` before degradation.
    """

    def __init__(
        self,
        scale: int = 4,
        kind: str = "isotropic",
        sigma: float = 1.0,
        lambda1: float = 1.0,
        lambda2: float = 1.0,
        theta: float = 0.0,
        noise_sigma: float = 0.0,
        kernel_size: int = 21,
        seed: int = 0,
    ):
        self.scale = scale
        self.kind = kind
        self.sigma = sigma
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.theta = theta
        self.noise_sigma = noise_sigma
        self.kernel_size = kernel_size
        self.seed = seed

    def _spec(self) -> DegradationSpec:
        return DegradationSpec(
            kind=self.kind,
            scale=self.scale,
            sigma=self.sigma,
            lambda1=self.lambda1,
            lambda2=self.lambda2,
            theta=self.theta,
            noise_sigma=self.noise_sigma,
            kernel_size=self.kernel_size,
        ).validate()

    def fit(self, X=None, y=None):
        self._spec()  # validate parameters eagerly
        return self

    def transform(self, X) -> list[np.ndarray]:
        spec = self._spec()
        out = []
        for i, img in enumerate(as_image_list(X)):
            h = img.shape[0] - img.shape[0] % self.scale
            w = img.shape[1] - img.shape[1] % self.scale
            out.append(degrade(img[:h, :w], spec, rng_seed=self.seed + i))
        return out


class _TrainedMixin:
    """Shared fit plumbing for the two learned estimators."""

    def _config(self, **phase_steps) -> TrainConfig:
        return TrainConfig.desk(
            seed=self.seed,
            scale=self.scale,
            mode=self.mode,
            batch_images=self.batch_images,
            lr_patch=self.lr_patch,
            channels=self.channels,
            num_blocks=self.num_blocks,
            units_per_block=self.units_per_block,
            heads=self.heads,
            encoder_base_width=self.encoder_base_width,
            queue_capacity=self.queue_capacity,
            **phase_steps,
        ).validate()

    def _check_fitted(self, attr: str):
        if not hasattr(self, attr):
            raise NotFittedError(
                f"This {type(self).__name__} instance is not fitted yet; call fit first."
            )


class DegradationEmbedder(_TrainedMixin, BaseEstimator, TransformerMixin):
    """Contrastively trained transformer: LR images -> 256-d embeddings.

    ``fit`` takes a pool of HR images, synthesises degraded pairs and
    pretrains the degradation encoder; ``transform`` embeds LR images
    of any size into unit-norm vectors.
    """

    def __init__(
        self,
        steps: int = 500,
        scale: int = 4,
        mode: str = "general",
        batch_images: int = 8,
        lr_patch: int = 16,
        encoder_base_width: int = 32,
        queue_capacity: int = 256,
        channels: int = 36,
        num_blocks: int = 2,
        units_per_block: int = 2,
        heads: int = 2,
        seed: int = 0,
    ):
        self.steps = steps
        self.scale = scale
        self.mode = mode
        self.batch_images = batch_images
        self.lr_patch = lr_patch
        self.encoder_base_width = encoder_base_width
        self.queue_capacity = queue_capacity
        self.channels = channels
        self.num_blocks = num_blocks
        self.units_per_block = units_per_block
        self.heads = heads
        self.seed = seed

    def fit(self, X, y=None):
        pool = as_image_list(X)
        config = self._config(encoder_steps=self.steps)
        state = build_state(config, "encoder")
        while state.step < self.steps:
            advance(state, pool)
        self.encoder_ = state.encoder_q.eval()
        self.n_steps_ = state.step
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted("encoder_")
        rows = []
        for img in as_image_list(X):
            chw = np.ascontiguousarray(img.transpose(2, 0, 1))[None]
            with no_grad():
                z, _ = self.encoder_(Tensor(chw))
            rows.append(z.data[0])
        return np.stack(rows)


class SuperResolver(_TrainedMixin, BaseEstimator):
    """Jointly trained blind super-resolution estimator.

    ``fit`` trains encoder and SR network on an HR image pool under
    randomly sampled degradations; ``predict`` super-resolves LR
    images; ``score`` reports mean PSNR against reference HR images.
    """

    def __init__(
        self,
        steps: int = 500,
        pretrain_steps: int = 0,
        scale: int = 4,
        mode: str = "general",
        batch_images: int = 8,
        lr_patch: int = 16,
        encoder_base_width: int = 32,
        queue_capacity: int = 256,
        channels: int = 36,
        num_blocks: int = 2,
        units_per_block: int = 2,
        heads: int = 2,
        seed: int = 0,
    ):
        self.steps = steps
        self.pretrain_steps = pretrain_steps
        self.scale = scale
        self.mode = mode
        self.batch_images = batch_images
        self.lr_patch = lr_patch
        self.encoder_base_width = encoder_base_width
        self.queue_capacity = queue_capacity
        self.channels = channels
        self.num_blocks = num_blocks
        self.units_per_block = units_per_block
        self.heads = heads
        self.seed = seed

    def fit(self, X, y=None):
        pool = as_image_list(X)
        config = self._config(joint_steps=self.steps, encoder_steps=self.pretrain_steps)
        state = build_state(config, "joint")
        if self.pretrain_steps > 0:
            pre = build_state(config, "encoder")
            while pre.step < self.pretrain_steps:
                advance(pre, pool)
            state.encoder_q.load_state_arrays(pre.encoder_q.state_arrays())
            state.encoder_k.load_state_arrays(pre.encoder_k.state_arrays())
            state.queue.load_state_arrays(pre.queue.state_arrays())
        while state.step < self.steps:
            advance(state, pool)
        self.model_ = state.model
        self.encoder_ = state.encoder_q.eval()
        self.n_steps_ = state.step
        return self

    def predict(self, X) -> list[np.ndarray]:
        self._check_fitted("model_")
        out = []
        for img in as_image_list(X):
            chw = np.ascontiguousarray(img.transpose(2, 0, 1))[None]
            with no_grad():
                _, d = self.encoder_(Tensor(chw))
                sr = self.model_(Tensor(chw), d).data[0].transpose(1, 2, 0)
            out.append(np.clip(sr, 0.0, 1.0).astype(np.float32))
        return out

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of predict(X) against reference images y."""
        refs = as_image_list(y, "y")
        preds = self.predict(X)
        if len(refs) != len(preds):
            raise ValueError(f"got {len(preds)} predictions but {len(refs)} references")
        return float(np.mean([psnr(r, p, border=self.scale) for r, p in zip(refs, preds)]))
