"""Contrastive degradation representation learning.

Two LR patches cut from the same degraded image form a positive pair;
patches from other images (held in a momentum queue) are negatives.
The query encoder is trained with an InfoNCE-style loss; the key
encoder trails it by exponential moving average and fills the queue.

The vector handed to the SR network is the query encoder's 256-d head
output *before* L2 normalisation; the normalised copy is what enters
the contrastive loss and the queue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError, DataError, ShapeError
from .module import BatchNorm2d, Conv2d, Linear, Module
from .tensor import Tensor, no_grad

__all__ = [
    "EncoderConfig",
    "Encoder",
    "MomentumQueue",
    "encode",
    "degradation_loss",
    "momentum_update",
]


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture of the degradation encoder.

    Six stride-2 3x3 conv stages, each batch-normalised before its
    leaky-ReLU, channel plan (w, w, 2w, 2w, 4w, 4w), global average
    pooling, then a two-layer MLP head to ``embed_dim``.  ``patch_size``
    is the training patch side length; inference accepts any spatial
    size (the pooling is size-agnostic).
    """

    in_channels: int = 3
    base_width: int = 64
    embed_dim: int = 256
    patch_size: int = 48

    @classmethod
    def desk(cls) -> "EncoderConfig":
        """Reduced preset for CPU-scale runs and tests."""
        return cls(base_width=32, patch_size=16)

    def validate(self) -> "EncoderConfig":
        if min(self.in_channels, self.base_width, self.embed_dim, self.patch_size) < 1:
            raise ConfigError(f"encoder config fields must be positive: {self}")
        return self


class Encoder(Module):
    """LR patch -> 256-d degradation representation."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config.validate()
        w = config.base_width
        widths = [w, w, 2 * w, 2 * w, 4 * w, 4 * w]
        c_prev = config.in_channels
        for i, c in enumerate(widths):
            # bias is redundant under the following batch norm
            self.add_module(f"conv{i + 1}", Conv2d(c_prev, c, 3, rng, stride=2, bias=False))
            self.add_module(f"bn{i + 1}", BatchNorm2d(c))
            c_prev = c
        self.fc1 = Linear(c_prev, c_prev, rng)
        self.fc2 = Linear(c_prev, config.embed_dim, rng)
        self._stages = [
            (getattr(self, f"conv{i + 1}"), getattr(self, f"bn{i + 1}")) for i in range(6)
        ]

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (normalised embedding, pre-normalisation representation).

        ``x`` is NCHW in [0,1].  The first output drives the contrastive
        loss and the queue; the second is the representation D consumed
        by the SR network's modulation generators.
        """
        h = x
        for conv, bn in self._stages:
            h = F.leaky_relu(bn(conv(h)), 0.1)
        pooled = F.mean(h, axis=(2, 3))  # [N, 4w]
        d = self.fc2(F.leaky_relu(self.fc1(pooled), 0.1))
        z = F.l2_normalize(d, axis=-1)
        return z, d


def encode(encoder: Encoder, patch: np.ndarray) -> np.ndarray:
    """Embed one CHW patch of the encoder's configured training size.

    Returns the unit-norm float32 embedding.  Raises on any other
    spatial size; whole-image embedding goes through
    :meth:`Encoder.forward` directly.
    """
    arr = np.asarray(patch, dtype=np.float32)
    p = encoder.config.patch_size
    expected = (encoder.config.in_channels, p, p)
    if arr.shape != expected:
        raise ShapeError(f"expected patch of shape {expected}, got {arr.shape}")
    was_training = encoder.training
    encoder.eval()
    try:
        with no_grad():
            z, _ = encoder(Tensor(arr[None]))
    finally:
        encoder.train(was_training)
    return z.data[0].astype(np.float32)


class MomentumQueue:
    """Fixed-capacity FIFO of unit-norm embeddings plus MoCo constants.

    The ring buffer starts empty and grows to ``capacity``, after which
    the oldest entries are evicted.  ``as_array`` returns retained
    entries oldest-first.
    """

    def __init__(
        self,
        capacity: int,
        dim: int = 256,
        momentum: float = 0.999,
        tau: float = 0.07,
    ):
        if capacity < 1:
            raise ConfigError(f"queue capacity must be positive, got {capacity}")
        if not 0.0 <= momentum <= 1.0:
            raise ConfigError(f"momentum must lie in [0,1], got {momentum}")
        if tau <= 0.0:
            raise ConfigError(f"temperature must be positive, got {tau}")
        self.capacity = capacity
        self.dim = dim
        self.momentum = momentum
        self.tau = tau
        self._storage = np.zeros((capacity, dim), dtype=np.float32)
        self._count = 0
        self._ptr = 0

    def __len__(self) -> int:
        return self._count

    def enqueue(self, embeddings: np.ndarray) -> None:
        """Append rows FIFO; at capacity the oldest rows are dropped."""
        arr = np.asarray(embeddings, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[None]
        if arr.ndim != 2 or arr.shape[1] != self.dim:
            raise ShapeError(f"expected [n, {self.dim}] embeddings, got {arr.shape}")
        if arr.shape[0] >= self.capacity:
            self._storage[:] = arr[-self.capacity :]
            self._count = self.capacity
            self._ptr = 0
            return
        for row in arr:  # capacity is small; clarity over vectorised wraparound
            self._storage[self._ptr] = row
            self._ptr = (self._ptr + 1) % self.capacity
            self._count = min(self._count + 1, self.capacity)

    def as_array(self) -> np.ndarray:
        """Retained entries, oldest first, shape [count, dim]."""
        if self._count < self.capacity:
            return self._storage[: self._count].copy()
        return np.concatenate([self._storage[self._ptr :], self._storage[: self._ptr]])

    def fill_random(self, rng: np.random.Generator) -> None:
        """Fill to capacity with random unit vectors (cold-start negatives)."""
        raw = rng.normal(size=(self.capacity, self.dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        self._storage[:] = raw.astype(np.float32)
        self._count = self.capacity
        self._ptr = 0

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "storage": self._storage,
            "count": np.array(float(self._count), dtype=np.float32),
            "ptr": np.array(float(self._ptr), dtype=np.float32),
        }

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        storage = np.asarray(state["storage"], dtype=np.float32)
        if storage.shape != self._storage.shape:
            raise ShapeError(
                f"queue storage shape {storage.shape} != expected {self._storage.shape}"
            )
        self._storage = storage.copy()
        self._count = int(np.asarray(state["count"]).item())
        self._ptr = int(np.asarray(state["ptr"]).item())


def degradation_loss(
    queries: Tensor,
    positives: Tensor | np.ndarray,
    queue: MomentumQueue | np.ndarray,
    tau: float,
    include_positive: bool = True,
) -> Tensor:
    """InfoNCE-style loss summed over the batch.

    ``queries`` are the query-encoder embeddings [B, d] (differentiable);
    ``positives`` the paired key embeddings [B, d] and ``queue`` the
    negatives [N, d], both treated as constants, so gradients reach the
    query encoder only.  ``include_positive`` keeps the positive term in
    the denominator (the standard form; it bounds the loss below by 0).
    Setting it False drops the positive from the denominator, matching a
    formulation that subtracts the positive logit from the log-sum of
    negatives alone.
    """
    if tau <= 0.0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    negatives = queue.as_array() if isinstance(queue, MomentumQueue) else np.asarray(queue)
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise DataError(f"queue must hold at least one entry, got shape {negatives.shape}")
    pos = positives.data if isinstance(positives, Tensor) else np.asarray(positives)

    l_pos = F.sum(F.mul(queries, Tensor(pos.astype(queries.data.dtype))), axis=1)  # [B]
    l_pos = F.mul(l_pos, 1.0 / tau)
    l_neg = F.matmul(queries, Tensor(negatives.astype(queries.data.dtype).T))  # [B, N]
    l_neg = F.mul(l_neg, 1.0 / tau)
    if include_positive:
        logits = F.concat([F.reshape(l_pos, (-1, 1)), l_neg], axis=1)
    else:
        logits = l_neg
    return F.sum(F.sub(F.logsumexp(logits, axis=1), l_pos))


def momentum_update(query: Module, key: Module, m: float) -> None:
    """EMA update of the key encoder: theta_k <- m*theta_k + (1-m)*theta_q.

    Batch-norm running statistics trail the query encoder's the same way,
    so a key encoder restored from a checkpoint embeds consistently with
    the weights it carries.
    """
    if not 0.0 <= m <= 1.0:
        raise ConfigError(f"momentum must lie in [0,1], got {m}")
    q_params = dict(query.named_parameters())
    for name, pk in key.named_parameters():
        if name not in q_params:
            raise ShapeError(f"key parameter {name!r} missing from query encoder")
        pq = q_params[name]
        if pk.data.shape != pq.data.shape:
            raise ShapeError(
                f"parameter {name!r}: key shape {pk.data.shape} != query shape {pq.data.shape}"
            )
        pk.data = m * pk.data + (1.0 - m) * pq.data
    q_buffers = dict(query.named_buffers())
    for name, bk in key.named_buffers():
        if name not in q_buffers:
            raise ShapeError(f"key buffer {name!r} missing from query encoder")
        bk[...] = m * bk + (1.0 - m) * q_buffers[name]
