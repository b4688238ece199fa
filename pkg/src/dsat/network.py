"""The degradation-modulated super-resolution network.

Pipeline: a 3x3 conv lifts the LR image to C channels (shallow feature
F0); K residual blocks refine it, each holding L mixed CNN/transformer
units; a 3x3 conv closes the trunk and its output is added back to F0
before the pixel-shuffle reconstruction head produces the SR image.

Each mixed unit conditions on a 256-d degradation representation D in
two places:

* a depthwise 3x3 kernel D1 and per-channel coefficients D2, generated
  from D, rescale the convolutional path (with a residual), and
* inside window attention the value projection is multiplied
  channel-wise by D2 (viewed per head as a [1, d] weight).

Every unit has its own small generator networks for (D1, D2); the same
D feeds all of them.  Window attention follows the shifted-window
scheme: even units use aligned windows, odd units shift by M/2 and
mask attention across the wrap-around boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .errors import ConfigError, ShapeError
from .module import Conv2d, LayerNorm, Linear, Mlp, Module, trunc_normal
from .tensor import Tensor

__all__ = [
    "DsatConfig",
    "ModulationGenerator",
    "dcl_forward",
    "WindowAttention",
    "SwinLayer",
    "Cmt",
    "Drstb",
    "DsatModel",
]

MASK_FILL = -1e4  # additive logit penalty for cross-boundary window pairs


@dataclass(frozen=True)
class DsatConfig:
    """Architecture hyperparameters.

    ``paper`` is the full-scale preset; ``desk`` is small enough to
    train on a CPU in minutes and is what the test-suite exercises.
    ``dcl`` and ``attention_weights`` switch the two modulation sites
    independently for ablation runs.
    """

    in_channels: int = 3
    scale: int = 4
    num_blocks: int = 6  # K: residual groups
    units_per_block: int = 6  # L: mixed units per group
    channels: int = 180  # C
    window: int = 8  # M
    heads: int = 6
    mlp_ratio: float = 4.0
    embed_dim: int = 256  # dimension of the degradation representation D
    d1_hidden: int = 64
    dcl: bool = True
    attention_weights: bool = True

    @classmethod
    def paper(cls, scale: int = 4, **overrides) -> "DsatConfig":
        return cls(scale=scale, **overrides)

    @classmethod
    def desk(cls, scale: int = 4, **overrides) -> "DsatConfig":
        defaults = dict(
            num_blocks=2,
            units_per_block=2,
            channels=36,
            window=8,
            heads=2,
            mlp_ratio=2.0,
        )
        defaults.update(overrides)
        return cls(scale=scale, **defaults)

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    def validate(self) -> "DsatConfig":
        if self.channels % self.heads != 0:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.window < 1:
            raise ConfigError(f"window must be positive, got {self.window}")
        if min(self.num_blocks, self.units_per_block, self.channels, self.heads) < 1:
            raise ConfigError(f"architecture sizes must be positive: {self}")
        if self.mlp_ratio <= 0:
            raise ConfigError(f"mlp_ratio must be positive, got {self.mlp_ratio}")
        return self


class ModulationGenerator(Module):
    """Derive the unit's (D1, D2) modulation from the representation D.

    D1 comes from two fully-connected layers and reshapes to one
    depthwise 3x3 kernel per channel.  D2 comes from two 1x1
    convolutions applied to D expanded to a 1x1 map (equivalently two
    affine layers) followed by a sigmoid, giving per-channel
    coefficients in (0,1) that broadcast over space.
    """

    def __init__(self, config: DsatConfig, rng: np.random.Generator):
        super().__init__()
        self.channels = config.channels
        if config.dcl:
            self.fc1 = Linear(config.embed_dim, config.d1_hidden, rng)
            self.fc2 = Linear(config.d1_hidden, config.channels * 9, rng)
        if config.dcl or config.attention_weights:
            self.g1 = Linear(config.embed_dim, config.channels, rng)
            self.g2 = Linear(config.channels, config.channels, rng)
        self._gen_d1 = config.dcl
        self._gen_d2 = config.dcl or config.attention_weights

    def forward(self, d: Tensor) -> tuple[Tensor | None, Tensor | None]:
        """[N, embed_dim] -> (D1 [N, C, 1, 3, 3] or None, D2 [N, C] or None)."""
        n = d.shape[0]
        d1 = None
        if self._gen_d1:
            h = F.leaky_relu(self.fc1(d), 0.1)
            d1 = F.reshape(self.fc2(h), (n, self.channels, 1, 3, 3))
        d2 = None
        if self._gen_d2:
            h = F.leaky_relu(self.g1(d), 0.1)
            d2 = F.sigmoid(self.g2(h))
        return d1, d2


def dcl_forward(feat: Tensor, d1: Tensor, d2: Tensor) -> Tensor:
    """Degradation-aware convolution: depthwise(F, D1) * D2 + F.

    ``feat`` is [N, C, H, W]; ``d1`` holds one 3x3 kernel per channel
    (shared [C,1,3,3] or per-sample [N,C,1,3,3]); ``d2`` is [C] or
    [N, C] and rescales channels before the residual connection.
    """
    mod = F.depthwise_conv2d(feat, d1)
    d2_map = F.reshape(d2, (*d2.shape, 1, 1))  # broadcast over H, W
    return F.add(F.mul(mod, d2_map), feat)


def _relative_index(window: int) -> np.ndarray:
    """[M*M, M*M] lookup into the (2M-1)^2 table of pairwise offsets."""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij"))
    flat = coords.reshape(2, -1)  # [2, M*M]
    rel = flat[:, :, None] - flat[:, None, :]  # [2, M*M, M*M]
    rel = rel + window - 1
    return (rel[0] * (2 * window - 1) + rel[1]).astype(np.int64)


class WindowAttention(Module):
    """Multi-head self-attention inside M x M windows with relative bias.

    The value path accepts an optional per-sample channel weighting
    (the attention half of the degradation modulation).  Because heads
    split the channel axis into contiguous [d] slices, multiplying V by
    the C-vector is exactly the per-head [1, d] weighting.
    """

    def __init__(self, config: DsatConfig, rng: np.random.Generator):
        super().__init__()
        self.window = config.window
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.scale = 1.0 / np.sqrt(self.head_dim)
        c = config.channels
        self.proj_q = Linear(c, c, rng)
        self.proj_k = Linear(c, c, rng)
        self.proj_v = Linear(c, c, rng)
        self.proj_out = Linear(c, c, rng)
        table_len = (2 * config.window - 1) ** 2
        self.bias_table = Tensor(
            trunc_normal(rng, (table_len, config.heads)).astype(np.float32),
            requires_grad=True,
        )
        self.register_buffer("bias_index", _relative_index(config.window))

    def forward(
        self,
        windows: Tensor,
        d2: Tensor | None = None,
        mask: np.ndarray | None = None,
        return_attn: bool = False,
    ):
        """Attend within each window.

        Parameters
        ----------
        windows : [num_windows, M*M, C], grouped per image (an image's
            windows are contiguous rows).
        d2 : optional [N, C] per-image channel weights applied to V.
        mask : optional [windows_per_image, M*M, M*M] additive logits
            for shifted layers.
        return_attn : also return the softmax weights as an array.
        """
        bw, m2, c = windows.shape
        h, d = self.heads, self.head_dim
        q = F.transpose(F.reshape(self.proj_q(windows), (bw, m2, h, d)), (0, 2, 1, 3))
        k = F.transpose(F.reshape(self.proj_k(windows), (bw, m2, h, d)), (0, 2, 1, 3))
        v = self.proj_v(windows)
        if d2 is not None:
            n = d2.shape[0]
            per_image = bw // n
            v = F.reshape(v, (n, per_image * m2, c))
            v = F.mul(v, F.reshape(d2, (n, 1, c)))
            v = F.reshape(v, (bw, m2, c))
        v = F.transpose(F.reshape(v, (bw, m2, h, d)), (0, 2, 1, 3))

        logits = F.mul(F.matmul(q, F.transpose(k, (0, 1, 3, 2))), self.scale)
        bias = F.take_rows(self.bias_table, self.bias_index.reshape(-1))
        bias = F.transpose(F.reshape(bias, (m2, m2, h)), (2, 0, 1))
        logits = F.add(logits, F.reshape(bias, (1, h, m2, m2)))
        if mask is not None:
            nw = mask.shape[0]
            logits = F.reshape(logits, (bw // nw, nw, h, m2, m2))
            logits = F.add(logits, Tensor(mask[None, :, None].astype(logits.data.dtype)))
            logits = F.reshape(logits, (bw, h, m2, m2))
        attn = F.softmax(logits, axis=-1)
        out = F.matmul(attn, v)  # [bw, h, m2, d]
        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (bw, m2, c))
        out = self.proj_out(out)
        if return_attn:
            return out, attn.data
        return out


def _shift_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Additive attention mask for one shifted grid of an h x w image.

    After a cyclic shift, windows along the wrap-around edges contain
    pixels that were not neighbours; pairs from different pre-shift
    regions get a large negative logit.  Returns [num_windows, M*M, M*M]
    float32.
    """
    img = np.zeros((h, w), dtype=np.int64)
    cnt = 0
    spans = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    for hs in spans:
        for ws in spans:
            img[hs, ws] = cnt
            cnt += 1
    m = window
    regions = (
        img.reshape(h // m, m, w // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)
    )
    diff = regions[:, :, None] != regions[:, None, :]
    return np.where(diff, np.float32(MASK_FILL), np.float32(0.0))


class SwinLayer(Module):
    """Pre-norm transformer layer on [N, H, W, C] with windowed attention.

    ``shifted`` rolls the feature map by -M/2 before windowing (and back
    after), masking attention between tokens that wrapped around.
    """

    def __init__(self, config: DsatConfig, rng: np.random.Generator, shifted: bool):
        super().__init__()
        self.window = config.window
        self.shift = config.window // 2 if shifted else 0
        self.norm1 = LayerNorm(config.channels)
        self.attn = WindowAttention(config, rng)
        self.norm2 = LayerNorm(config.channels)
        self.mlp = Mlp(config.channels, int(config.channels * config.mlp_ratio), rng)
        self._mask_cache: dict[tuple[int, int], np.ndarray] = {}

    def _mask_for(self, h: int, w: int) -> np.ndarray | None:
        if self.shift == 0:
            return None
        key = (h, w)
        if key not in self._mask_cache:
            self._mask_cache[key] = _shift_mask(h, w, self.window, self.shift)
        return self._mask_cache[key]

    def forward(self, x: Tensor, d2: Tensor | None) -> Tensor:
        n, h, w, c = x.shape
        if h % self.window or w % self.window:
            raise ShapeError(f"feature size ({h}, {w}) not divisible by window {self.window}")
        shortcut = x
        x = self.norm1(x)
        if self.shift:
            x = F.cyclic_shift(x, -self.shift, -self.shift)
        windows = F.window_partition(x, self.window)
        attended = self.attn(windows, d2=d2, mask=self._mask_for(h, w))
        x = F.window_reverse(attended, self.window, h, w)
        if x.ndim == 3:  # single-image batch comes back without the batch axis
            x = F.reshape(x, (1, h, w, c))
        if self.shift:
            x = F.cyclic_shift(x, self.shift, self.shift)
        x = F.add(x, shortcut)
        return F.add(self.mlp(self.norm2(x)), x)


class Cmt(Module):
    """One mixed unit: degradation-aware conv, then a (shifted) window
    attention transformer layer whose values are degradation-weighted.

    ``mode`` at call time selects how modulation is sourced:
    "modulated" generates (D1, D2) from D, "identity" forces D1=0 and
    D2=1 (the modulation becomes a no-op by algebra, while executing
    the same ops), and "plain" skips the modulation computations
    entirely.  "identity" and "plain" must agree bit for bit.
    """

    def __init__(self, config: DsatConfig, rng: np.random.Generator, shifted: bool):
        super().__init__()
        self.config = config
        if config.dcl or config.attention_weights:
            self.modgen = ModulationGenerator(config, rng)
        self.stl = SwinLayer(config, rng, shifted)

    def forward(self, feat: Tensor, d: Tensor | None, mode: str = "modulated") -> Tensor:
        cfg = self.config
        use_dcl = cfg.dcl and mode != "plain"
        use_attn_w = cfg.attention_weights and mode != "plain"
        d1 = d2 = None
        if mode == "identity":
            n, c = feat.shape[0], cfg.channels
            if cfg.dcl:
                d1 = Tensor(np.zeros((n, c, 1, 3, 3), dtype=feat.data.dtype))
            if cfg.dcl or cfg.attention_weights:
                d2 = Tensor(np.ones((n, c), dtype=feat.data.dtype))
        elif mode == "modulated" and (cfg.dcl or cfg.attention_weights):
            if d is None:
                raise ConfigError("this model requires a degradation representation D")
            d1, d2 = self.modgen(d)
        if use_dcl:
            feat = dcl_forward(feat, d1, d2)
        t = F.transpose(feat, (0, 2, 3, 1))  # NCHW -> NHWC for attention
        t = self.stl(t, d2 if use_attn_w else None)
        return F.transpose(t, (0, 3, 1, 2))


class Drstb(Module):
    """Residual group: L mixed units, a closing 3x3 conv, plus the
    block-level residual connection back to the group input."""

    def __init__(self, config: DsatConfig, rng: np.random.Generator):
        super().__init__()
        for j in range(config.units_per_block):
            self.add_module(f"cmt{j + 1}", Cmt(config, rng, shifted=(j % 2 == 1)))
        self.conv = Conv2d(config.channels, config.channels, 3, rng)
        self._units = [getattr(self, f"cmt{j + 1}") for j in range(config.units_per_block)]

    def forward(self, feat: Tensor, d: Tensor | None, mode: str = "modulated") -> Tensor:
        x = feat
        for unit in self._units:
            x = unit(x, d, mode)
        return F.add(self.conv(x), feat)


class DsatModel(Module):
    """Full SR network mapping an LR image and its representation D to SR.

    Construction is deterministic given (config, rng); parameters are
    created in a fixed order so checkpoints are stable.
    """

    def __init__(self, config: DsatConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config.validate()
        c = config.channels
        self.shallow = Conv2d(config.in_channels, c, 3, rng)
        for i in range(config.num_blocks):
            self.add_module(f"block{i + 1}", Drstb(config, rng))
        self._blocks = [getattr(self, f"block{i + 1}") for i in range(config.num_blocks)]
        self.body_conv = Conv2d(c, c, 3, rng)
        # reconstruction: pixel-shuffle chain (two x2 stages for x4), final conv to RGB
        steps = (2, 2) if config.scale == 4 else (config.scale,)
        for i, step in enumerate(steps):
            self.add_module(f"up{i + 1}", Conv2d(c, c * step * step, 3, rng))
        self._up_steps = steps
        self.conv_last = Conv2d(c, config.in_channels, 3, rng)

    def shallow_extract(self, lq: Tensor) -> Tensor:
        """3x3 conv lifting [N, 3, H, W] to the trunk width C."""
        return self.shallow(lq)

    def forward(self, lq, d=None, mode: str = "modulated") -> Tensor:
        """Super-resolve a batch.

        Parameters
        ----------
        lq : Tensor or array, [N, 3, H, W] or [3, H, W], values in [0,1].
            H and W must be at least the window size; inputs are
            reflect-padded up to a window multiple and the output is
            cropped back to (s*H, s*W).
        d : Tensor or array [N, embed_dim] (or [embed_dim]); required
            unless both modulation sites are disabled or ``mode`` is
            "identity"/"plain".
        """
        if not isinstance(lq, Tensor):
            lq = Tensor(np.asarray(lq, dtype=np.float32))
        squeeze = lq.ndim == 3
        if squeeze:
            lq = F.reshape(lq, (1, *lq.shape))
        if lq.ndim != 4:
            raise ShapeError(f"expected [N, C, H, W] input, got shape {lq.shape}")
        n, _, h, w = lq.shape
        m = self.config.window
        if h < m or w < m:
            raise ShapeError(f"input ({h}, {w}) smaller than window {m}")
        if d is not None and not isinstance(d, Tensor):
            d = Tensor(np.asarray(d, dtype=np.float32))
        if d is not None and d.ndim == 1:
            d = F.reshape(d, (1, -1))

        pad_h = (m - h % m) % m
        pad_w = (m - w % m) % m
        if pad_h or pad_w:
            lq = F.pad_reflect2d(lq, (0, pad_h, 0, pad_w), axes=(2, 3))

        f0 = self.shallow_extract(lq)
        x = f0
        for block in self._blocks:
            x = block(x, d, mode)
        x = F.add(self.body_conv(x), f0)
        for i, step in enumerate(self._up_steps):
            x = F.pixel_shuffle(getattr(self, f"up{i + 1}")(x), step)
        sr = self.conv_last(x)
        s = self.config.scale
        if pad_h or pad_w:
            sr = F.slice_(sr, (slice(None), slice(None), slice(0, s * h), slice(0, s * w)))
        return F.reshape(sr, sr.shape[1:]) if squeeze else sr
