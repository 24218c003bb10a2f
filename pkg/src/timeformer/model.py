"""TimeFormer: multi-scale, patch-segmented forecaster built from MoSA blocks.

Per scale ``s`` the look-back window is average-pooled (kernel = stride = s),
embedded by a 1-D convolution, front-padded to ``P * K`` steps with
``P = K = ceil(sqrt(L_s))`` and cut into ``P`` patches. An intra-patch MoSA
stack treats time steps as tokens, a feed-forward net squeezes each patch to
one vector, an inter-patch MoSA stack treats patches as tokens, and a second
feed-forward net squeezes the scale to ``D_model``. Scale vectors are
concatenated and linearly projected to the horizon. Channels are processed
independently by the same weights.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .attention import MoSABlock, MoSAConfig
from .container import read_container, write_container
from .errors import ConfigurationError, DimensionError
from .nn import Conv1d, FeedForward, Linear, Module, make_rng
from .tensor import Tensor

VARIANTS = ("full", "no_segmentation", "standard_attention", "vanilla_transformer", "vanilla_transformer_mosa")
CHECKPOINT_KIND = "timeformer-model"


@dataclass
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    num_scales: int = 1
    d_model: int = 64
    num_heads: int = 4
    gamma: float = 0.1
    conv_kernel: int = 3
    ffn_hidden: int = 128
    variant: str = "full"
    depth: int = 1
    activation: str = "relu"
    sampling: bool = True
    mask_padding: bool = False
    renormalize_rows: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.num_scales < 1:
            raise ConfigurationError(f"num_scales must be >= 1, got {self.num_scales}")
        if self.lookback < self.num_scales:
            raise ConfigurationError(f"lookback {self.lookback} must be >= num_scales {self.num_scales}")
        if self.horizon < 1 or self.depth < 1 or self.ffn_hidden < 1:
            raise ConfigurationError("horizon, depth and ffn_hidden must be >= 1")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigurationError(f"conv_kernel must be odd, got {self.conv_kernel}")
        if not self.sampling and self.num_scales != 1:
            raise ConfigurationError("sampling=False only makes sense with num_scales=1")
        # validates heads / gamma
        self.attention_config()

    def attention_config(self) -> MoSAConfig:
        if self.variant in ("standard_attention", "vanilla_transformer"):
            return MoSAConfig.standard(self.d_model, self.num_heads)
        return MoSAConfig(model_dim=self.d_model, num_heads=self.num_heads, gamma=self.gamma,
                          renormalize_rows=self.renormalize_rows)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def scale_length(lookback: int, s: int) -> int:
    """Steps at scale ``s``: pooling drops the trailing remainder."""
    return (lookback - s) // s + 1


def patch_geometry(length: int) -> tuple[int, int, int]:
    """``(P, K, pad_len)`` with ``P = K = ceil(sqrt(length))``."""
    if length < 1:
        raise DimensionError(f"sequence length must be >= 1, got {length}")
    k = math.isqrt(length - 1) + 1
    return k, k, k * k - length


def multi_scale_sample(x, num_scales: int) -> list[Tensor]:
    """Average-pooled copies of ``x[..., L]`` at scales ``1..num_scales``."""
    if num_scales < 1:
        raise ConfigurationError(f"num_scales must be >= 1, got {num_scales}")
    x = T.as_tensor(x)
    if x.shape[-1] < num_scales:
        raise DimensionError(f"lookback {x.shape[-1]} shorter than num_scales {num_scales}")
    return [x if s == 1 else T.avg_pool1d(x, s, s) for s in range(1, num_scales + 1)]


@dataclass
class PatchSet:
    tensor: Tensor  # [..., P, K, D]
    pad_len: int

    @property
    def num_patches(self) -> int:
        return self.tensor.shape[-3]

    @property
    def patch_len(self) -> int:
        return self.tensor.shape[-2]


def segment(x: Tensor) -> PatchSet:
    """Front-pad ``x[..., L, D]`` with zeros and split it into ``P`` patches of ``K`` steps."""
    length = x.shape[-2]
    p, k, pad = patch_geometry(length)
    padded = T.pad_front(x, pad, axis=x.ndim - 2)
    return PatchSet(padded.reshape(x.shape[:-2] + (p, k, x.shape[-1])), pad)


def _pad_key_mask(length: int) -> Optional[np.ndarray]:
    p, k, pad = patch_geometry(length)
    if pad == 0:
        return None
    keep = np.ones(p * k)
    keep[:pad] = 0.0
    return keep.reshape(p, 1, 1, k)  # broadcast over heads and queries


class ScaleBranch(Module):
    """Embedding, segmentation, intra-patch and inter-patch stages for one scale."""

    def __init__(self, length: int, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.length = length
        self.segmented = cfg.variant != "no_segmentation"
        d = cfg.d_model
        att = cfg.attention_config()
        self.embedding = Conv1d(1, d, cfg.conv_kernel, rng)
        self.mask_padding = cfg.mask_padding
        if self.segmented:
            p, k, _ = patch_geometry(length)
            self.intra = [MoSABlock(att, rng) for _ in range(cfg.depth)]
            self.intra_ffn = FeedForward(k * d, cfg.ffn_hidden, d, rng, cfg.activation)
            self.inter = [MoSABlock(att, rng) for _ in range(cfg.depth)]
            self.inter_ffn = FeedForward(p * d, cfg.ffn_hidden, d, rng, cfg.activation)
        else:
            self.blocks = [MoSABlock(att, rng) for _ in range(cfg.depth)]
            self.ffn = FeedForward(length * d, cfg.ffn_hidden, d, rng, cfg.activation)

    def embed(self, x: Tensor) -> Tensor:
        """``[B, L_s] -> [B, L_s, D]``."""
        return self.embedding(x.reshape(x.shape + (1,)))

    def intra_patch(self, patches: PatchSet) -> Tensor:
        """``[B, P, K, D] -> [B, P, D]``."""
        b, p, k, d = patches.tensor.shape
        h = patches.tensor.reshape(b * p, k, d)
        key_mask = None
        if self.mask_padding and patches.pad_len:
            key_mask = np.tile(_pad_key_mask(self.length), (b, 1, 1, 1))
        for block in self.intra:
            h = block(h, key_mask)
        return self.intra_ffn(h.reshape(b, p, k * d))

    def inter_patch(self, h: Tensor) -> Tensor:
        """``[B, P, D] -> [B, D]``."""
        for block in self.inter:
            h = block(h)
        return self.inter_ffn(T.flatten(h, 1))

    def forward(self, x: Tensor) -> Tensor:
        emb = self.embed(x)
        if not self.segmented:
            h = emb
            for block in self.blocks:
                h = block(h)
            return self.ffn(T.flatten(h, 1))
        return self.inter_patch(self.intra_patch(segment(emb)))

    def attention_blocks(self, stage: str) -> list[MoSABlock]:
        if not self.segmented:
            return self.blocks
        if stage == "intra":
            return self.intra
        if stage == "inter":
            return self.inter
        raise ConfigurationError(f"unknown stage {stage!r}; use 'intra' or 'inter'")


class Forecaster(Module):
    """Common channel-independent wrapper: ``[B, L_h, N] -> [B, L_f, N]``."""

    config: ModelConfig

    def forward(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim == 2:
            return self.forward(x.reshape((1,) + x.shape)).reshape(self.config.horizon, x.shape[1])
        if x.ndim != 3:
            raise DimensionError(f"expected [B, L_h, N] input, got {x.shape}")
        b, length, n = x.shape
        if n == 0:
            raise DimensionError("input has zero channels")
        if length != self.config.lookback:
            raise DimensionError(f"lookback mismatch: model expects {self.config.lookback}, got {length}")
        series = T.transpose(x, (0, 2, 1)).reshape(b * n, length)
        out = self.forward_univariate(series)  # [B*N, L_f]
        return T.transpose(out.reshape(b, n, self.config.horizon), (0, 2, 1))

    def forecast(self, x) -> np.ndarray:
        """Eval-mode forecast without graph recording."""
        was = self.training
        self.eval()
        try:
            with T.no_grad():
                return self.forward(x).data
        finally:
            self.train(was)


class TimeFormer(Forecaster):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = make_rng(seed)
        self.lengths = [scale_length(config.lookback, s) for s in range(1, config.num_scales + 1)]
        self.branches = [ScaleBranch(length, config, rng) for length in self.lengths]
        self.projection = Linear(config.num_scales * config.d_model, config.horizon, rng)

    def forward_univariate(self, series: Tensor) -> Tensor:
        scales = multi_scale_sample(series, self.config.num_scales) if self.config.sampling else [series]
        z = [branch(xs) for branch, xs in zip(self.branches, scales)]
        return self.projection(z[0] if len(z) == 1 else T.concat(z, axis=-1))


class VanillaTransformer(Forecaster):
    """Encoder-only, one token per time step; attention is standard or MoSA."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = make_rng(seed)
        d = config.d_model
        self.embedding = Conv1d(1, d, config.conv_kernel, rng)
        self.blocks = [MoSABlock(config.attention_config(), rng) for _ in range(config.depth)]
        self.projection = Linear(config.lookback * d, config.horizon, rng)

    def forward_univariate(self, series: Tensor) -> Tensor:
        h = self.embedding(series.reshape(series.shape + (1,)))
        for block in self.blocks:
            h = block(h)
        return self.projection(T.flatten(h, 1))

    def attention_blocks(self, stage: str = "inter") -> list[MoSABlock]:
        return self.blocks


def build_variant(config: ModelConfig, seed: int = 0) -> Forecaster:
    if config.variant in ("vanilla_transformer", "vanilla_transformer_mosa"):
        return VanillaTransformer(config, seed)
    if config.variant in ("full", "no_segmentation", "standard_attention"):
        return TimeFormer(config, seed)
    raise ConfigurationError(f"unknown variant {config.variant!r}")


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count for ``build_variant(config)``."""
    d, h = config.d_model, config.ffn_hidden
    block = 4 * d * d + 2 * d
    conv = config.conv_kernel * d + d

    def ffn(n_in):
        return n_in * h + h + h * d + d

    if config.variant.startswith("vanilla"):
        return conv + config.depth * block + config.lookback * d * config.horizon + config.horizon
    total = 0
    for s in range(1, config.num_scales + 1):
        length = scale_length(config.lookback, s)
        if config.variant == "no_segmentation":
            total += conv + config.depth * block + ffn(length * d)
        else:
            p, k, _ = patch_geometry(length)
            total += conv + 2 * config.depth * block + ffn(k * d) + ffn(p * d)
    return total + config.num_scales * d * config.horizon + config.horizon


def save_checkpoint(path, model: Forecaster, norm_mean=None, norm_std=None, extra: Optional[dict] = None) -> None:
    arrays = dict(model.state_dict())
    if norm_mean is not None:
        arrays["__norm__.mean"] = np.asarray(norm_mean, dtype=np.float64)
        arrays["__norm__.std"] = np.asarray(norm_std, dtype=np.float64)
    header = {"kind": CHECKPOINT_KIND, "config": model.config.to_dict(), "seed": int(model.seed)}
    if extra:
        header["extra"] = extra
    write_container(path, header, arrays)


def load_checkpoint(path):
    """Returns ``(model, norm_mean, norm_std, header)``."""
    header, arrays = read_container(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise ConfigurationError(f"{path}: not a model checkpoint (kind={header.get('kind')!r})")
    config = ModelConfig.from_dict(header["config"])
    model = build_variant(config, seed=header.get("seed", 0))
    mean = arrays.pop("__norm__.mean", None)
    std = arrays.pop("__norm__.std", None)
    model.load_state_dict(arrays)
    return model, mean, std, header
