"""Modulated self-attention (MoSA).

Softmax attention whose weights are multiplied by a Hawkes-style
exponential decay in the token gap and then zeroed above the diagonal, so a
token only aggregates itself and earlier tokens, with older tokens
attenuated. With ``hawkes=False`` and ``causal=False`` the block is ordinary
multi-head self-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .nn import BatchNorm, Linear, Module, uniform_init
from .tensor import Tensor


@dataclass
class MoSAConfig:
    model_dim: int = 64
    num_heads: int = 4
    gamma: float = 0.1
    causal: bool = True
    hawkes: bool = True
    mu: float = 0.0
    epsilon: float = 1.0
    renormalize_rows: bool = False

    def __post_init__(self):
        if self.model_dim < 1 or self.num_heads < 1:
            raise ConfigurationError("model_dim and num_heads must be >= 1")
        if self.model_dim % self.num_heads:
            raise ConfigurationError(f"num_heads={self.num_heads} does not divide model_dim={self.model_dim}")
        if self.gamma < 0:
            raise ConfigurationError(f"decay rate gamma must be >= 0, got {self.gamma}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def value_dim(self) -> int:
        return self.head_dim

    @classmethod
    def standard(cls, model_dim: int = 64, num_heads: int = 4) -> "MoSAConfig":
        """Plain self-attention: no decay, no mask."""
        return cls(model_dim=model_dim, num_heads=num_heads, gamma=0.0, causal=False, hawkes=False)


@dataclass
class AttentionMatrix:
    """Per-head ``[T, T]`` attention weights after modulation and masking."""

    values: np.ndarray
    token_positions: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.token_positions is None:
            self.token_positions = np.arange(self.values.shape[-1])

    def head(self, h: int) -> np.ndarray:
        return self.values[h]


@lru_cache(maxsize=256)
def _hawkes_cached(length: int, gamma: float, mu: float, epsilon: float) -> np.ndarray:
    idx = np.arange(length)
    gap = np.abs(idx[:, None] - idx[None, :])
    out = mu + epsilon * np.exp(-gamma * gap)
    out.setflags(write=False)
    return out


def hawkes_modulation(length: int, gamma: float, mu: float = 0.0, epsilon: float = 1.0) -> np.ndarray:
    """``Omega[i, j] = mu + epsilon * exp(-gamma * |i - j|)`` for integer token positions."""
    if length < 1:
        raise DimensionError(f"sequence length must be >= 1, got {length}")
    if gamma < 0:
        raise ConfigurationError(f"decay rate gamma must be >= 0, got {gamma}")
    return _hawkes_cached(int(length), float(gamma), float(mu), float(epsilon))


@lru_cache(maxsize=256)
def causal_mask(length: int) -> np.ndarray:
    out = np.tril(np.ones((length, length)))
    out.setflags(write=False)
    return out


@lru_cache(maxsize=256)
def _modulation_cached(length: int, gamma: float, mu: float, epsilon: float, hawkes: bool, causal: bool):
    m = hawkes_modulation(length, gamma, mu, epsilon).copy() if hawkes else np.ones((length, length))
    if causal:
        m *= causal_mask(length)
    m.setflags(write=False)
    return m


def modulation_matrix(length: int, config: MoSAConfig) -> np.ndarray:
    """Combined multiplicative factor (decay times mask) applied to softmax weights."""
    return _modulation_cached(int(length), float(config.gamma), float(config.mu), float(config.epsilon),
                              bool(config.hawkes), bool(config.causal))


@lru_cache(maxsize=256)
def _causal_keep(length: int) -> np.ndarray:
    out = np.tri(length, dtype=bool)
    out.setflags(write=False)
    return out


def _scores(q: Tensor, k: Tensor, d: int) -> Tensor:
    if q.shape[-2] == 0:
        raise DimensionError("attention over zero tokens")
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"query/key dims differ: {q.shape} vs {k.shape}")
    return T.scale(T.matmul(q, T.transpose_last2(k)), 1.0 / math.sqrt(d))


def raw_attention(q: Tensor, k: Tensor, d: int, causal: bool = False) -> Tensor:
    """Row-wise softmax of ``q k^T / sqrt(d)``.

    With ``causal`` the normalizer of row ``i`` only covers keys ``j <= i``, so
    later tokens cannot leak into earlier rows through the denominator.
    """
    scores = _scores(q, k, d)
    if causal and q.shape[-2] != k.shape[-2]:
        raise DimensionError("causal attention needs as many queries as keys")
    return T.modulated_softmax(scores, keep=_causal_keep(q.shape[-2]) if causal else None)


def mosa_weights(q: Tensor, k: Tensor, config: MoSAConfig) -> Tensor:
    """Modulated and masked attention weights in one fused kernel.

    Same values as ``apply_modulation_and_mask(raw_attention(...), ...)``.
    """
    scores = _scores(q, k, q.shape[-1])
    length = q.shape[-2]
    if config.causal and k.shape[-2] != length:
        raise DimensionError("causal attention needs as many queries as keys")
    factor = modulation_matrix(length, config) if (config.hawkes or config.causal) else None
    return T.modulated_softmax(scores, factor, _causal_keep(length) if config.causal else None)


def apply_modulation_and_mask(
    attn: Tensor,
    omega: Optional[np.ndarray],
    causal: bool,
    renormalize_rows: bool = False,
    key_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Multiply softmax weights by ``omega`` and zero entries above the diagonal.

    Masking happens after the softmax, so kept rows are not renormalized
    unless ``renormalize_rows`` is set. ``key_mask`` (broadcastable to the
    attention shape, 1 = keep) removes individual keys, e.g. padding.
    """
    length = attn.shape[-1]
    if attn.shape[-2] != length:
        raise DimensionError(f"attention matrix must be square, got {attn.shape}")
    factor = np.ones((length, length)) if omega is None else np.asarray(omega)
    if factor.shape != (length, length):
        raise DimensionError(f"modulation shape {factor.shape} does not match attention {attn.shape}")
    if causal:
        factor = factor * causal_mask(length)
    if key_mask is not None:
        factor = factor * key_mask
    out = T.mul(attn, Tensor(factor))
    if renormalize_rows:
        out = T.div(out, T.add(out.sum(axis=-1, keepdims=True), 1e-12))
    return out


def aggregate(weights: Tensor, v: Tensor) -> Tensor:
    """``out[t] = sum_tau weights[t, tau] * v[tau]``."""
    if weights.shape[-1] != v.shape[-2]:
        raise DimensionError(f"weights {weights.shape} and values {v.shape} disagree on token count")
    return T.matmul(weights, v)


class MoSABlock(Module):
    """Multi-head MoSA + output projection + residual + batch normalization (post-norm).

    Input ``[B, T, F]``; when ``F != model_dim`` an input projection maps it to
    ``model_dim`` first so the residual is well defined. The most recent
    attention weights are kept on ``last_attention`` (shape ``[B, H, T, T]``).
    """

    def __init__(self, config: MoSAConfig, rng: np.random.Generator, in_dim: Optional[int] = None):
        super().__init__()
        self.config = config
        d_model = config.model_dim
        self.in_dim = d_model if in_dim is None else in_dim
        self.input_proj = Linear(self.in_dim, d_model, rng) if self.in_dim != d_model else None
        width = config.num_heads * config.head_dim
        self.w_q = uniform_init(rng, (d_model, width), d_model)
        self.w_k = uniform_init(rng, (d_model, width), d_model)
        self.w_v = uniform_init(rng, (d_model, config.num_heads * config.value_dim), d_model)
        self.w_o = uniform_init(rng, (config.num_heads * config.value_dim, d_model), config.num_heads * config.value_dim)
        self.norm = BatchNorm(d_model)
        self.last_attention: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor, dim: int) -> Tensor:
        b, t, _ = x.shape
        return T.transpose(x.reshape(b, t, self.config.num_heads, dim), (0, 2, 1, 3))

    def project_qkv(self, x: Tensor):
        """Per-head queries, keys and values, each ``[B, H, T, d]``."""
        if x.ndim != 3 or x.shape[-1] != self.config.model_dim:
            raise DimensionError(f"expected [B, T, {self.config.model_dim}], got {x.shape}")
        c = self.config
        q = self._split_heads(T.matmul(x, self.w_q), c.head_dim)
        k = self._split_heads(T.matmul(x, self.w_k), c.head_dim)
        v = self._split_heads(T.matmul(x, self.w_v), c.value_dim)
        return q, k, v

    def attend(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """Concatenated head outputs before the output projection, ``[B, T, H*d_m]``."""
        c = self.config
        q, k, v = self.project_qkv(x)
        length = x.shape[1]
        if key_mask is None and not c.renormalize_rows:
            weights = mosa_weights(q, k, c)
        else:
            attn = raw_attention(q, k, c.head_dim, causal=c.causal)
            weights = apply_modulation_and_mask(attn, modulation_matrix(length, c), causal=False,
                                                renormalize_rows=c.renormalize_rows, key_mask=key_mask)
        self.last_attention = weights.data
        out = aggregate(weights, v)
        b = x.shape[0]
        return T.transpose(out, (0, 2, 1, 3)).reshape(b, length, c.num_heads * c.value_dim)

    def forward(self, x: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 3:
            raise DimensionError(f"MoSA block expects [B, T, F], got {x.shape}")
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"MoSA block expects feature dim {self.in_dim}, got {x.shape[-1]}")
        if self.input_proj is not None:
            x = self.input_proj(x)
        heads = self.attend(x, key_mask)
        return self.norm(T.add(x, T.matmul(heads, self.w_o)))

    def attention_matrix(self, batch_index: int = 0) -> AttentionMatrix:
        if self.last_attention is None:
            raise ConfigurationError("no forward pass has been run on this block yet")
        return AttentionMatrix(np.array(self.last_attention[batch_index]))
