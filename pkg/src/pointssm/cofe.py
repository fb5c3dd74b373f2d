"""Collaborative feature enhancement: a grouped dual-path position gate.

Channels are split into g groups folded into the batch axis. Two parallel
paths process each group, a gated-normalization path (squeeze style pooled
gate, then group normalization) and a 3-wide convolution path. Each path is
compressed to a single channel across the group, softmaxed over positions,
and the two compressions interact crosswise to produce one sigmoid gate per
position that rescales the group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

GROUP_NORM_EPS = 1e-5


class ConfigError(ValueError):
    """Configuration violates a structural requirement."""


@dataclass
class CofeParams:
    gate_w: Tensor     # (C/g, C/g, 1) one-wide conv
    gate_b: Tensor     # (C/g,)
    conv3_w: Tensor    # (C/g, C/g, 3)
    conv3_b: Tensor    # (C/g,)
    gn_scale: Tensor   # (C/g,)
    gn_shift: Tensor   # (C/g,)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.gate_w", self.gate_w), (f"{prefix}.gate_b", self.gate_b),
                (f"{prefix}.conv3_w", self.conv3_w), (f"{prefix}.conv3_b", self.conv3_b),
                (f"{prefix}.gn_scale", self.gn_scale), (f"{prefix}.gn_shift", self.gn_shift)]


def init_cofe_params(dim: int, groups: int, rng: np.random.Generator) -> CofeParams:
    if dim % groups != 0:
        raise ConfigError(f"groups ({groups}) must divide channels ({dim})")
    cg = dim // groups
    return CofeParams(
        gate_w=Tensor(rng.normal(0.0, 1.0 / np.sqrt(cg), size=(cg, cg, 1)), requires_grad=True),
        gate_b=Tensor(np.zeros(cg), requires_grad=True),
        conv3_w=Tensor(rng.normal(0.0, 1.0 / np.sqrt(3 * cg), size=(cg, cg, 3)), requires_grad=True),
        conv3_b=Tensor(np.zeros(cg), requires_grad=True),
        gn_scale=Tensor(np.ones(cg), requires_grad=True),
        gn_shift=Tensor(np.zeros(cg), requires_grad=True),
    )


def group_reshape(x: Tensor, groups: int) -> Tensor:
    """(B, C, L) -> (B*g, C/g, L); a pure relabeling."""
    b, c, length = x.shape
    if c % groups != 0:
        raise ConfigError(f"groups ({groups}) must divide channels ({c})")
    return T.reshape(x, (b * groups, c // groups, length))


def group_unreshape(x: Tensor, groups: int) -> Tensor:
    bg, cg, length = x.shape
    return T.reshape(x, (bg // groups, cg * groups, length))


def _group_norm(x: Tensor, params: CofeParams) -> Tensor:
    # one group: normalize each (C/g, L) block jointly, affine per channel
    mu = x.mean(axis=(1, 2), keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    normed = centered / T.sqrt(var + GROUP_NORM_EPS)
    scale = T.reshape(params.gn_scale, (1, -1, 1))
    shift = T.reshape(params.gn_shift, (1, -1, 1))
    return normed * scale + shift


def gated_norm_path(x: Tensor, params: CofeParams) -> Tensor:
    """GN(x * sigmoid(conv1(avgpool(x)))) over a grouped (B*g, C/g, L) input."""
    pooled = x.mean(axis=-1, keepdims=True)                       # (B*g, C/g, 1)
    gate = T.sigmoid(T.conv1d(pooled, params.gate_w, 0)
                     + T.reshape(params.gate_b, (1, -1, 1)))
    return _group_norm(x * gate, params)


def conv_path(x: Tensor, params: CofeParams) -> Tensor:
    """3-wide convolution along the sequence, zero padded."""
    return T.conv1d(x, params.conv3_w, 1) + T.reshape(params.conv3_b, (1, -1, 1))


def compress(x: Tensor) -> Tensor:
    """Channel mean then softmax over positions -> (B*g, 1, L), rows sum to 1."""
    pooled = x.mean(axis=1, keepdims=True)
    return T.softmax(pooled, axis=-1)


def cross_interact(x1: Tensor, x2: Tensor) -> Tensor:
    """Position gate from crosswise products of compressed paths.

    Each path's (1, L) compression multiplies the other path's channel mean
    position-wise; the sum of both directions goes through a sigmoid, so the
    gate lies strictly inside (0, 1).
    """
    s12 = compress(x1) * x2.mean(axis=1, keepdims=True)
    s21 = compress(x2) * x1.mean(axis=1, keepdims=True)
    return T.sigmoid(s12 + s21)


def cofe_forward(x: Tensor, params: CofeParams, groups: int) -> Tensor:
    """Gate a (B, C, L) tensor groupwise; output shape equals input shape."""
    xg = group_reshape(x, groups)
    x1 = gated_norm_path(xg, params)
    x2 = conv_path(xg, params)
    gate = cross_interact(x1, x2)
    return group_unreshape(xg * gate, groups)
