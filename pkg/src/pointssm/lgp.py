"""Local geometric pooling with geometry-feature coupling.

Each patch token pulls the features of its nearest patch centers, normalizes
the offsets against the center feature, propagates them through a learned
affine map, multiplies in parameter-free Gaussian distance weights computed
on normalized center offsets, aggregates with a softmax-weighted average and
aligns channels with a shared MLP. The class token carries no geometry and
contributes zero from this block; it moves only through the residual path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .geometry import (PointCloud, knn, gaussian_weights, CapacityError,
                       PATCH_NORM_EPS)

FEATURE_NORM_EPS = 1e-5


@dataclass
class LgpParams:
    gamma: Tensor    # (2C,), ones at init
    beta: Tensor     # (2C,), zeros at init
    mlp_w1: Tensor   # (2C, C)
    mlp_b1: Tensor   # (C,)
    mlp_w2: Tensor   # (C, C)
    mlp_b2: Tensor   # (C,)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta),
                (f"{prefix}.mlp_w1", self.mlp_w1), (f"{prefix}.mlp_b1", self.mlp_b1),
                (f"{prefix}.mlp_w2", self.mlp_w2), (f"{prefix}.mlp_b2", self.mlp_b2)]


def init_lgp_params(dim: int, rng: np.random.Generator) -> LgpParams:
    return LgpParams(
        gamma=Tensor(np.ones(2 * dim), requires_grad=True),
        beta=Tensor(np.zeros(2 * dim), requires_grad=True),
        mlp_w1=Tensor(rng.normal(0.0, np.sqrt(2.0 / (2 * dim)), size=(2 * dim, dim)),
                      requires_grad=True),
        mlp_b1=Tensor(np.zeros(dim), requires_grad=True),
        mlp_w2=Tensor(rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, dim)),
                      requires_grad=True),
        mlp_b2=Tensor(np.zeros(dim), requires_grad=True),
    )


@dataclass
class LgpGeometry:
    """Per-sample token neighborhoods, fixed constants for the whole forward.

    ``neighbor_idx`` (B, L, K) indexes patch centers; ``weights`` (B, L, K, 1)
    are Gaussian distance weights on normalized center offsets. Both depend
    only on coordinates, so this struct carries zero trainable parameters.
    """

    neighbor_idx: np.ndarray
    weights: np.ndarray


def build_lgp_geometry(centers: np.ndarray, neighbors: int) -> LgpGeometry:
    """Token-level neighborhoods over patch centers.

    ``centers`` is (L, 3) or (B, L, 3). Each center's neighborhood is its
    ``neighbors`` nearest centers (itself included); weights are computed
    on offsets normalized per neighborhood, which keeps the whole geometric
    path invariant to global translation and uniform scaling.
    """
    c = np.asarray(centers, dtype=np.float64)
    single = c.ndim == 2
    if single:
        c = c[None]
    batch, num_centers, _ = c.shape
    if neighbors > num_centers:
        raise CapacityError(f"need {neighbors} neighbor centers, have {num_centers}")
    idx = np.empty((batch, num_centers, neighbors), dtype=np.int64)
    weights = np.empty((batch, num_centers, neighbors, 1))
    for b in range(batch):
        patches = knn(PointCloud(c[b]), np.arange(num_centers), neighbors)
        idx[b] = patches.neighbor_idx
        # normalize each neighborhood and map its own center through the
        # same affine transform, then weight by distance in normalized space
        mu = patches.neighbor_points.mean(axis=1, keepdims=True)
        dev = patches.neighbor_points - mu
        denom = np.sqrt((dev * dev).sum(-1).mean(-1) + PATCH_NORM_EPS)
        normalized = dev / denom[:, None, None]                     # (L, K, 3)
        center_norm = (patches.centers - mu[:, 0]) / denom[:, None]
        weights[b] = gaussian_weights(normalized, center_norm)
    if single:
        return LgpGeometry(idx[0], weights[0])
    return LgpGeometry(idx, weights)


def normalize_relative_features(f_k: Tensor, f_c: Tensor) -> Tensor:
    """Offsets f_k - f_c scaled to unit variance across the neighbor axis.

    ``f_k`` is (B, L, K, C), ``f_c`` is (B, L, C). Variance is the biased
    estimator per (center, channel); the eps guard keeps K = 1 finite.
    """
    df = f_k - T.reshape(f_c, f_c.shape[:2] + (1,) + f_c.shape[2:])
    v = T.reduce_variance(df, axis=2, keepdims=True)
    return df / T.sqrt(v + FEATURE_NORM_EPS)


def propagate_affine(f_k_norm: Tensor, f_c: Tensor, params: LgpParams) -> Tensor:
    """Concat(normalized neighbors, broadcast center) * gamma + beta -> (B, L, K, 2C)."""
    b, l, k, c = f_k_norm.shape
    center = T.expand(T.reshape(f_c, (b, l, 1, c)), (b, l, k, c))
    joint = T.concat([f_k_norm, center], axis=-1)
    return joint * params.gamma + params.beta


def couple_geometry(f_hat: Tensor, weights: np.ndarray) -> Tensor:
    """Multiply features by geometric weights, broadcast across channels."""
    return f_hat * Tensor(weights)


def softmax_aggregate(f_weighted: Tensor) -> Tensor:
    """Softmax-weighted average over the neighbor axis: sum_k f * softmax(f)."""
    return T.softmax_weighted_mean(f_weighted, axis=2)


def shared_mlp(x: Tensor, params: LgpParams) -> Tensor:
    h = T.relu(T.matmul(x, params.mlp_w1) + params.mlp_b1)
    return T.matmul(h, params.mlp_w2) + params.mlp_b2


def lgp_forward(tokens: Tensor, geometry: LgpGeometry, params: LgpParams) -> Tensor:
    """Apply local geometric pooling to the patch rows of a token sequence.

    ``tokens`` is (B, L+1, C) with the class token in row 0; the output has
    the same shape with a zero class row, so the enclosing residual leaves
    the class token untouched.
    """
    b, seq, c = tokens.shape
    patch_tokens = T.narrow(tokens, 1, 1, seq - 1)               # (B, L, C)
    f_k = T.gather_rows(patch_tokens, geometry.neighbor_idx)     # (B, L, K, C)
    f_norm = normalize_relative_features(f_k, patch_tokens)
    f_hat = propagate_affine(f_norm, patch_tokens, params)
    f_weighted = couple_geometry(f_hat, geometry.weights)
    agg = softmax_aggregate(f_weighted)                          # (B, L, 2C)
    out = shared_mlp(agg, params)                                # (B, L, C)
    cls_zero = Tensor(np.zeros((b, 1, c)))
    return T.concat([cls_zero, out], axis=1)
