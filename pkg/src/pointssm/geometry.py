"""Deterministic point cloud structuring.

Centroid selection and neighborhood extraction are canonicalized so the
result is a pure function of the point multiset: the cloud is first sorted
lexicographically by (x, y, z), greedy max-min selection starts from the
lexicographically smallest point, and all distance ties break toward the
lower canonical index. Permuting the input therefore never changes which
coordinates are selected or how patches are ordered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATCH_NORM_EPS = 1e-5


class CapacityError(ValueError):
    """Requested more samples or neighbors than the cloud holds."""


@dataclass
class PointCloud:
    """N x 3 coordinates with an optional class label."""

    points: np.ndarray
    label: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class PatchSet:
    """L patch centers with their K nearest neighbors.

    ``center_idx`` and ``neighbor_idx`` index the original cloud; neighbors
    are ordered ascending by (distance, canonical index), so each patch
    starts with its own center.
    """

    center_idx: np.ndarray      # (L,)
    centers: np.ndarray         # (L, 3)
    neighbor_idx: np.ndarray    # (L, K)
    neighbor_points: np.ndarray  # (L, K, 3)


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Stable permutation sorting rows lexicographically by (x, y, z)."""
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0]))


def farthest_point_sampling(cloud: PointCloud, count: int) -> np.ndarray:
    """Greedy max-min centroid selection, returned in selection order.

    The first pick is the lexicographically smallest coordinate triple and
    every later pick maximizes the distance to the chosen set, ties broken
    by lowest canonical index.
    """
    pts = cloud.points
    n = len(cloud)
    if not 1 <= count <= n:
        raise CapacityError(f"cannot sample {count} centers from {n} points")
    order = canonical_order(pts)
    canon = pts[order]
    selected = [0]
    d2 = ((canon - canon[0]) ** 2).sum(axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(d2))  # argmax takes the first (lowest index) max
        selected.append(nxt)
        d2 = np.minimum(d2, ((canon - canon[nxt]) ** 2).sum(axis=1))
    return order[np.asarray(selected)]


def knn(cloud: PointCloud, center_idx: np.ndarray, k: int) -> PatchSet:
    """K nearest neighbors in the cloud around each given center point."""
    pts = cloud.points
    n = len(cloud)
    if not 1 <= k <= n:
        raise CapacityError(f"cannot take {k} neighbors from {n} points")
    center_idx = np.asarray(center_idx, dtype=np.int64)
    order = canonical_order(pts)
    canon = pts[order]
    ranks = np.arange(n)
    neighbor_canon = np.empty((len(center_idx), k), dtype=np.int64)
    for i, ci in enumerate(center_idx):
        d2 = ((canon - pts[ci]) ** 2).sum(axis=1)
        neighbor_canon[i] = np.lexsort((ranks, d2))[:k]
    neighbor_idx = order[neighbor_canon]
    return PatchSet(
        center_idx=center_idx,
        centers=pts[center_idx],
        neighbor_idx=neighbor_idx,
        neighbor_points=pts[neighbor_idx],
    )


def build_patches(cloud: PointCloud, num_groups: int, group_size: int) -> PatchSet:
    """FPS then KNN, the standard grouping pass."""
    centers = farthest_point_sampling(cloud, num_groups)
    return knn(cloud, centers, group_size)


def normalize_patch(patch_points: np.ndarray) -> np.ndarray:
    """Center a patch and divide by its root mean squared spread.

    p_j -> (p_j - mu) / sqrt(mean_k ||p_k - mu||^2 + eps). The output is
    translation invariant exactly and scale invariant up to the eps guard;
    a fully degenerate (all-coincident) patch maps to zeros.

    Accepts (..., K, 3) and normalizes each trailing patch independently.
    """
    pts = np.asarray(patch_points, dtype=np.float64)
    mu = pts.mean(axis=-2, keepdims=True)
    dev = pts - mu
    msq = (dev * dev).sum(axis=-1).mean(axis=-1)
    return dev / np.sqrt(msq + PATCH_NORM_EPS)[..., None, None]


def gaussian_weights(patch_points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Distance-decay weights w_i = exp(-||p_i - c||), shape (..., K, 1).

    A pure function of coordinates; there is nothing trainable here.
    """
    pts = np.asarray(patch_points, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    d = np.linalg.norm(pts - c[..., None, :], axis=-1)
    return np.exp(-d)[..., None]
