"""Similarity metrics between sampled models and query point clouds.

Implements the rigid partial-similarity family (MM, SMM, WMM) together
with the distance/overlap baselines used for comparison: one-sided and
symmetric Hausdorff distances, voxel difference, query-to-model OHD, and
inlier ratio.

A model enters metric evaluation as a SampledModel: center samples that
each carry the area of the cell they represent. Distances are exact
nearest-neighbor distances against the query index.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .geometry import Point3, PointCloud, SubModel, divide_arrays, sample_uniform
from .spatial import NNIndex


@dataclass(frozen=True)
class MetricConfig:
    """Tunables shared by the metric family.

    epsilon guards every denominator (never zero); h is the WMM weighting
    factor; vd_resolution is the voxel side for VD; ir_threshold is the
    inlier distance for IR (None: fall back to the query's resolution
    hint, then to its median nearest-neighbor spacing).
    """

    epsilon: float = 1e-8
    h: float = 2.5
    vd_resolution: float = 0.04
    ir_threshold: Optional[float] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.h < 0:
            raise ValueError("h must be non-negative")
        if not self.vd_resolution > 0:
            raise ValueError("vd_resolution must be positive")


@dataclass(frozen=True)
class SimilarityValue:
    value: float
    metric: str
    level: Optional[int] = None


class SampledModel:
    """Center samples of a divided model, each carrying its cell area.

    Build from primitives either by dividing level (`from_primitives`) or
    by grid-sampling resolution (`from_sampling`, cell area = resolution^2).
    """

    def __init__(self, centers: np.ndarray, measures: np.ndarray, level: Optional[int] = None):
        centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        measures = np.asarray(measures, dtype=float).reshape(-1)
        if centers.shape[0] != measures.shape[0]:
            raise ValueError("centers and measures must have equal length")
        if np.any(measures < 0):
            raise ValueError("measures must be non-negative")
        self.centers = centers
        self.measures = measures
        self.level = level

    @classmethod
    def from_primitives(cls, primitives, eta: int) -> "SampledModel":
        parts = [divide_arrays(p, eta) for p in primitives]
        if not parts:
            return cls(np.empty((0, 3)), np.empty(0), level=eta)
        centers = np.concatenate([c for c, _, _ in parts])
        measures = np.concatenate([m for _, m, _ in parts])
        return cls(centers, measures, level=eta)

    @classmethod
    def from_sampling(cls, primitives, resolution: float, seed=None) -> "SampledModel":
        clouds = [sample_uniform(p, resolution, seed=seed) for p in primitives]
        pts = [c.points for c in clouds if len(c)]
        if not pts:
            return cls(np.empty((0, 3)), np.empty(0))
        centers = np.concatenate(pts)
        return cls(centers, np.full(centers.shape[0], resolution ** 2))

    @property
    def total_measure(self) -> float:
        return float(self.measures.sum())

    @property
    def submodels(self) -> List[SubModel]:
        return [
            SubModel(center=Point3(*c), measure=float(m), cell_id=(self.level, i))
            for i, (c, m) in enumerate(zip(self.centers, self.measures))
        ]

    def __len__(self) -> int:
        return self.centers.shape[0]


def _require_nondegenerate(m: SampledModel):
    if len(m) == 0 or m.total_measure <= 0:
        raise ValueError("degenerate model: no sub-models with positive measure")


# =============================================================================
# HAUSDORFF DISTANCES
# =============================================================================


def ohd_points(P: PointCloud, idx: NNIndex) -> float:
    """One-sided Hausdorff distance from the points of P to the indexed cloud."""
    if len(P) == 0:
        raise ValueError("empty point set")
    return float(idx.nearest_distances(P.points).max())


def shd(P: PointCloud, P2: PointCloud) -> float:
    """Symmetric Hausdorff distance: max of the two one-sided distances."""
    return max(ohd_points(P, NNIndex(P2)), ohd_points(P2, NNIndex(P)))


# =============================================================================
# MEAN-MEASURE FAMILY
# =============================================================================


def mm(M: SampledModel, idx: NNIndex, cfg: MetricConfig) -> SimilarityValue:
    """Mean Measure: |M| / (epsilon + OHD from model samples to query)."""
    _require_nondegenerate(M)
    d = idx.nearest_distances(M.centers).max()
    return SimilarityValue(M.total_measure / (cfg.epsilon + d), "MM", M.level)


def smm(M: SampledModel, idx: NNIndex, cfg: MetricConfig) -> SimilarityValue:
    """Squared Mean Measure: |M| / (epsilon + OHD^2)."""
    _require_nondegenerate(M)
    d = idx.nearest_distances(M.centers).max()
    return SimilarityValue(M.total_measure / (cfg.epsilon + d * d), "SMM", M.level)


def wmm(M: SampledModel, idx: NNIndex, cfg: MetricConfig) -> SimilarityValue:
    """Weighted Mean Measure.

    Each sub-model i at nearest distance d_i gets weight
    w_i = exp(-d_i * h); the similarity is

        sum_i(w_i |M_i|) / (epsilon + sum_i(w_i d_i) / sum_i(w_i))

    With h = 0 all weights are 1 and this reduces to measure over mean
    distance (a full-similarity metric).
    """
    _require_nondegenerate(M)
    d = idx.nearest_distances(M.centers)
    w = np.exp(-d * cfg.h)
    wsum = w.sum()
    d_w = float(np.dot(w, d) / wsum)
    value = float(np.dot(w, M.measures)) / (cfg.epsilon + d_w)
    return SimilarityValue(value, "WMM", M.level)


# =============================================================================
# BASELINES
# =============================================================================


def ohdqm(Q: PointCloud, model_idx: NNIndex) -> float:
    """OHD from the query to the model samples (negate for a similarity)."""
    return ohd_points(Q, model_idx)


def vd(M: SampledModel, Q: PointCloud, cfg: MetricConfig) -> float:
    """Voxel difference count between model samples and query.

    Both sets are voxelized on a shared grid whose origin is the floored
    minimum corner of their joint bounding box, with cubic cells of side
    vd_resolution. Returns |occupied(M) symmetric-difference occupied(Q)|;
    the similarity used in comparisons is the negation. An empty model is
    legal here (occupies nothing).
    """
    res = cfg.vd_resolution
    q = Q.points
    if len(M):
        corner = np.floor(np.minimum(q.min(axis=0), M.centers.min(axis=0)))
        mvox = set(map(tuple, np.floor((M.centers - corner) / res).astype(np.int64)))
    else:
        corner = np.floor(q.min(axis=0))
        mvox = set()
    qvox = set(map(tuple, np.floor((q - corner) / res).astype(np.int64)))
    return float(len(mvox ^ qvox))


def ir(model_idx: NNIndex, Q: PointCloud, cfg: MetricConfig) -> float:
    """Inlier ratio: fraction of query points within threshold of the model."""
    thr = cfg.ir_threshold
    if thr is None:
        thr = Q.resolution_hint
    if thr is None:
        thr = median_nn_spacing(Q)
    d = model_idx.nearest_distances(Q.points)
    return float(np.mean(d <= thr))


def median_nn_spacing(Q: PointCloud) -> float:
    """Median distance from each point to its nearest other point."""
    if len(Q) < 2:
        raise ValueError("need at least 2 points to estimate spacing")
    from scipy.spatial import cKDTree

    d, _ = cKDTree(Q.points).query(Q.points, k=2)
    return float(np.median(d[:, 1]))


# =============================================================================
# CURVE NORMALIZATION
# =============================================================================


def normalize_curve(values: Sequence[float]) -> List[float]:
    """Min-max normalize a similarity curve to [0, 1]; argmax-preserving.

    An all-equal curve maps to all 0.5 and raises a "flat curve" warning.
    """
    vals = [float(v) for v in values]
    if len(vals) < 2:
        raise ValueError("need at least 2 values to normalize")
    lo, hi = min(vals), max(vals)
    if hi == lo:
        warnings.warn("flat curve", stacklevel=2)
        return [0.5] * len(vals)
    return [(v - lo) / (hi - lo) for v in vals]
