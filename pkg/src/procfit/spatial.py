"""Exact nearest-neighbor index over a point cloud.

Backed by scipy's cKDTree, which performs exact (not approximate) searches;
every metric evaluation funnels through this index. The index is immutable
after construction and safe to share across chains.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Point3, PointCloud


class NNIndex:
    """Immutable exact nearest-neighbor index.

    Build with `NNIndex(cloud)`. Queries return true Euclidean nearest
    neighbors; ties are broken by the smallest point index.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise ValueError("empty query")
        self.source = cloud
        self._tree = cKDTree(cloud.points)

    def __len__(self) -> int:
        return len(self.source)

    def nearest(self, q) -> Tuple[int, float]:
        """Nearest stored point to a single probe: (point_index, distance)."""
        probe = q.to_array() if isinstance(q, Point3) else np.asarray(q, dtype=float)
        k = min(len(self), 4)
        dists, idxs = self._tree.query(probe, k=k)
        dists = np.atleast_1d(dists)
        idxs = np.atleast_1d(idxs)
        # kd-tree ordering among exactly equidistant points is unspecified;
        # pick the smallest index among them for determinism
        tied = idxs[dists == dists[0]]
        return int(tied.min()), float(dists[0])

    def nearest_distances(self, probes: np.ndarray) -> np.ndarray:
        """Vector of nearest distances for an (N, 3) probe array."""
        probes = np.asarray(probes, dtype=float)
        if probes.size == 0:
            return np.empty(0)
        d, _ = self._tree.query(probes)
        return d
