"""Nearest-vertex queries with an accelerated and a brute-force mode.

Both modes compute the final distances with the same expression
(``sqrt((dx*dx + dy*dy) + dz*dz)``) and rank candidates by the squared value
before the square root, so with ``tiebreak=True`` they select the same
vertex (lowest index among exact ties) and agree bitwise.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

_settings = {"brute_force": False, "workers": 1}

_BRUTE_CHUNK = 2048


def set_brute_force(enabled: bool) -> None:
    """Force every :class:`NearestIndex` built afterwards into oracle mode."""
    _settings["brute_force"] = bool(enabled)


def brute_force_enabled() -> bool:
    return _settings["brute_force"]


def set_workers(n: int) -> None:
    """Cap the number of worker threads used by tree queries."""
    _settings["workers"] = max(1, int(n))


def _squared(d: np.ndarray) -> np.ndarray:
    return (d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1]) + d[..., 2] * d[..., 2]


def point_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance with a fixed summation order."""
    return np.sqrt(_squared(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def brute_force_nearest(points: np.ndarray, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive nearest neighbour; the first minimum wins, i.e. lowest index."""
    points = np.asarray(points, dtype=np.float64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    idx = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), _BRUTE_CHUNK):
        q = queries[start:start + _BRUTE_CHUNK]
        d = q[:, None, :] - points[None, :, :]
        idx[start:start + len(q)] = np.argmin(_squared(d), axis=1)
    return point_distances(queries, points[idx]), idx


class NearestIndex:
    """Nearest-vertex lookup over a fixed 3D point set.

    Read-only after construction, so a single instance can serve concurrent
    queries.
    """

    def __init__(self, points: np.ndarray, brute_force: bool | None = None):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) == 0:
            raise ValueError("NearestIndex needs a nonempty (n, 3) point array")
        self.brute_force = brute_force_enabled() if brute_force is None else brute_force
        self._tree = None if self.brute_force else cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: np.ndarray, tiebreak: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(distances, indices)`` of the nearest point for each query."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if self._tree is None:
            return brute_force_nearest(self.points, queries)
        _, idx = self._tree.query(queries, k=1, workers=_settings["workers"])
        idx = np.asarray(idx, dtype=np.int64)
        dist = point_distances(queries, self.points[idx])
        if tiebreak:
            for i, (q, r) in enumerate(zip(queries, dist)):
                cand = self._tree.query_ball_point(q, r * (1.0 + 1e-9) + 1e-12)
                if len(cand) > 1:
                    cand = np.sort(np.asarray(cand, dtype=np.int64))
                    j = int(np.argmin(_squared(q[None, :] - self.points[cand])))
                    idx[i] = cand[j]
                    dist[i] = point_distances(q[None, :], self.points[cand[j]][None, :])[0]
        return dist, idx

    def nearest(self, point: np.ndarray) -> int:
        """Index of the nearest point, lowest index on ties."""
        _, idx = self.query(np.asarray(point, dtype=np.float64)[None, :], tiebreak=True)
        return int(idx[0])
