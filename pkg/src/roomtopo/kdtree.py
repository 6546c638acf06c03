"""Small exact k-d tree for nearest-neighbour distance queries."""

from __future__ import annotations

import numpy as np


class KDTree:
    """Static k-d tree over an (n, k) array.

    Splits on the axis of largest spread at the median. Leaves hold up to
    ``leaf_size`` points and are scanned with numpy. Queries are exact.
    """

    def __init__(self, points, leaf_size: int = 16):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or len(pts) == 0:
            raise ValueError("KDTree needs a non-empty (n, k) array")
        self.points = pts
        self.leaf_size = max(1, int(leaf_size))
        # node arrays; leaves have axis == -1 and own points[start:stop] of self._order
        self._axis: list[int] = []
        self._split: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._start: list[int] = []
        self._stop: list[int] = []
        order = np.arange(len(pts))
        self._order = order
        self._build(0, len(pts))
        self._leaf_pts = pts[self._order]

    def __len__(self) -> int:
        return len(self.points)

    def _new_node(self) -> int:
        for lst, val in ((self._axis, -1), (self._split, 0.0), (self._left, -1),
                         (self._right, -1), (self._start, 0), (self._stop, 0)):
            lst.append(val)
        return len(self._axis) - 1

    def _build(self, start: int, stop: int) -> int:
        node = self._new_node()
        self._start[node], self._stop[node] = start, stop
        if stop - start <= self.leaf_size:
            return node
        idx = self._order[start:stop]
        sub = self.points[idx]
        spread = sub.max(axis=0) - sub.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0:
            return node  # all points identical; keep as one leaf
        srt = idx[np.argsort(sub[:, axis], kind="stable")]
        self._order[start:stop] = srt
        mid = start + (stop - start) // 2
        self._axis[node] = axis
        self._split[node] = float(self.points[self._order[mid], axis])
        left = self._build(start, mid)
        right = self._build(mid, stop)
        self._left[node], self._right[node] = left, right
        return node

    def query_sqdist(self, q) -> tuple[float, int]:
        """Smallest squared Euclidean distance to ``q`` and the index of that point."""
        q = np.asarray(q, dtype=np.float64)
        best = np.inf
        best_idx = -1
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if bound >= best:
                continue
            axis = self._axis[node]
            if axis < 0:
                s, e = self._start[node], self._stop[node]
                diff = self._leaf_pts[s:e] - q
                d2 = (diff * diff).sum(axis=1)
                k = int(np.argmin(d2))
                if d2[k] < best:
                    best = float(d2[k])
                    best_idx = int(self._order[s + k])
                continue
            delta = q[axis] - self._split[node]
            near, far = (self._left[node], self._right[node]) if delta < 0 else (self._right[node], self._left[node])
            stack.append((far, delta * delta))
            stack.append((near, bound))
        return best, best_idx

    def query(self, q) -> tuple[float, int]:
        d2, k = self.query_sqdist(q)
        return float(np.sqrt(d2)), k
