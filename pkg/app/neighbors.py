'''Immutable spatial index over a cloud: closed-ball range queries and kNN radii.'''

import logging

import numpy as np
from scipy.spatial import cKDTree

try:
    from app.exceptions import DomainException
    from app.rules import Rules
except ImportError:
    from exceptions import DomainException
    from rules import Rules

logger = logging.getLogger(__name__)


class NeighborIndex:
    '''k-d tree over ambient coordinates, with a brute-force scan for small clouds.

    Distances returned by every query are recomputed as ||x - X_i||_2 from the
    stored points, so tree and scan agree bit for bit.
    '''

    def __init__(self, cloud, leaf_size=16):
        '''
        Args:
            cloud: SampleCloud or (n, m) array
            leaf_size (int): leaf size of the k-d tree
        '''
        points = cloud.points if hasattr(cloud, "points") else cloud
        self.points = np.array(points, dtype=float)
        self.points.setflags(write=False)
        self.leaf_size = leaf_size
        self.brute_force = self.points.shape[0] < Rules().get_brute_force_threshold()
        self.tree = None if self.brute_force else cKDTree(self.points, leafsize=leaf_size)

    def __repr__(self):
        kind = "brute-force" if self.brute_force else f"kd-tree(leaf_size={self.leaf_size})"
        return f"NeighborIndex(n={self.get_size()}, {kind})"

    def get_size(self):
        return self.points.shape[0]

    def distances(self, x, indices=None):
        '''Returns ||x - X_i||_2 for the given indices (all points by default).'''
        x = np.asarray(x, dtype=float)
        subset = self.points if indices is None else self.points[indices]
        return np.linalg.norm(subset - x, axis=1)

    def range_query_with_distances(self, x, r):
        '''Returns (indices, distances) of all points with ||x - X_i|| <= r, indices ascending.'''
        if r < 0:
            raise DomainException(f"Query radius must be nonnegative, got {r}.")
        if self.brute_force:
            all_distances = self.distances(x)
            indices = np.flatnonzero(all_distances <= r)
            return indices, all_distances[indices]
        # widened search, then the exact closed-ball test on recomputed distances
        candidates = self.tree.query_ball_point(np.asarray(x, dtype=float), r * (1.0 + 1e-9) + 1e-300)
        candidates = np.array(sorted(candidates), dtype=np.intp)
        if candidates.size == 0:
            return candidates, np.empty(0)
        distances = self.distances(x, candidates)
        keep = distances <= r
        return candidates[keep], distances[keep]

    def range_query(self, x, r):
        '''Returns the indices i with ||x - X_i||_2 <= r (closed ball).'''
        return self.range_query_with_distances(x, r)[0]

    def knn_radius(self, x, k):
        '''Returns R_{n,k}(x), the k-th smallest distance from x to the cloud.'''
        n = self.get_size()
        if k < 1 or k > n or int(k) != k:
            raise DomainException(f"k must be an integer in 1..{n}, got {k}.")
        k = int(k)
        if self.brute_force:
            return float(np.partition(self.distances(x), k - 1)[k - 1])
        _, indices = self.tree.query(np.asarray(x, dtype=float), k=k)
        indices = np.atleast_1d(indices)
        return float(self.distances(x, indices).max())

    def knn_radii(self, xs, k):
        '''Returns R_{n,k}(x) for each row of xs.'''
        return np.array([self.knn_radius(x, k) for x in np.atleast_2d(xs)])


def build_index(cloud, leaf_size=16):
    '''Builds the neighbor index of a cloud.'''
    return NeighborIndex(cloud, leaf_size)


def range_query(index, x, r):
    return index.range_query(x, r)


def knn_radius(index, x, k):
    return index.knn_radius(x, k)
