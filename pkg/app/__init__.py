"""Graph and kNN Laplacians of point clouds on catalog manifolds."""

__version__ = "0.1.0"
