"""Grid kernels with a compiled fast path and a pure-Python fallback.

The backend is chosen once at import: the Cython extension if it was
built, else the pure lane. Set RAVENBENCH_PURE=1 to force the fallback.
Both lanes produce identical results; the wrappers here normalize row
ordering so callers never see backend-dependent output.
"""

import os

import numpy as np

from . import pure
from .pure import OCC_FREE, OCC_OCCUPIED, OCC_UNKNOWN

if os.environ.get("RAVENBENCH_PURE"):
    _backend = pure
    BACKEND = "pure"
else:
    try:
        from . import _native as _backend

        BACKEND = "native"
    except ImportError:
        _backend = pure
        BACKEND = "pure"


def cast_rays(occ, obj, origin, dirs, max_depth, max_visibility, backend=None):
    """Batch ray trace; see pure.cast_rays for the contract.

    Output is normalized: free cells deduplicated and lexicographically
    sorted, hit/far rows sorted by ray index.
    """
    b = _backend if backend is None else backend
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    free, hits, far = b.cast_rays(
        occ,
        np.ascontiguousarray(obj, dtype=np.int32),
        np.asarray(origin, dtype=np.float64),
        np.ascontiguousarray(dirs, dtype=np.float64),
        float(max_depth),
        float(max_visibility),
    )
    if free.shape[0]:
        # dedup + lexicographic sort through the linear index (fast path;
        # np.unique(axis=0) would sort a structured view instead)
        _, ny, nz = occ.shape
        lin = (free[:, 0].astype(np.int64) * ny + free[:, 1]) * nz + free[:, 2]
        lin = np.unique(lin)
        free = np.empty((lin.shape[0], 3), dtype=np.int32)
        free[:, 0] = lin // (ny * nz)
        free[:, 1] = (lin // nz) % ny
        free[:, 2] = lin % nz
    if hits.shape[0]:
        hits = hits[np.argsort(hits[:, 0], kind="stable")]
    if far.shape[0]:
        far = far[np.argsort(far[:, 0], kind="stable")]
    return free, hits, far


def ray_cells(origin, direction, dims, t_max_limit, backend=None):
    """Cells traversed by a single ray, in traversal order."""
    b = _backend if backend is None else backend
    return b.ray_cells(
        np.asarray(origin, dtype=np.float64),
        np.asarray(direction, dtype=np.float64),
        tuple(int(d) for d in dims),
        float(t_max_limit),
    )


def plan_grid_path(occ, start, goal, unknown_traversable, backend=None):
    """A* shortest path on memory occupancy; (path, cost) or None."""
    b = _backend if backend is None else backend
    return b.plan_grid_path(
        np.ascontiguousarray(occ, dtype=np.uint8),
        tuple(int(c) for c in start),
        tuple(int(c) for c in goal),
        bool(unknown_traversable),
    )


def distance_field(passable, sources, backend=None):
    """Multi-source Dijkstra distance grid over passable cells."""
    b = _backend if backend is None else backend
    sources = np.ascontiguousarray(sources, dtype=np.int32).reshape(-1, 3)
    return b.distance_field(np.ascontiguousarray(passable, dtype=np.uint8), sources)


def label_components(mask, offsets=None, backend=None):
    """Component labels under a stencil (default 26-conn); (labels, count)."""
    b = _backend if backend is None else backend
    if offsets is not None:
        offsets = np.ascontiguousarray(offsets, dtype=np.int32)
    return b.label_components(np.ascontiguousarray(mask, dtype=np.uint8), offsets)


def dbscan_grid(mask, offsets, min_samples, backend=None):
    """Lattice DBSCAN labels grid; see pure.dbscan_grid for the contract."""
    b = _backend if backend is None else backend
    return b.dbscan_grid(
        np.ascontiguousarray(mask, dtype=np.uint8),
        np.ascontiguousarray(offsets, dtype=np.int32),
        int(min_samples),
    )
