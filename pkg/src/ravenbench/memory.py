"""Persistent task-agnostic voxel-ray semantic memory.

Integration only ever consumes observations, never queries, so the
serialized state after a fixed observation sequence is byte-identical
no matter which queries were issued along the way. Occupancy is
monotone: unknown -> free -> occupied, never backwards.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._kernels import OCC_FREE, OCC_OCCUPIED, OCC_UNKNOWN
from .core import Pose, Vec3, cell_center, cell_of, normalize
from .sensor import Observation

_SIX = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


class SemanticVoxelMap:
    def __init__(self, dims, feat_dim=64):
        self.dims = tuple(int(d) for d in dims)
        self.feat_dim = int(feat_dim)
        self.occupancy = np.zeros(self.dims, dtype=np.uint8)  # OCC_UNKNOWN
        self.frontier_grid = np.zeros(self.dims, dtype=bool)
        self._cell_row = {}
        self._sums = np.zeros((256, self.feat_dim), dtype=np.float64)
        self._counts = np.zeros(256, dtype=np.int64)
        self._cells = np.zeros((256, 3), dtype=np.int32)
        self._n_rows = 0
        self.frontier_features = {}
        self.downgrade_attempts = 0  # audited: must stay 0
        self.revision = 0  # bumped per integrate; used for derived caches

    # -- occupancy ---------------------------------------------------------

    def mark_free(self, cells: np.ndarray) -> np.ndarray:
        """unknown -> free; occupied cells are left alone."""
        if cells.shape[0] == 0:
            return cells.reshape(-1, 3)
        i, j, k = cells[:, 0], cells[:, 1], cells[:, 2]
        states = self.occupancy[i, j, k]
        self.downgrade_attempts += int((states == OCC_OCCUPIED).sum())
        changed = cells[states == OCC_UNKNOWN]
        self.occupancy[changed[:, 0], changed[:, 1], changed[:, 2]] = OCC_FREE
        return changed

    def _grow(self, need):
        cap = self._sums.shape[0]
        if self._n_rows + need <= cap:
            return
        new_cap = max(cap * 2, self._n_rows + need)
        self._sums = np.concatenate(
            [self._sums, np.zeros((new_cap - cap, self.feat_dim))]
        )
        self._counts = np.concatenate([self._counts, np.zeros(new_cap - cap, dtype=np.int64)])
        self._cells = np.concatenate(
            [self._cells, np.zeros((new_cap - cap, 3), dtype=np.int32)]
        )

    def add_hits(self, cells: np.ndarray, feats: np.ndarray) -> np.ndarray:
        """Mark occupied and accumulate running feature sums per cell."""
        if cells.shape[0] == 0:
            return cells.reshape(-1, 3)
        i, j, k = cells[:, 0], cells[:, 1], cells[:, 2]
        newly = cells[self.occupancy[i, j, k] != OCC_OCCUPIED]
        self.occupancy[i, j, k] = OCC_OCCUPIED
        self.frontier_grid[i, j, k] = False
        self._grow(cells.shape[0])
        rows = np.empty(cells.shape[0], dtype=np.int64)
        for n, c in enumerate(map(tuple, cells.tolist())):
            r = self._cell_row.get(c)
            if r is None:
                r = self._n_rows
                self._cell_row[c] = r
                self._cells[r] = c
                self._n_rows += 1
            rows[n] = r
        np.add.at(self._sums, rows, feats)
        np.add.at(self._counts, rows, 1)
        return newly

    # -- frontiers ----------------------------------------------------------

    def update_frontiers(self, changed: np.ndarray):
        """Re-evaluate the frontier predicate around changed cells.

        A frontier is a free cell with at least one in-bounds unknown
        6-neighbor.
        """
        if changed.shape[0] == 0:
            return
        cand = np.concatenate(
            [changed.astype(np.int64)] + [changed.astype(np.int64) + d for d in _SIX]
        )
        nx, ny, nz = self.dims
        inb = (
            (cand[:, 0] >= 0)
            & (cand[:, 0] < nx)
            & (cand[:, 1] >= 0)
            & (cand[:, 1] < ny)
            & (cand[:, 2] >= 0)
            & (cand[:, 2] < nz)
        )
        cand = cand[inb]
        lin = (cand[:, 0] * ny + cand[:, 1]) * nz + cand[:, 2]
        cand = cand[np.unique(lin, return_index=True)[1]]
        i, j, k = cand[:, 0], cand[:, 1], cand[:, 2]
        val = self.occupancy[i, j, k] == OCC_FREE
        has_unknown = np.zeros(cand.shape[0], dtype=bool)
        for d in _SIX:
            n = cand + d
            m = (
                (n[:, 0] >= 0)
                & (n[:, 0] < nx)
                & (n[:, 1] >= 0)
                & (n[:, 1] < ny)
                & (n[:, 2] >= 0)
                & (n[:, 2] < nz)
            )
            nm = n[m]
            has_unknown[m] |= self.occupancy[nm[:, 0], nm[:, 1], nm[:, 2]] == OCC_UNKNOWN
        self.frontier_grid[i, j, k] = val & has_unknown

    @property
    def frontier_set(self):
        return {tuple(c) for c in np.argwhere(self.frontier_grid).tolist()}

    def frontier_rescan(self):
        """Full-grid recomputation of the frontier predicate (audit path)."""
        occ = self.occupancy
        free = occ == OCC_FREE
        unknown = occ == OCC_UNKNOWN
        padded = np.pad(unknown, 1, constant_values=False)
        adj = np.zeros_like(free)
        adj |= padded[2:, 1:-1, 1:-1]
        adj |= padded[:-2, 1:-1, 1:-1]
        adj |= padded[1:-1, 2:, 1:-1]
        adj |= padded[1:-1, :-2, 1:-1]
        adj |= padded[1:-1, 1:-1, 2:]
        adj |= padded[1:-1, 1:-1, :-2]
        return free & adj

    def is_frontier(self, cell) -> bool:
        return bool(self.frontier_grid[cell[0], cell[1], cell[2]])

    # -- features ------------------------------------------------------------

    def mean_features(self):
        """(cells int32 (R,3), unit mean feature rows (R,d))."""
        n = self._n_rows
        if n == 0:
            return np.zeros((0, 3), dtype=np.int32), np.zeros((0, self.feat_dim))
        sums = self._sums[:n]
        means = sums / np.linalg.norm(sums, axis=1, keepdims=True)
        return self._cells[:n], means

    def mean_feature(self, cell):
        r = self._cell_row[tuple(cell)]
        return normalize(self._sums[r] / self._counts[r])

    def feature_count(self, cell) -> int:
        r = self._cell_row.get(tuple(cell))
        return int(self._counts[r]) if r is not None else 0

    def add_frontier_feature(self, cell, feat):
        entry = self.frontier_features.get(cell)
        if entry is None:
            self.frontier_features[cell] = [feat.astype(np.float64).copy(), 1]
        else:
            entry[0] += feat
            entry[1] += 1


@dataclass
class SemanticRay:
    origin: Vec3
    direction: Vec3  # unit
    birth_step: int
    _sum: np.ndarray
    _count: int = 1

    def __post_init__(self):
        if abs(self.direction.norm() - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")

    @property
    def feature(self) -> np.ndarray:
        return normalize(self._sum / self._count)


@dataclass
class RayStore:
    rays: list = field(default_factory=list)
    merge_angle: float = 10.0  # degrees
    merge_radius: float = 2.0
    prune_span: float = 120.0  # 2 x max_depth

    def add(self, origin: Vec3, direction: Vec3, feature: np.ndarray, step: int):
        """Insert or merge into the first near-duplicate (feature average)."""
        cos_thresh = math.cos(math.radians(self.merge_angle))
        for r in self.rays:
            if (
                r.origin.dist(origin) <= self.merge_radius
                and r.direction.dot(direction) >= cos_thresh
            ):
                r._sum = r._sum + feature
                r._count += 1
                return r
        ray = SemanticRay(origin, direction, step, feature.astype(np.float64).copy())
        self.rays.append(ray)
        return ray

    def prune(self, mem: SemanticVoxelMap):
        """Drop rays that are both rooted off-frontier and resolved.

        Resolved means the forward corridor (prune_span along the ray) is
        fully known: every cell free up to an occupied cell, the span end,
        or the world boundary. An unknown cell keeps the ray alive.
        """
        keep = []
        occ = mem.occupancy
        for r in self.rays:
            oc = cell_of(r.origin)
            if mem.is_frontier(oc):
                keep.append(r)
                continue
            cells = K.ray_cells(
                (r.origin.x, r.origin.y, r.origin.z),
                (r.direction.x, r.direction.y, r.direction.z),
                mem.dims,
                self.prune_span,
            )
            resolved = True
            for i, j, k in cells.tolist():
                v = occ[i, j, k]
                if v == OCC_UNKNOWN:
                    resolved = False
                    break
                if v == OCC_OCCUPIED:
                    break
            if not resolved:
                keep.append(r)
        self.rays = keep


def integrate(mem: SemanticVoxelMap, ray_store: RayStore, obs: Observation, step: int = 0):
    """Fold one observation into the memory; query-independent."""
    mem.revision += 1
    newly_free = mem.mark_free(obs.free)
    newly_occ = mem.add_hits(obs.hit_cells_arr, obs.hit_feats)
    changed = np.concatenate([newly_free, newly_occ]) if (
        newly_free.shape[0] or newly_occ.shape[0]
    ) else newly_free
    mem.update_frontiers(changed)
    for n in range(obs.far_origin_cells.shape[0]):
        cell = tuple(int(c) for c in obs.far_origin_cells[n])
        direction = Vec3(*obs.far_dirs[n]).unit()
        feat = obs.far_feats[n]
        ray_store.add(cell_center(cell), direction, feat, step)
        mem.add_frontier_feature(cell, feat)
    ray_store.prune(mem)


# ---------------------------------------------------------------------------
# queries


def query_voxels(mem: SemanticVoxelMap, queries, eps_vox: float):
    """Cells whose mean feature beats eps_vox for some query (strict >)."""
    if not queries:
        raise ValueError("queries must be nonempty")
    cells, means = mem.mean_features()
    if cells.shape[0] == 0:
        return set()
    qm = np.stack([v for _, v in queries])
    qm = qm / np.linalg.norm(qm, axis=1, keepdims=True)
    sims = means @ qm.T
    mask = (sims > eps_vox).any(axis=1)
    return {tuple(c) for c in cells[mask].tolist()}


@dataclass(frozen=True)
class VoxelCluster:
    cells: frozenset
    center: Vec3
    bbox_min: tuple
    bbox_max: tuple

    @property
    def size(self) -> int:
        return len(self.cells)

    def fingerprint(self):
        """Stable identity under small reshaping: rounded bbox corners."""
        return (self.bbox_min, self.bbox_max)


def cluster_voxels(filtered, tau_min: int):
    """26-connected components of a cell set, small ones dropped.

    Output sorted by (size desc, lexicographic min cell).
    """
    if tau_min < 1:
        raise ValueError("tau_min must be >= 1")
    if not filtered:
        return []
    cells = np.array(sorted(filtered), dtype=np.int64)
    lo = cells.min(axis=0)
    hi = cells.max(axis=0)
    shape = tuple((hi - lo + 1).tolist())
    mask = np.zeros(shape, dtype=np.uint8)
    local = cells - lo
    mask[local[:, 0], local[:, 1], local[:, 2]] = 1
    labels, n = K.label_components(mask)
    out = []
    for lbl in range(1, n + 1):
        comp_local = np.argwhere(labels == lbl)
        if comp_local.shape[0] < tau_min:
            continue
        comp = comp_local + lo
        centers = comp + 0.5
        center = Vec3(*centers.mean(axis=0).tolist())
        out.append(
            VoxelCluster(
                cells=frozenset(map(tuple, comp.tolist())),
                center=center,
                bbox_min=tuple(comp.min(axis=0).tolist()),
                bbox_max=tuple(comp.max(axis=0).tolist()),
            )
        )
    out.sort(key=lambda c: (-c.size, min(c.cells)))
    return out


def query_rays(store: RayStore, queries, eps_ray: float):
    """Rays whose best query similarity is >= eps_ray (inclusive)."""
    if not queries:
        raise ValueError("queries must be nonempty")
    if not store.rays:
        return []
    qm = np.stack([v for _, v in queries])
    qm = qm / np.linalg.norm(qm, axis=1, keepdims=True)
    feats = np.stack([r.feature for r in store.rays])
    best = (feats @ qm.T).max(axis=1)
    return [r for r, s in zip(store.rays, best) if s >= eps_ray]


@dataclass
class RayBin:
    member_rays: list
    centroid_dir: Vec3
    representative_origin: Vec3
    join_cosines: list  # cos against the centroid at the moment of joining

    @property
    def size(self) -> int:
        return len(self.member_rays)


def bin_rays(filtered, cur_pose: Pose, theta_thresh_deg: float):
    """Greedy angular binning of forward-valid rays.

    Validity drops rays whose horizontal direction points back past the
    robot. Rays are processed in (birth_step, origin, direction) order; a
    ray joins the first bin whose current centroid is within the angular
    threshold, updating the centroid to the renormalized mean direction.
    """
    if not (0.0 < theta_thresh_deg < 180.0):
        raise ValueError("theta_thresh must be in (0, 180) degrees")
    cx, cy = cur_pose.position.x, cur_pose.position.y
    valid = []
    for r in filtered:
        dx, dy = r.direction.x, r.direction.y
        px = r.origin.x + dx - cx
        py = r.origin.y + dy - cy
        if dx * px + dy * py > 0.0:
            valid.append(r)
    valid.sort(key=lambda r: (r.birth_step, tuple(r.origin), tuple(r.direction)))
    cos_thresh = math.cos(math.radians(theta_thresh_deg))
    bins = []
    sums = []  # raw direction sums per bin
    for r in valid:
        placed = False
        for b, s in zip(bins, sums):
            c = b.centroid_dir.dot(r.direction)
            if c >= cos_thresh:
                b.member_rays.append(r)
                b.join_cosines.append(c)
                s += np.array(tuple(r.direction))
                b.centroid_dir = Vec3(*(s / np.linalg.norm(s)).tolist())
                placed = True
                break
        if not placed:
            bins.append(
                RayBin(
                    member_rays=[r],
                    centroid_dir=r.direction,
                    representative_origin=r.origin,
                    join_cosines=[1.0],
                )
            )
            sums.append(np.array(tuple(r.direction), dtype=np.float64))
    return bins


def score_bins(bins, cur_pose: Pose, alpha: float, beta: float) -> RayBin:
    """argmax of alpha*proximity + beta*density; lexicographic tie-break.

    proximity = 1/(1 + distance to the representative origin);
    density = bin size / largest bin size.
    """
    if not bins:
        raise ValueError("no bins to score")
    max_size = max(b.size for b in bins)
    best = None
    best_key = None
    for b in bins:
        prox = 1.0 / (1.0 + b.representative_origin.dist(cur_pose.position))
        dens = b.size / max_size
        score = alpha * prox + beta * dens
        key = (-score, tuple(b.representative_origin))
        if best_key is None or key < best_key:
            best_key = key
            best = b
    return best


# ---------------------------------------------------------------------------
# snapshot


def _f(x) -> str:
    return repr(float(x))


def snapshot(mem: SemanticVoxelMap, ray_store: RayStore) -> str:
    """Canonical text dump (sorted cells, repr floats); byte-deterministic."""
    lines = ["dims %d %d %d" % mem.dims]
    known = np.argwhere(mem.occupancy != OCC_UNKNOWN)
    occ = mem.occupancy
    for c in sorted(map(tuple, known.tolist())):
        lines.append("occ %d %d %d %d" % (c + (int(occ[c]),)))
    for c in sorted(mem._cell_row):
        r = mem._cell_row[c]
        vals = " ".join(_f(v) for v in mem._sums[r])
        lines.append("feat %d %d %d %d %s" % (c + (int(mem._counts[r]), vals)))
    for c in sorted(map(tuple, np.argwhere(mem.frontier_grid).tolist())):
        lines.append("front %d %d %d" % c)
    for c in sorted(mem.frontier_features):
        s, n = mem.frontier_features[c]
        vals = " ".join(_f(v) for v in s)
        lines.append("ffeat %d %d %d %d %s" % (c + (n, vals)))
    for r in ray_store.rays:
        lines.append(
            "ray %s %s %s %s %s %s %d %d %s"
            % (
                _f(r.origin.x),
                _f(r.origin.y),
                _f(r.origin.z),
                _f(r.direction.x),
                _f(r.direction.y),
                _f(r.direction.z),
                r.birth_step,
                r._count,
                " ".join(_f(v) for v in r._sum),
            )
        )
    return "\n".join(lines) + "\n"
