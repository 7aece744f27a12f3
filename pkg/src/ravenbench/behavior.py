"""Priority-ordered behavior arbitration and the individual search behaviors.

A tick evaluates voxel search, ray search, auxiliary-cue search, and
frontier exploration in that fixed order and executes the first branch
whose can-execute test passes. Frontier exploration is the fallback; if
even that has no candidates the episode stalls.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import Pose, SemanticSpace, Vec3, cell_of
from .memory import (
    RayStore,
    SemanticVoxelMap,
    bin_rays,
    cluster_voxels,
    query_rays,
    query_voxels,
    score_bins,
)
from .world import TaskProgress, TaskSpec, WorldModel, active_queries


class Behavior(enum.Enum):
    VOXEL_SEARCH = "VoxelSearch"
    RAY_SEARCH = "RaySearch"
    AUX_SEARCH = "AuxSearch"
    FRONTIER_EXPLORE = "FrontierExplore"
    VLFM = "VlfmFrontier"


@dataclass
class BehaviorConfig:
    """Planner thresholds and weights (world units, ticks, degrees)."""

    epsilon_vox: float = 0.98
    tau_min: int = 30
    omega: float = 1.0
    epsilon_ray: float = 0.95
    theta_thresh_deg: float = 45.0
    alpha: float = 1.0
    beta: float = 5.0
    omega_ray: float = 6.0
    t_aux_steps: int = 200
    j_aux: int = 3
    z_thresh: float = 3.0
    dbscan_eps: float = 2.7
    dbscan_min_samples: int = 3
    alpha_dist: float = 1.0
    alpha_head: float = 5.0
    ascend_height: float = 10.0
    blacklist_ticks: int = 50

    def __post_init__(self):
        for name in (
            "epsilon_vox",
            "tau_min",
            "omega",
            "epsilon_ray",
            "theta_thresh_deg",
            "alpha",
            "beta",
            "omega_ray",
            "t_aux_steps",
            "j_aux",
            "z_thresh",
            "dbscan_eps",
            "dbscan_min_samples",
            "alpha_dist",
            "alpha_head",
            "ascend_height",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class BehaviorState:
    visited_clusters: set = field(default_factory=set)
    current_waypoint: Optional[tuple] = None  # (Vec3, Behavior)
    pending_key: Optional[tuple] = None
    aux_queries: set = field(default_factory=set)
    last_aux_step: int = -(10**9)
    step_clock: int = 0
    blacklist: dict = field(default_factory=dict)
    min_join_cos: float = math.inf  # worst bin-assignment cosine seen
    frontier_cache: Optional[tuple] = None  # ((revision, z_thresh), centroids)

    def blacklisted(self, key) -> bool:
        expiry = self.blacklist.get(key)
        if expiry is None:
            return False
        if expiry <= self.step_clock:
            del self.blacklist[key]
            return False
        return True

    def mark_arrival(self, blacklist_ticks: int = 0):
        """Waypoint reached: voxel clusters become visited for good.

        Other sources get a temporary blacklist so an achieved frontier
        centroid or ray bin is not immediately re-selected while the map
        around it is still catching up.
        """
        if self.current_waypoint:
            if self.current_waypoint[1] is Behavior.VOXEL_SEARCH:
                self.visited_clusters.add(self.pending_key)
            elif self.pending_key is not None and blacklist_ticks > 0:
                self.blacklist[self.pending_key] = self.step_clock + blacklist_ticks
        self.current_waypoint = None
        self.pending_key = None

    def mark_unreachable(self, blacklist_ticks: int):
        """Planner failure: abandon and blacklist the source for a while."""
        if self.pending_key is not None:
            self.blacklist[self.pending_key] = self.step_clock + blacklist_ticks
        self.current_waypoint = None
        self.pending_key = None


class AuxCueProvider:
    """Interface for auxiliary-cue suggestion (LVLM stand-in)."""

    def suggest(self, targets, palette):
        raise NotImplementedError


class CooccurrenceOracle(AuxCueProvider):
    """Deterministic table-backed provider.

    Returns the first j_aux usable entries of the row for the first
    active target that has one: entries must be in the palette and must
    not themselves be targets. No row -> empty list.
    """

    def __init__(self, table: dict, j_aux: int = 3):
        self.table = {k.lower(): [v.lower() for v in vs] for k, vs in table.items()}
        self.j_aux = int(j_aux)

    def suggest(self, targets, palette):
        palette = set(palette)
        target_set = set(targets)
        for t in targets:
            row = self.table.get(t)
            if row is None:
                continue
            out = [c for c in row if c in palette and c not in target_set]
            return out[: self.j_aux]
        return []


def load_cooccurrence(text: str) -> dict:
    """Parse 'target-class: aux1, aux2, ...' lines."""
    table = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"line {line_no}: expected 'target: aux, aux, ...'")
        target, rest = line.split(":", 1)
        entries = [c.strip().lower() for c in rest.split(",") if c.strip()]
        table[target.strip().lower()] = entries
    return table


class StallError(RuntimeError):
    """No behavior could produce a waypoint; the episode is over."""


# ---------------------------------------------------------------------------
# geometry helpers


def ray_box_intersect(origin: Vec3, box_center: Vec3, box_size: Vec3) -> Vec3:
    """Nearest surface point of the box along the ray origin -> center.

    If the origin is inside the box the origin itself comes back.
    """
    if min(box_size) <= 0:
        raise ValueError("degenerate box")
    d = box_center - origin
    if d.norm() == 0.0:
        raise ValueError("origin coincides with box center")
    t_entry = 0.0
    for o, dc, c, s in (
        (origin.x, d.x, box_center.x, box_size.x),
        (origin.y, d.y, box_center.y, box_size.y),
        (origin.z, d.z, box_center.z, box_size.z),
    ):
        lo, hi = c - s / 2.0, c + s / 2.0
        if dc == 0.0:
            continue  # center inside slab, so origin coordinate stays valid
        t1 = (lo - o) / dc
        t2 = (hi - o) / dc
        t_entry = max(t_entry, min(t1, t2))
    if t_entry <= 0.0:
        return origin
    return origin + d.scale(t_entry)


def _clamp_to_world(p: Vec3, dims) -> Vec3:
    return Vec3(
        min(max(p.x, 0.5), dims[0] - 0.5),
        min(max(p.y, 0.5), dims[1] - 0.5),
        min(max(p.z, 0.5), dims[2] - 0.5),
    )


# ---------------------------------------------------------------------------
# behaviors; each returns (waypoint, blacklist-key) or None


def voxel_search(state: BehaviorState, mem: SemanticVoxelMap, queries, pose: Pose, cfg: BehaviorConfig):
    if not queries:
        return None
    filtered = query_voxels(mem, queries, cfg.epsilon_vox)
    if not filtered:
        return None
    clusters = cluster_voxels(filtered, cfg.tau_min)
    cands = []
    for c in clusters:
        key = (Behavior.VOXEL_SEARCH.value, c.fingerprint())
        if key in state.visited_clusters or state.blacklisted(key):
            continue
        cands.append((c, key))
    if not cands:
        return None
    best, key = min(
        cands, key=lambda ck: (ck[0].center.dist(pose.position), ck[1])
    )
    bbox_center = Vec3(
        (best.bbox_min[0] + best.bbox_max[0] + 1) / 2.0,
        (best.bbox_min[1] + best.bbox_max[1] + 1) / 2.0,
        (best.bbox_min[2] + best.bbox_max[2] + 1) / 2.0,
    )
    bbox_size = Vec3(
        best.bbox_max[0] + 1 - best.bbox_min[0],
        best.bbox_max[1] + 1 - best.bbox_min[1],
        best.bbox_max[2] + 1 - best.bbox_min[2],
    )
    dir_norm = (bbox_center - pose.position).unit()
    p_surf = ray_box_intersect(pose.position, bbox_center, bbox_size)
    p_adj = p_surf - dir_norm.scale(cfg.omega)
    return p_adj, key


def _bin_key(b):
    o = b.representative_origin
    d = b.centroid_dir
    return (
        Behavior.RAY_SEARCH.value,
        (int(math.floor(o.x)), int(math.floor(o.y)), int(math.floor(o.z))),
        (round(d.x, 1), round(d.y, 1), round(d.z, 1)),
    )


def ray_search(state: BehaviorState, ray_store: RayStore, queries, pose: Pose, cfg: BehaviorConfig, dims):
    if not queries:
        return None
    matched = query_rays(ray_store, queries, cfg.epsilon_ray)
    if not matched:
        return None
    bins = bin_rays(matched, pose, cfg.theta_thresh_deg)
    for b in bins:
        state.min_join_cos = min(state.min_join_cos, min(b.join_cosines))
    bins = [b for b in bins if not state.blacklisted(_bin_key(b))]
    if not bins:
        return None
    best = score_bins(bins, pose, cfg.alpha, cfg.beta)
    wp = best.representative_origin + best.centroid_dir.scale(cfg.omega_ray)
    return _clamp_to_world(wp, dims), _bin_key(best)


def aux_search(
    state: BehaviorState,
    ray_store: RayStore,
    task: TaskSpec,
    progress: TaskProgress,
    pose: Pose,
    cfg: BehaviorConfig,
    provider: AuxCueProvider,
    space: SemanticSpace,
    palette,
    dims,
):
    """Rate-limited ray search over target plus suggested auxiliary classes.

    The attempt clock resets on every invocation attempt, successful or
    not.
    """
    if state.step_clock - state.last_aux_step < cfg.t_aux_steps:
        return None
    state.last_aux_step = state.step_clock
    targets = active_queries(task, progress)
    aux = provider.suggest(targets, palette)
    state.aux_queries = set(aux)
    names = list(targets) + [a for a in aux if a not in targets]
    queries = [(n, space.encode_class(n)) for n in names]
    return ray_search(state, ray_store, queries, pose, cfg, dims)


def _eps_offsets(eps: float) -> np.ndarray:
    """Integer lattice offsets with 0 < |o| <= eps, lexicographic order."""
    r = int(math.floor(eps))
    out = [
        (a, b, c)
        for a in range(-r, r + 1)
        for b in range(-r, r + 1)
        for c in range(-r, r + 1)
        if (a, b, c) != (0, 0, 0) and a * a + b * b + c * c <= eps * eps
    ]
    return np.array(out, dtype=np.int32)


def dbscan_cells(cells: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Exact DBSCAN over unit-lattice points; -1 marks noise.

    Neighborhoods are integer offset stencils evaluated on a dense local
    grid, so the labeling is order-independent of the input. Border
    points adopt the core neighbor at the first stencil offset in
    lexicographic order.
    """
    n_pts = cells.shape[0]
    if n_pts == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = _eps_offsets(eps)
    lo = cells.min(axis=0)
    local = (cells - lo).astype(np.int64)
    shape = tuple((local.max(axis=0) + 1).tolist())
    mask = np.zeros(shape, dtype=bool)
    mask[local[:, 0], local[:, 1], local[:, 2]] = True
    labels_grid = K.dbscan_grid(mask, offsets, min_samples)
    return labels_grid[local[:, 0], local[:, 1], local[:, 2]].astype(np.int64) - 1


def _frontier_centroids(mem: SemanticVoxelMap, cfg: BehaviorConfig, state: BehaviorState):
    """DBSCAN centroids of z-filtered frontier cells, cached per revision."""
    cached = state.frontier_cache
    if cached is not None and cached[0] == (mem.revision, cfg.z_thresh):
        return cached[1]
    pts = np.argwhere(mem.frontier_grid)
    pts = pts[pts[:, 2] + 0.5 > cfg.z_thresh]
    centroids = []
    if pts.shape[0]:
        labels = dbscan_cells(pts, cfg.dbscan_eps, cfg.dbscan_min_samples)
        n = int(labels.max()) + 1 if labels.size else 0
        centers = pts.astype(np.float64) + 0.5
        for lbl in range(n):
            c = centers[labels == lbl].mean(axis=0)
            centroids.append(Vec3(*c.tolist()))
    state.frontier_cache = ((mem.revision, cfg.z_thresh), centroids)
    return centroids


def frontier_explore(mem: SemanticVoxelMap, pose: Pose, state: BehaviorState, cfg: BehaviorConfig):
    """DBSCAN frontier centroids scored by distance plus heading change."""
    centroids = _frontier_centroids(mem, cfg, state)
    if not centroids:
        return None
    head = pose.heading
    pos = pose.position
    best = None
    best_key = None
    for centroid in centroids:
        key = (
            Behavior.FRONTIER_EXPLORE.value,
            (round(centroid.x), round(centroid.y), round(centroid.z)),
        )
        if state.blacklisted(key):
            continue
        d = centroid.dist(pos)
        if d < 1e-12:
            head_pen = 0.0
        else:
            head_pen = 1.0 - head.dot((centroid - pos).unit())
        score = cfg.alpha_dist * d + cfg.alpha_head * head_pen
        k = (score, tuple(centroid))
        if best_key is None or k < best_key:
            best_key = k
            best = (centroid, key)
    return best


def vlfm_frontier(mem: SemanticVoxelMap, queries, pose: Pose, state: BehaviorState, cfg: BehaviorConfig):
    """Value-map baseline: go to the best-scoring frontier point.

    Frontier cells that accumulated projected features are scored by max
    cosine to the queries; if none carry features yet, the nearest
    frontier point wins.
    """
    grid = mem.frontier_grid
    key_of = lambda c: (Behavior.VLFM.value, c)
    if queries and mem.frontier_features:
        qm = np.stack([v for _, v in queries])
        scored = []
        for c, (s, _) in mem.frontier_features.items():
            if not grid[c] or c[2] + 0.5 <= cfg.z_thresh:
                continue
            mean = s / np.linalg.norm(s)
            scored.append((float((qm @ mean).max()), c))
        scored.sort(key=lambda sc: (-sc[0], sc[1]))
        for _, c in scored:
            if not state.blacklisted(key_of(c)):
                return Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5), key_of(c)
    pts = np.argwhere(grid)
    pts = pts[pts[:, 2] + 0.5 > cfg.z_thresh]
    if pts.shape[0] == 0:
        return None
    centers = pts.astype(np.float64) + 0.5
    p = np.array(tuple(pose.position))
    d = np.linalg.norm(centers - p, axis=1)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], d))
    for idx in order.tolist():
        c = tuple(pts[idx])
        if not state.blacklisted(key_of(c)):
            return Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5), key_of(c)
    return None


DEFAULT_BRANCHES = (
    Behavior.VOXEL_SEARCH,
    Behavior.RAY_SEARCH,
    Behavior.AUX_SEARCH,
    Behavior.FRONTIER_EXPLORE,
)


def tick(
    state: BehaviorState,
    mem: SemanticVoxelMap,
    ray_store: RayStore,
    task: TaskSpec,
    progress: TaskProgress,
    pose: Pose,
    cfg: BehaviorConfig,
    space: SemanticSpace,
    provider: AuxCueProvider,
    palette,
    dims,
    branches=DEFAULT_BRANCHES,
):
    """Run the priority chain; returns (behavior, waypoint) or stalls."""
    if state.current_waypoint is not None:
        raise RuntimeError("tick called while a waypoint is active")
    targets = active_queries(task, progress)
    queries = [(n, space.encode_class(n)) for n in targets]
    for branch in branches:
        if branch is Behavior.VOXEL_SEARCH:
            res = voxel_search(state, mem, queries, pose, cfg)
        elif branch is Behavior.RAY_SEARCH:
            res = ray_search(state, ray_store, queries, pose, cfg, dims)
        elif branch is Behavior.AUX_SEARCH:
            res = aux_search(
                state, ray_store, task, progress, pose, cfg, provider, space, palette, dims
            )
        elif branch is Behavior.FRONTIER_EXPLORE:
            res = frontier_explore(mem, pose, state, cfg)
        elif branch is Behavior.VLFM:
            res = vlfm_frontier(mem, queries, pose, state, cfg)
        else:
            raise ValueError(f"unknown branch {branch}")
        if res is not None:
            wp, key = res
            state.current_waypoint = (wp, branch)
            state.pending_key = key
            return branch, wp
    raise StallError("no behavior produced a waypoint")


def initialize(pose: Pose, cfg: BehaviorConfig, world: WorldModel, h_fov: float):
    """Ascend and request the panoramic sweep.

    The target altitude cell may be occupied; the nearest free cell up to
    five above is used instead, else the episode cannot start.
    """
    target = Vec3(pose.position.x, pose.position.y, pose.position.z + cfg.ascend_height)
    start_cell = cell_of(pose.position)
    for dz in range(0, 6):
        cand = Vec3(target.x, target.y, target.z + dz)
        cell = cell_of(cand)
        if not world.in_bounds(cell):
            break
        column = [
            (start_cell[0], start_cell[1], k)
            for k in range(start_cell[2], cell[2] + 1)
        ]
        if all(c not in world.occupied for c in column):
            n_views = math.ceil(360.0 / h_fov) + 1
            return Pose(cand, pose.heading), n_views
    raise StallError("no free ascent column above start")
