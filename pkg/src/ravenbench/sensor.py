"""Simulated depth-limited perception over the ground-truth grid.

A sense call casts an angular grid of rays around the pose heading's yaw
(elevations are always measured from horizontal: the platform carries a
stabilized camera). Cells in front of the first occupied cell and within
max_depth come back free; in-range first hits carry a noisy class
embedding; object hits beyond max_depth but within max_visibility come
back as direction-only far hits.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .core import BACKGROUND_CLASS, Pose, SemanticSpace, Vec3, cell_of
from .world import WorldModel


@dataclass
class SensorConfig:
    h_fov: float = 90.0
    v_fov: float = 60.0
    rays_h: int = 48
    rays_v: int = 24
    max_depth: float = 60.0
    max_visibility: float = 300.0
    integrate_period: int = 10

    def __post_init__(self):
        if not (0.0 < self.h_fov <= 360.0 and 0.0 < self.v_fov <= 360.0):
            raise ValueError("fovs must be in (0, 360]")
        if not (self.max_visibility >= self.max_depth > 0.0):
            raise ValueError("need max_visibility >= max_depth > 0")
        if self.integrate_period < 1:
            raise ValueError("integrate_period must be >= 1")


class Observation:
    """One frame of sensing, array-backed.

    free / hit_cells_arr are int32 (N,3); hit_feats / far_feats are unit
    rows; far_dirs are the unit ray directions; far_origin_cells are the
    boundary cells where each far ray left depth coverage.
    """

    def __init__(self, origin, free, hit_cells_arr, hit_feats, far_dirs, far_feats, far_origin_cells):
        self.origin = origin
        self.free = free
        self.hit_cells_arr = hit_cells_arr
        self.hit_feats = hit_feats
        self.far_dirs = far_dirs
        self.far_feats = far_feats
        self.far_origin_cells = far_origin_cells

    @property
    def free_cells(self):
        return {tuple(c) for c in self.free.tolist()}

    @property
    def hit_cells(self):
        return [
            (tuple(c), self.hit_feats[n])
            for n, c in enumerate(self.hit_cells_arr.tolist())
        ]

    @property
    def far_hits(self):
        return [
            (Vec3(*self.far_dirs[n]), self.far_feats[n])
            for n in range(self.far_dirs.shape[0])
        ]


def ray_directions(yaw: float, cfg: SensorConfig) -> np.ndarray:
    """Unit directions on the angular grid, pixel-center convention.

    Rows ordered azimuth-major then elevation, both ascending.
    """
    az = yaw - math.radians(cfg.h_fov) / 2.0 + (
        (np.arange(cfg.rays_h) + 0.5) * math.radians(cfg.h_fov) / cfg.rays_h
    )
    el = -math.radians(cfg.v_fov) / 2.0 + (
        (np.arange(cfg.rays_v) + 0.5) * math.radians(cfg.v_fov) / cfg.rays_v
    )
    azg, elg = np.meshgrid(az, el, indexing="ij")
    ce = np.cos(elg)
    dirs = np.stack(
        [ce * np.cos(azg), ce * np.sin(azg), np.sin(elg)], axis=-1
    )
    return dirs.reshape(-1, 3)


def sense(
    world: WorldModel,
    pose: Pose,
    cfg: SensorConfig,
    space: SemanticSpace,
    rng: np.random.Generator,
) -> Observation:
    if not world.in_bounds(cell_of(pose.position)):
        raise ValueError("pose outside world bounds")
    dirs = ray_directions(pose.yaw, cfg)
    free, hits, far = K.cast_rays(
        world.occ_grid,
        world.obj_grid,
        (pose.position.x, pose.position.y, pose.position.z),
        dirs,
        cfg.max_depth,
        cfg.max_visibility,
    )
    hit_names = [
        world.objects[row[4]].class_name if row[4] >= 0 else BACKGROUND_CLASS
        for row in hits.tolist()
    ]
    far_names = [world.objects[row[4]].class_name for row in far.tolist()]
    # one batched draw each keeps the rng stream layout fixed per frame
    hit_feats = space.observe_batch(hit_names, rng)
    far_feats = space.observe_batch(far_names, rng)
    return Observation(
        origin=pose,
        free=free,
        hit_cells_arr=hits[:, 1:4].copy(),
        hit_feats=hit_feats,
        far_dirs=dirs[far[:, 0]] if far.shape[0] else np.zeros((0, 3)),
        far_feats=far_feats,
        far_origin_cells=far[:, 1:4].copy(),
    )


def panoramic_sense(
    world: WorldModel,
    pose: Pose,
    cfg: SensorConfig,
    space: SemanticSpace,
    rng: np.random.Generator,
    n_yaw: int,
):
    """Observations at n_yaw evenly spaced yaws starting at pose yaw."""
    if n_yaw < math.ceil(360.0 / cfg.h_fov):
        raise ValueError(
            f"n_yaw={n_yaw} cannot cover 360 degrees with h_fov={cfg.h_fov}"
        )
    base = pose.yaw
    out = []
    for n in range(n_yaw):
        yaw = base + n * 2.0 * math.pi / n_yaw
        p = Pose(pose.position, Vec3(math.cos(yaw), math.sin(yaw), 0.0).unit())
        out.append(sense(world, p, cfg, space, rng))
    return out
