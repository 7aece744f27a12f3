"""Grid motion: shortest-path planning over the robot's memory map.

Planning is optimistic about unknown space (required for frontier
exploration to work at all); occupied cells are hard constraints. The
episode loop pairs this with a contact check against ground truth before
every move, so the optimism can never put the robot inside a wall.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._kernels import OCC_OCCUPIED, OCC_UNKNOWN
from .core import Pose, Vec3, cell_center, cell_of
from .memory import SemanticVoxelMap


@dataclass
class NavConfig:
    speed: int = 1  # cells per tick
    unknown_traversable: bool = True
    arrival_radius: float = 1.0
    # obstruction replans tolerated per waypoint before it is abandoned;
    # guards against orbit-and-bump loops around unknown solid interiors
    max_replans: int = 8

    def __post_init__(self):
        if self.speed < 1:
            raise ValueError("speed must be >= 1")
        if self.max_replans < 1:
            raise ValueError("max_replans must be >= 1")


@dataclass
class PathResult:
    waypoints: list  # Vec3 cell centers, start..goal
    cost: float


class Unreachable(Exception):
    pass


def _clamp_cell(cell, dims):
    return tuple(min(max(c, 0), d - 1) for c, d in zip(cell, dims))


def _plannable(occ, cell, unknown_traversable):
    v = occ[cell]
    return v != OCC_OCCUPIED and (v != OCC_UNKNOWN or unknown_traversable)


def _retarget(mem, goal_cell, goal_point, cfg, radius=3.0):
    """Nearest plannable cell within radius of the goal point."""
    occ = mem.occupancy
    nx, ny, nz = mem.dims
    r = int(math.ceil(radius))
    best = None
    best_key = None
    for i in range(max(goal_cell[0] - r, 0), min(goal_cell[0] + r, nx - 1) + 1):
        for j in range(max(goal_cell[1] - r, 0), min(goal_cell[1] + r, ny - 1) + 1):
            for k in range(max(goal_cell[2] - r, 0), min(goal_cell[2] + r, nz - 1) + 1):
                cell = (i, j, k)
                if not _plannable(occ, cell, cfg.unknown_traversable):
                    continue
                d = cell_center(cell).dist(goal_point)
                if d > radius:
                    continue
                key = (d, cell)
                if best_key is None or key < best_key:
                    best_key = key
                    best = cell
    if best is None:
        raise Unreachable(f"no plannable cell within {radius} of {goal_cell}")
    return best


def plan_path(mem: SemanticVoxelMap, start: Vec3, goal: Vec3, cfg: NavConfig) -> PathResult:
    """26-connected shortest path through free (and optionally unknown) space.

    A blocked goal cell is retargeted to the nearest plannable cell within
    3 units of the goal point. Raises Unreachable when no path exists.
    """
    start_cell = cell_of(start)
    if mem.occupancy[start_cell] == OCC_OCCUPIED:
        raise ValueError(f"start cell {start_cell} is occupied in memory")
    goal_cell = _clamp_cell(cell_of(goal), mem.dims)
    if not _plannable(mem.occupancy, goal_cell, cfg.unknown_traversable):
        goal_cell = _retarget(mem, goal_cell, goal, cfg)
    res = K.plan_grid_path(mem.occupancy, start_cell, goal_cell, cfg.unknown_traversable)
    if res is None:
        raise Unreachable(f"no path {start_cell} -> {goal_cell}")
    cells, cost = res
    return PathResult(waypoints=[cell_center(tuple(c)) for c in cells.tolist()], cost=cost)


@dataclass
class AdvanceResult:
    pose: Pose
    index: int
    moved: float  # path length added this tick
    arrived: bool
    replan: bool


def advance(pose: Pose, path: PathResult, index: int, mem: SemanticVoxelMap, cfg: NavConfig) -> AdvanceResult:
    """Move up to `speed` cells along the path.

    If the next cell has become occupied in memory, nothing moves and a
    replan is requested. Arrival triggers within arrival_radius of the
    final waypoint.
    """
    if not path.waypoints:
        raise ValueError("empty path")
    final = path.waypoints[-1]
    p = pose.position
    heading = pose.heading
    moved = 0.0
    for _ in range(cfg.speed):
        if index + 1 >= len(path.waypoints):
            break
        nxt = path.waypoints[index + 1]
        cell = cell_of(nxt)
        if mem.occupancy[cell] == OCC_OCCUPIED:
            return AdvanceResult(
                Pose(p, heading), index, moved, p.dist(final) <= cfg.arrival_radius, True
            )
        step = nxt - p
        moved += step.norm()
        if step.norm() > 0:
            heading = step.unit()
        p = nxt
        index += 1
    arrived = p.dist(final) <= cfg.arrival_radius
    return AdvanceResult(Pose(p, heading), index, moved, arrived, False)
