"""Episode execution, Progress/PPL metrics, baselines, benchmark sweeps."""

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .behavior import (
    Behavior,
    BehaviorConfig,
    BehaviorState,
    CooccurrenceOracle,
    StallError,
    initialize,
    tick,
)
from .core import Pose, SemanticSpace, Vec3, cell_of
from .memory import RayStore, SemanticVoxelMap, integrate
from .nav import NavConfig, PathResult, Unreachable, advance, plan_path
from .sensor import Observation, SensorConfig, panoramic_sense, sense
from .world import (
    Scenario,
    TaskKind,
    TaskProgress,
    active_queries,
    goal_instances,
    goal_region_cells,
    is_reached,
)


class PolicyKind(enum.Enum):
    RAVEN = "Raven"
    VOXEL_ONLY = "VoxelOnly"
    RAY_ONLY = "RayOnly"
    VOXEL_RAY_NO_AUX = "VoxelRayNoAux"
    FRONTIER3D = "Frontier3D"
    VLFM3D = "Vlfm3D"


POLICY_BRANCHES = {
    PolicyKind.RAVEN: (
        Behavior.VOXEL_SEARCH,
        Behavior.RAY_SEARCH,
        Behavior.AUX_SEARCH,
        Behavior.FRONTIER_EXPLORE,
    ),
    PolicyKind.VOXEL_ONLY: (Behavior.VOXEL_SEARCH, Behavior.FRONTIER_EXPLORE),
    PolicyKind.RAY_ONLY: (Behavior.RAY_SEARCH, Behavior.FRONTIER_EXPLORE),
    PolicyKind.VOXEL_RAY_NO_AUX: (
        Behavior.VOXEL_SEARCH,
        Behavior.RAY_SEARCH,
        Behavior.FRONTIER_EXPLORE,
    ),
    PolicyKind.FRONTIER3D: (Behavior.FRONTIER_EXPLORE,),
    PolicyKind.VLFM3D: (Behavior.VLFM,),
}


@dataclass
class EpisodeConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    behavior: BehaviorConfig = field(default_factory=BehaviorConfig)
    nav: NavConfig = field(default_factory=NavConfig)
    d_emb: int = 64
    noise_sigma: float = 0.05
    max_cross_sim: float = 0.6


@dataclass
class EpisodeResult:
    policy: str
    seed: int
    trajectory: list  # (tick, Pose); tick 0 appears twice (pre/post ascent)
    reach_events: list  # (tick, goal id, path length so far)
    behavior_log: list  # dict records, one per waypoint decision
    terminated_by: str  # budget | all_goals | stall
    path_length: float
    steps: int
    audit: Optional[dict] = None

    def to_json(self) -> str:
        doc = {
            "policy": self.policy,
            "seed": self.seed,
            "terminated_by": self.terminated_by,
            "path_length": self.path_length,
            "steps": self.steps,
            "reach_events": [
                [t, g, p] for t, g, p in self.reach_events
            ],
            "trajectory": [
                [t, p.position.x, p.position.y, p.position.z,
                 p.heading.x, p.heading.y, p.heading.z]
                for t, p in self.trajectory
            ],
            "behavior_log": self.behavior_log,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def _episode_rng(scenario: Scenario, seed: int) -> np.random.Generator:
    return np.random.default_rng(
        [scenario.seed & 0x7FFFFFFF, seed & 0x7FFFFFFF, 101]
    )


def _bump_observation(world, cell, pose, space, rng) -> Observation:
    """Contact-sense reveal of a cell the robot was about to enter."""
    idx = int(world.obj_grid[cell])
    name = world.objects[idx].class_name if idx >= 0 else "background"
    feats = space.observe_batch([name], rng)
    return Observation(
        origin=pose,
        free=np.zeros((0, 3), dtype=np.int32),
        hit_cells_arr=np.array([cell], dtype=np.int32),
        hit_feats=feats,
        far_dirs=np.zeros((0, 3)),
        far_feats=np.zeros((0, space.dimension)),
        far_origin_cells=np.zeros((0, 3), dtype=np.int32),
    )


def run_episode(
    scenario: Scenario,
    policy: PolicyKind,
    seed: int,
    config: EpisodeConfig = None,
    provider=None,
    audit: bool = False,
) -> EpisodeResult:
    """Deterministic closed-loop episode for one policy.

    Loop order each tick: sense (every integrate_period), pick a waypoint
    when none is active, advance one motion step, then check goal arrivals
    and the Type III reveal.
    """
    cfg = config or EpisodeConfig()
    world, task = scenario.world, scenario.task
    space = SemanticSpace(
        dimension=cfg.d_emb,
        noise_sigma=cfg.noise_sigma,
        max_cross_sim=cfg.max_cross_sim,
        seed=scenario.seed,
    )
    rng = _episode_rng(scenario, seed)
    mem = SemanticVoxelMap(world.dims, cfg.d_emb)
    rays = RayStore(prune_span=2.0 * cfg.sensor.max_depth)
    state = BehaviorState()
    if provider is None:
        provider = CooccurrenceOracle({}, cfg.behavior.j_aux)
    palette = world.class_names()
    branches = POLICY_BRANCHES[policy]
    progress = TaskProgress()
    goals = goal_instances(world, task)
    behavior_log = []

    pose0 = scenario.start
    pose, n_views = initialize(pose0, cfg.behavior, world, cfg.sensor.h_fov)
    path_len = pose.position.dist(pose0.position)
    for obs in panoramic_sense(world, pose, cfg.sensor, space, rng, n_views):
        integrate(mem, rays, obs, step=0)
    trajectory = [(0, pose0), (0, pose)]
    reach_events = []
    vox_events = []  # (kind, cluster key) for the visited-monotonicity audit

    def check_reaches(t):
        # a set-1 arrival reveals set 2 the same tick, so loop to fixpoint
        while True:
            active = set(active_queries(task, progress))
            changed = False
            for obj in goals:
                if obj.id in progress.reached or obj.class_name not in active:
                    continue
                if is_reached(pose, obj, scenario.r_succ):
                    progress.reached.add(obj.id)
                    reach_events.append((t, obj.id, path_len))
                    changed = True
            if (
                task.kind is TaskKind.TYPE_III
                and progress.revealed_sets == 1
                and any(
                    o.id in progress.reached
                    for o in goals
                    if o.class_name in set(task.class_sets[0])
                )
            ):
                progress.revealed_sets = 2
                changed = True
            if not changed:
                return

    check_reaches(0)
    terminated = None
    path: Optional[PathResult] = None
    path_index = 0
    replans = 0
    steps = 0
    if len(progress.reached) == len(goals):
        terminated = "all_goals"

    for t in range(1, scenario.budget_steps + 1):
        if terminated:
            break
        steps = t
        state.step_clock = t
        if t % cfg.sensor.integrate_period == 0:
            integrate(mem, rays, sense(world, pose, cfg.sensor, space, rng), t)
        if state.current_waypoint is None:
            for _ in range(5):
                try:
                    tag, wp = tick(
                        state, mem, rays, task, progress, pose, cfg.behavior,
                        space, provider, palette, world.dims, branches,
                    )
                except StallError:
                    terminated = "stall"
                    break
                if tag is Behavior.VOXEL_SEARCH:
                    vox_events.append(("choose", state.pending_key))
                behavior_log.append(
                    {
                        "step": t,
                        "behavior": tag.value,
                        "waypoint": [wp.x, wp.y, wp.z],
                        "queries": list(active_queries(task, progress))
                        + sorted(state.aux_queries if tag is Behavior.AUX_SEARCH else []),
                    }
                )
                try:
                    path = plan_path(mem, pose.position, wp, cfg.nav)
                    path_index = 0
                    replans = 0
                    break
                except Unreachable:
                    state.mark_unreachable(cfg.behavior.blacklist_ticks)
                    path = None
            if terminated:
                break
        if state.current_waypoint is not None and path is not None:
            # contact guard: reveal a truth-occupied cell before entering it
            for n in range(1, cfg.nav.speed + 1):
                if path_index + n >= len(path.waypoints):
                    break
                cell = cell_of(path.waypoints[path_index + n])
                if world.occ_grid[cell]:
                    integrate(mem, rays, _bump_observation(world, cell, pose, space, rng), t)
                    break
            adv = advance(pose, path, path_index, mem, cfg.nav)
            if adv.replan:
                replans += 1
                wp = state.current_waypoint[0]
                try:
                    if replans > cfg.nav.max_replans:
                        raise Unreachable("replan budget exhausted")
                    path = plan_path(mem, pose.position, wp, cfg.nav)
                    path_index = 0
                except Unreachable:
                    state.mark_unreachable(cfg.behavior.blacklist_ticks)
                    path = None
            else:
                pose = adv.pose
                path_index = adv.index
                path_len += adv.moved
                if adv.arrived:
                    if state.current_waypoint[1] is Behavior.VOXEL_SEARCH:
                        vox_events.append(("arrive", state.pending_key))
                    state.mark_arrival(cfg.behavior.blacklist_ticks)
                    path = None
        trajectory.append((t, pose))
        check_reaches(t)
        if len(progress.reached) == len(goals):
            terminated = "all_goals"
    if terminated is None:
        terminated = "budget"

    audit_info = None
    if audit:
        rescan = mem.frontier_rescan()
        collisions = sum(
            1 for _, p in trajectory if world.occ_grid[cell_of(p.position)]
        )
        visited_so_far = set()
        revisit_violations = 0
        for kind, key in vox_events:
            if kind == "choose" and key in visited_so_far:
                revisit_violations += 1
            elif kind == "arrive":
                visited_so_far.add(key)
        cos_floor = math.cos(math.radians(cfg.behavior.theta_thresh_deg))
        audit_info = {
            "frontier_exact": bool((mem.frontier_grid == rescan).all()),
            "occupancy_monotone": mem.downgrade_attempts == 0,
            "collisions": collisions,
            "visited_revisits": revisit_violations,
            "bin_join_ok": bool(state.min_join_cos >= cos_floor - 1e-12),
        }
    return EpisodeResult(
        policy=policy.value,
        seed=seed,
        trajectory=trajectory,
        reach_events=reach_events,
        behavior_log=behavior_log,
        terminated_by=terminated,
        path_length=path_len,
        steps=steps,
        audit=audit_info,
    )


# ---------------------------------------------------------------------------
# metrics


def progress_metric(result: EpisodeResult, task, world) -> float:
    m = len(goal_instances(world, task))
    if m == 0:
        raise ValueError("task has no goal instances")
    return len(result.reach_events) / m


def optimal_visit_length(world, start: Vec3, goals, k: int, r_succ: float) -> float:
    """Best achievable length visiting the best k goals in the best order.

    Leg distances are 26-connected shortest paths through ground-truth
    free space; arrival at a goal means touching its r_succ-dilated box.
    Unreachable goals drop out of consideration; if every size-k subset
    needs one, that's an error.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(goals):
        raise ValueError("k exceeds number of goals")
    passable = world.occ_grid == 0
    start_cell = cell_of(start)
    fields = []
    regions = []
    for obj in goals:
        region = goal_region_cells(world, obj, r_succ)
        regions.append(region)
        if region.shape[0] == 0:
            fields.append(None)
            continue
        fields.append(K.distance_field(passable, region))
    n = len(goals)
    d_start = np.full(n, np.inf)
    for a in range(n):
        if fields[a] is not None:
            d_start[a] = fields[a][start_cell]
    d_pair = np.full((n, n), np.inf)
    for a in range(n):
        if fields[a] is None:
            continue
        for b in range(n):
            if a == b or regions[b].shape[0] == 0:
                continue
            rb = regions[b]
            d_pair[a, b] = float(fields[a][rb[:, 0], rb[:, 1], rb[:, 2]].min())
    reachable = [a for a in range(n) if math.isfinite(d_start[a])]
    best = math.inf
    for subset in itertools.combinations(reachable, k):
        for perm in itertools.permutations(subset):
            total = d_start[perm[0]]
            ok = True
            for a, b in zip(perm, perm[1:]):
                leg = d_pair[a, b]
                if not math.isfinite(leg):
                    ok = False
                    break
                total = total + leg
            if ok and total < best:
                best = float(total)
    if not math.isfinite(best):
        raise ValueError("no reachable subset of the requested size")
    return best


def ppl_metric(result: EpisodeResult, task, world, r_succ: float) -> float:
    """(d_K / p) * (K / M), zero when nothing was reached.

    p is the executed path length at the K-th reach event; the ratio is
    clamped to 1 to guard discretization at p ~ d_K.
    """
    m = len(goal_instances(world, task))
    k = len(result.reach_events)
    if k == 0:
        return 0.0
    p = result.reach_events[-1][2]
    start = result.trajectory[0][1].position
    d_k = optimal_visit_length(world, start, goal_instances(world, task), k, r_succ)
    ratio = 1.0 if p == 0.0 else min(d_k / p, 1.0)
    return ratio * (k / m)


# ---------------------------------------------------------------------------
# benchmark


CSV_HEADER = "policy,scenario,seed,task_type,progress,ppl,steps,path_length,terminated_by"


def episode_row(name, scenario, policy, seed, config=None, provider=None, audit=False):
    result = run_episode(scenario, policy, seed, config=config, provider=provider, audit=audit)
    prog = progress_metric(result, scenario.task, scenario.world)
    ppl = ppl_metric(result, scenario.task, scenario.world, scenario.r_succ)
    row = {
        "policy": policy.value,
        "scenario": name,
        "seed": seed,
        "task_type": scenario.task.kind.value,
        "progress": prog,
        "ppl": ppl,
        "steps": result.steps,
        "path_length": result.path_length,
        "terminated_by": result.terminated_by,
    }
    return row, result


def _bench_one_scenario(args):
    name, scenario, policies, seeds, config, table, audit = args
    provider = CooccurrenceOracle(table, (config or EpisodeConfig()).behavior.j_aux)
    rows = []
    audits = []
    for policy in policies:
        for seed in seeds:
            try:
                row, result = episode_row(
                    name, scenario, policy, seed, config=config, provider=provider, audit=audit
                )
            except Exception:  # noqa: BLE001 - partial failures become rows
                rows.append(
                    {
                        "policy": policy.value,
                        "scenario": name,
                        "seed": seed,
                        "task_type": scenario.task.kind.value,
                        "progress": 0.0,
                        "ppl": 0.0,
                        "steps": 0,
                        "path_length": 0.0,
                        "terminated_by": "error",
                    }
                )
                continue
            rows.append(row)
            if audit:
                audits.append((row, result.audit, result))
    return rows, audits


@dataclass
class MetricsReport:
    rows: list  # per-episode dicts
    aggregates: list  # dicts grouped by (task_type, policy)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in sorted(self.rows, key=lambda r: (r["policy"], r["scenario"], r["seed"])):
            lines.append(
                "%s,%s,%d,%s,%s,%s,%d,%s,%s"
                % (
                    r["policy"],
                    r["scenario"],
                    r["seed"],
                    r["task_type"],
                    repr(r["progress"]),
                    repr(r["ppl"]),
                    r["steps"],
                    repr(r["path_length"]),
                    r["terminated_by"],
                )
            )
        return "\n".join(lines) + "\n"

    def aggregate_table(self) -> str:
        lines = ["task_type,policy,n,progress,ppl"]
        for a in self.aggregates:
            lines.append(
                "%s,%s,%d,%s,%s"
                % (a["task_type"], a["policy"], a["n"], repr(a["progress"]), repr(a["ppl"]))
            )
        return "\n".join(lines) + "\n"

    def mean_progress(self, policy, task_type="all") -> float:
        for a in self.aggregates:
            if a["policy"] == policy and a["task_type"] == task_type:
                return a["progress"]
        raise KeyError((policy, task_type))


def aggregate_rows(rows) -> list:
    groups = {}
    for r in rows:
        for tt in (r["task_type"], "all"):
            groups.setdefault((tt, r["policy"]), []).append(r)
    out = []
    for (tt, pol) in sorted(groups):
        rs = groups[(tt, pol)]
        out.append(
            {
                "task_type": tt,
                "policy": pol,
                "n": len(rs),
                "progress": sum(r["progress"] for r in rs) / len(rs),
                "ppl": sum(r["ppl"] for r in rs) / len(rs),
            }
        )
    return out


def run_benchmark(
    suite,
    policies,
    seeds,
    jobs: int = 1,
    config: EpisodeConfig = None,
    cooc_table: dict = None,
    audit: bool = False,
) -> MetricsReport:
    """Cross product of scenarios x policies x seeds.

    Episodes of one scenario stay in one task so metric distance fields
    are computed once per scenario; output is fully ordered and therefore
    independent of the job count.
    """
    if not suite:
        raise ValueError("empty suite")
    table = cooc_table or {}
    tasks = [
        (name, scenario, tuple(policies), tuple(seeds), config, table, audit)
        for name, scenario in suite
    ]
    all_rows = []
    all_audits = []
    if jobs <= 1:
        results = map(_bench_one_scenario, tasks)
    else:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            results = pool.map(_bench_one_scenario, tasks)
    for rows, audits in results:
        all_rows.extend(rows)
        all_audits.extend(audits)
    all_rows.sort(key=lambda r: (r["policy"], r["scenario"], r["seed"]))
    report = MetricsReport(rows=all_rows, aggregates=aggregate_rows(all_rows))
    report.audits = all_audits
    return report


# ---------------------------------------------------------------------------
# plotting (optional)


def plot_trajectory(result: EpisodeResult, scenario: Scenario, out_path: str):
    """Planar-projection SVG of the trajectory colored by behavior."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 7))
    nx, ny, _ = scenario.world.dims
    # obstacle footprint
    footprint = scenario.world.occ_grid[:, :, 1:].any(axis=2)
    ax.imshow(
        footprint.T, origin="lower", cmap="Greys", alpha=0.35,
        extent=(0, nx, 0, ny),
    )
    for obj in scenario.world.objects:
        mn, mx = obj.aabb_min, obj.aabb_max
        ax.add_patch(
            plt.Rectangle(
                (mn[0], mn[1]), mx[0] + 1 - mn[0], mx[1] + 1 - mn[1],
                fill=False, edgecolor="tab:red", linewidth=1.0,
            )
        )
        ax.annotate(obj.class_name, (mn[0], mx[1] + 1), fontsize=6, color="tab:red")
    colors = {
        "VoxelSearch": "tab:green",
        "RaySearch": "tab:blue",
        "AuxSearch": "tab:purple",
        "FrontierExplore": "tab:orange",
        "VlfmFrontier": "tab:brown",
    }
    # color each segment by the behavior active at that tick
    tag_by_tick = {}
    cur = None
    log_iter = iter(result.behavior_log)
    rec = next(log_iter, None)
    for t, _ in result.trajectory:
        while rec is not None and rec["step"] <= t:
            cur = rec["behavior"]
            rec = next(log_iter, None)
        tag_by_tick[t] = cur
    pts = [(t, p) for t, p in result.trajectory]
    for (t0, p0), (t1, p1) in zip(pts, pts[1:]):
        ax.plot(
            [p0.position.x, p1.position.x],
            [p0.position.y, p1.position.y],
            color=colors.get(tag_by_tick.get(t1), "grey"),
            linewidth=1.2,
        )
    start = result.trajectory[0][1].position
    ax.plot(start.x, start.y, "k^", markersize=8)
    ax.set_xlim(0, nx)
    ax.set_ylim(0, ny)
    ax.set_aspect("equal")
    ax.set_title(f"{result.policy} ({result.terminated_by})")
    fig.savefig(out_path, format="svg")
    plt.close(fig)
