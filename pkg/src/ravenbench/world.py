"""Static 3D environments, task specs, scenario documents, world generation.

Worlds are axis-aligned voxel grids with a solid ground plane at k=0,
box obstacles, and semantic objects (solid boxes with a class name).
Scenario documents are a line-oriented text format with a canonical form
(sorted ids and spans, lowercase class names, LF endings) that round-trips
byte-exactly.
"""

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .core import Pose, Vec3, cell_of

DEFAULT_R_SUCC = 2.0
DEFAULT_VOXEL_SIZE = 0.5


class ScenarioError(ValueError):
    """Validation failure in a scenario document or generator config."""


class ParseError(ScenarioError):
    def __init__(self, line_no, msg):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


@dataclass(frozen=True)
class SemanticObject:
    id: int
    class_name: str
    aabb_min: tuple
    aabb_max: tuple  # inclusive

    def cell_array(self) -> np.ndarray:
        (i0, j0, k0), (i1, j1, k1) = self.aabb_min, self.aabb_max
        ii, jj, kk = np.mgrid[i0 : i1 + 1, j0 : j1 + 1, k0 : k1 + 1]
        return np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1).astype(np.int32)

    def surface_distance(self, p: Vec3) -> float:
        """Euclidean distance from a point to the solid box (0 inside).

        Cell (i,j,k) spans [i,i+1) per axis, so the box extends from
        aabb_min to aabb_max+1 in world units.
        """
        dx = max(self.aabb_min[0] - p.x, 0.0, p.x - (self.aabb_max[0] + 1))
        dy = max(self.aabb_min[1] - p.y, 0.0, p.y - (self.aabb_max[1] + 1))
        dz = max(self.aabb_min[2] - p.z, 0.0, p.z - (self.aabb_max[2] + 1))
        return math.sqrt(dx * dx + dy * dy + dz * dz)


class TaskKind(enum.Enum):
    TYPE_I = "I"
    TYPE_II = "II"
    TYPE_III = "III"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind
    class_sets: tuple  # tuple of tuples of class names, declaration order

    def __post_init__(self):
        sets = self.class_sets
        if self.kind is TaskKind.TYPE_III:
            if len(sets) != 2:
                raise ScenarioError("Type III task needs exactly two class sets")
        else:
            if len(sets) != 1:
                raise ScenarioError(f"{self.kind.value} task needs one class set")
            if self.kind is TaskKind.TYPE_I and len(sets[0]) != 1:
                raise ScenarioError("Type I task needs exactly one class")
        for s in sets:
            if not s:
                raise ScenarioError("empty class set")

    def all_classes(self):
        out = []
        for s in self.class_sets:
            for c in s:
                if c not in out:
                    out.append(c)
        return tuple(out)


@dataclass
class TaskProgress:
    reached: set = field(default_factory=set)
    revealed_sets: int = 1


class WorldModel:
    """Ground-truth scene: occupancy plus semantic objects.

    occupied holds every solid cell (terrain, clutter, object cells).
    occ_grid/obj_grid are derived dense caches used by the kernels.
    """

    def __init__(self, dims, occupied, objects, voxel_size=DEFAULT_VOXEL_SIZE):
        self.dims = tuple(int(d) for d in dims)
        self.objects = tuple(objects)
        self.voxel_size = float(voxel_size)
        occupied = set(occupied)
        for obj in self.objects:
            occupied.update(map(tuple, obj.cell_array().tolist()))
        self.occupied = frozenset(occupied)
        self._validate()
        nx, ny, nz = self.dims
        self.occ_grid = np.zeros((nx, ny, nz), dtype=np.uint8)
        if occupied:
            cells = np.array(sorted(self.occupied), dtype=np.int64)
            self.occ_grid[cells[:, 0], cells[:, 1], cells[:, 2]] = 1
        self.obj_grid = np.full((nx, ny, nz), -1, dtype=np.int32)
        for idx, obj in enumerate(self.objects):
            c = obj.cell_array()
            self.obj_grid[c[:, 0], c[:, 1], c[:, 2]] = idx

    def _validate(self):
        nx, ny, nz = self.dims
        if min(self.dims) <= 0:
            raise ScenarioError(f"dims must be positive, got {self.dims}")
        seen_ids = set()
        for obj in self.objects:
            if obj.id in seen_ids:
                raise ScenarioError(f"duplicate object id {obj.id}")
            seen_ids.add(obj.id)
            mn, mx = obj.aabb_min, obj.aabb_max
            if any(a > b for a, b in zip(mn, mx)):
                raise ScenarioError(f"object {obj.id}: empty aabb {mn}..{mx}")
            if (
                min(mn) < 0
                or mx[0] >= nx
                or mx[1] >= ny
                or mx[2] >= nz
            ):
                raise ScenarioError(
                    f"object {obj.id}: aabb {mn}..{mx} exceeds dims {self.dims}"
                )
        for c in self.occupied:
            if not (0 <= c[0] < nx and 0 <= c[1] < ny and 0 <= c[2] < nz):
                raise ScenarioError(f"occupied cell {c} out of bounds")

    def in_bounds(self, cell) -> bool:
        nx, ny, nz = self.dims
        return 0 <= cell[0] < nx and 0 <= cell[1] < ny and 0 <= cell[2] < nz

    def class_names(self):
        return tuple(sorted({o.class_name for o in self.objects}))

    def objects_of_class(self, name):
        return [o for o in self.objects if o.class_name == name]


@dataclass
class Scenario:
    world: WorldModel
    task: TaskSpec
    start: Pose
    budget_steps: int
    seed: int
    r_succ: float = DEFAULT_R_SUCC

    def __post_init__(self):
        if self.budget_steps < 0:
            raise ScenarioError("budget_steps must be nonnegative")
        if self.r_succ <= 0:
            raise ScenarioError("r_succ must be positive")
        c = cell_of(self.start.position)
        if not self.world.in_bounds(c):
            raise ScenarioError(f"start {c} out of bounds")
        if c in self.world.occupied:
            raise ScenarioError(f"start cell {c} is occupied")
        for cls in self.task.all_classes():
            if not self.world.objects_of_class(cls):
                raise ScenarioError(f"task class {cls!r} has no instances")


def goal_instances(world: WorldModel, task: TaskSpec):
    """All goal objects across every class set, id order. len == M."""
    classes = set(task.all_classes())
    return [o for o in sorted(world.objects, key=lambda o: o.id) if o.class_name in classes]


def active_queries(task: TaskSpec, progress: TaskProgress):
    """Class names currently queryable, in task declaration order.

    Types I/II expose every class immediately; Type III exposes the
    second set only once a first-set goal has been reached.
    """
    if task.kind is TaskKind.TYPE_III and progress.revealed_sets < 2:
        sets = task.class_sets[:1]
    else:
        sets = task.class_sets
    out = []
    for s in sets:
        for c in s:
            if c not in out:
                out.append(c)
    return tuple(out)


def is_reached(pose: Pose, obj: SemanticObject, r_succ: float) -> bool:
    """Closed-ball test against the object's solid box surface."""
    if r_succ <= 0:
        raise ValueError("r_succ must be positive")
    return obj.surface_distance(pose.position) <= r_succ


def goal_region_cells(world: WorldModel, obj: SemanticObject, r_succ: float) -> np.ndarray:
    """Free cells whose center is within r_succ of the object box."""
    nx, ny, nz = world.dims
    r = int(math.ceil(r_succ)) + 1
    i0 = max(obj.aabb_min[0] - r, 0)
    j0 = max(obj.aabb_min[1] - r, 0)
    k0 = max(obj.aabb_min[2] - r, 0)
    i1 = min(obj.aabb_max[0] + r, nx - 1)
    j1 = min(obj.aabb_max[1] + r, ny - 1)
    k1 = min(obj.aabb_max[2] + r, nz - 1)
    out = []
    for i in range(i0, i1 + 1):
        for j in range(j0, j1 + 1):
            for k in range(k0, k1 + 1):
                if world.occ_grid[i, j, k]:
                    continue
                if obj.surface_distance(Vec3(i + 0.5, j + 0.5, k + 0.5)) <= r_succ:
                    out.append((i, j, k))
    return np.array(out, dtype=np.int32).reshape(-1, 3)


# ---------------------------------------------------------------------------
# scenario document format


def _fmt(x: float) -> str:
    return repr(float(x))


def save_scenario(sc: Scenario) -> str:
    """Canonical document: fixed section order, sorted ids/spans/classes."""
    lines = ["[world]"]
    lines.append("dims = %d %d %d" % sc.world.dims)
    lines.append("voxel_size = " + _fmt(sc.world.voxel_size))
    object_cells = set()
    for obj in sc.world.objects:
        object_cells.update(map(tuple, obj.cell_array().tolist()))
    extra = sorted(
        (c for c in sc.world.occupied if c not in object_cells),
        key=lambda c: (c[2], c[1], c[0]),
    )
    lines.append("[occupied]")
    idx = 0
    while idx < len(extra):
        i, j, k = extra[idx]
        run = 1
        while (
            idx + run < len(extra)
            and extra[idx + run] == (i + run, j, k)
        ):
            run += 1
        lines.append("span = %d %d %d %d" % (i, j, k, run))
        idx += run
    for obj in sorted(sc.world.objects, key=lambda o: o.id):
        lines.append("[object]")
        lines.append("id = %d" % obj.id)
        lines.append("class = " + obj.class_name.lower())
        lines.append("min = %d %d %d" % obj.aabb_min)
        lines.append("max = %d %d %d" % obj.aabb_max)
    lines.append("[task]")
    lines.append("kind = " + sc.task.kind.value)
    for s in sc.task.class_sets:
        lines.append("set = " + ", ".join(sorted(c.lower() for c in s)))
    lines.append("[episode]")
    p, h = sc.start.position, sc.start.heading
    lines.append("start = %s %s %s" % (_fmt(p.x), _fmt(p.y), _fmt(p.z)))
    lines.append("heading = %s %s %s" % (_fmt(h.x), _fmt(h.y), _fmt(h.z)))
    lines.append("budget_steps = %d" % sc.budget_steps)
    lines.append("seed = %d" % sc.seed)
    lines.append("r_succ = " + _fmt(sc.r_succ))
    return "\n".join(lines) + "\n"


def _parse_ints(val, n, line_no, what):
    parts = val.split()
    if len(parts) != n:
        raise ParseError(line_no, f"{what}: expected {n} integers, got {val!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ParseError(line_no, f"{what}: bad integer in {val!r}") from None


def _parse_floats(val, n, line_no, what):
    parts = val.split()
    if len(parts) != n:
        raise ParseError(line_no, f"{what}: expected {n} numbers, got {val!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ParseError(line_no, f"{what}: bad number in {val!r}") from None


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document."""
    section = None
    dims = None
    voxel_size = DEFAULT_VOXEL_SIZE
    spans = []
    objects = []
    cur_obj: Optional[dict] = None
    kind = None
    class_sets = []
    episode = {}

    def finish_object(line_no):
        if cur_obj is None:
            return
        for key in ("id", "class", "min", "max"):
            if key not in cur_obj:
                raise ParseError(line_no, f"object missing field {key!r}")
        objects.append(
            SemanticObject(
                id=cur_obj["id"],
                class_name=cur_obj["class"],
                aabb_min=cur_obj["min"],
                aabb_max=cur_obj["max"],
            )
        )

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(line_no, f"malformed section header {line!r}")
            if section == "object":
                finish_object(line_no)
                cur_obj = None
            section = line[1:-1]
            if section not in ("world", "occupied", "object", "task", "episode"):
                raise ParseError(line_no, f"unknown section {section!r}")
            if section == "object":
                cur_obj = {}
            continue
        if "=" not in line:
            raise ParseError(line_no, f"expected 'key = value', got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if section == "world":
            if key == "dims":
                dims = _parse_ints(val, 3, line_no, "dims")
            elif key == "voxel_size":
                voxel_size = _parse_floats(val, 1, line_no, "voxel_size")[0]
            else:
                raise ParseError(line_no, f"unknown world field {key!r}")
        elif section == "occupied":
            if key != "span":
                raise ParseError(line_no, f"unknown occupied field {key!r}")
            i, j, k, n = _parse_ints(val, 4, line_no, "span")
            if n < 1:
                raise ParseError(line_no, f"span length must be >= 1, got {n}")
            spans.append((i, j, k, n))
        elif section == "object":
            if key == "id":
                cur_obj["id"] = _parse_ints(val, 1, line_no, "id")[0]
            elif key == "class":
                if not val:
                    raise ParseError(line_no, "empty class name")
                cur_obj["class"] = val.lower()
            elif key in ("min", "max"):
                cur_obj[key] = _parse_ints(val, 3, line_no, key)
            else:
                raise ParseError(line_no, f"unknown object field {key!r}")
        elif section == "task":
            if key == "kind":
                try:
                    kind = TaskKind(val)
                except ValueError:
                    raise ParseError(line_no, f"unknown task kind {val!r}") from None
            elif key == "set":
                names = tuple(
                    sorted({c.strip().lower() for c in val.split(",") if c.strip()})
                )
                if not names:
                    raise ParseError(line_no, "empty class set")
                class_sets.append(names)
            else:
                raise ParseError(line_no, f"unknown task field {key!r}")
        elif section == "episode":
            if key in ("start", "heading"):
                episode[key] = _parse_floats(val, 3, line_no, key)
            elif key in ("budget_steps", "seed"):
                episode[key] = _parse_ints(val, 1, line_no, key)[0]
            elif key == "r_succ":
                episode[key] = _parse_floats(val, 1, line_no, key)[0]
            else:
                raise ParseError(line_no, f"unknown episode field {key!r}")
        else:
            raise ParseError(line_no, f"field {key!r} outside any section")
    if section == "object":
        finish_object(len(text.splitlines()))

    if dims is None:
        raise ScenarioError("missing [world] dims")
    if kind is None:
        raise ScenarioError("missing [task] kind")
    for key in ("start", "heading", "budget_steps", "seed"):
        if key not in episode:
            raise ScenarioError(f"missing [episode] {key}")

    occupied = set()
    for i, j, k, n in spans:
        for d in range(n):
            occupied.add((i + d, j, k))
    world = WorldModel(dims, occupied, objects, voxel_size)
    task = TaskSpec(kind, tuple(class_sets))
    start = Pose(Vec3(*episode["start"]), Vec3(*episode["heading"]).unit())
    return Scenario(
        world=world,
        task=task,
        start=start,
        budget_steps=episode["budget_steps"],
        seed=episode["seed"],
        r_succ=episode.get("r_succ", DEFAULT_R_SUCC),
    )


# ---------------------------------------------------------------------------
# procedural generation


@dataclass
class GeneratorParams:
    """Knobs for procedural worlds; see docs/params example in README."""

    dims: tuple = (128, 128, 20)
    starts_per_world: int = 3
    start_edge_band: int = 14  # starts stay within this band of a border
    task_kinds: tuple = (TaskKind.TYPE_I, TaskKind.TYPE_II, TaskKind.TYPE_III)
    visible_classes: tuple = ("water tower", "radio tower", "silo", "crane")
    hidden_classes: tuple = ("fuel tank", "bus stop", "cabin")
    aux_classes: tuple = ("building", "warehouse")
    cooccurrence: dict = field(
        default_factory=lambda: {
            "fuel tank": ["building", "warehouse", "sidewalk"],
            "bus stop": ["building", "warehouse"],
            "cabin": ["warehouse", "building"],
        }
    )
    visible_per_world: int = 2
    hidden_per_world: int = 1
    aux_decoys: int = 0  # extra aux-class landmarks with no target nearby
    courtyard_walls: bool = True  # wall off hidden targets from distant view
    instances_range: tuple = (1, 2)
    visible_size: tuple = ((8, 9), (8, 9), (9, 10))  # (w, d, h) ranges
    hidden_size: tuple = ((6, 6), (6, 6), (3, 4))
    aux_size: tuple = ((9, 12), (9, 12), (12, 14))
    clutter_count: int = 48
    clutter_size: tuple = ((2, 6), (2, 6), (2, 7))
    budget_steps: int = 450
    r_succ: float = DEFAULT_R_SUCC
    margin: int = 4
    retry_cap: int = 20
    # fields consumed by generate_world directly
    task_kind: TaskKind = TaskKind.TYPE_I
    start_index: int = 0

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ScenarioError(f"dims: need three values >= 8, got {self.dims}")
        if self.dims[2] < 16:
            raise ScenarioError("dims: nz must be >= 16 to leave flight room")
        if self.starts_per_world < 1:
            raise ScenarioError("starts_per_world must be >= 1")
        if not self.visible_classes and not self.hidden_classes:
            raise ScenarioError("need at least one target class")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorParams":
        d = dict(d)
        if "task_kinds" in d:
            d["task_kinds"] = tuple(TaskKind(k) for k in d["task_kinds"])
        if "task_kind" in d:
            d["task_kind"] = TaskKind(d["task_kind"])
        for key in (
            "dims",
            "visible_classes",
            "hidden_classes",
            "aux_classes",
            "instances_range",
        ):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("visible_size", "hidden_size", "aux_size", "clutter_size"):
            if key in d:
                d[key] = tuple(tuple(r) for r in d[key])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ScenarioError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d)


class GenerationError(RuntimeError):
    pass


def _sample_box(rng, dims, size_ranges, margin, anchor=None, anchor_dist=None):
    """Random box footprint resting on the ground (min k = 1)."""
    nx, ny, _ = dims
    w = int(rng.integers(size_ranges[0][0], size_ranges[0][1] + 1))
    d = int(rng.integers(size_ranges[1][0], size_ranges[1][1] + 1))
    h = int(rng.integers(size_ranges[2][0], size_ranges[2][1] + 1))
    if anchor is None:
        i = int(rng.integers(margin, nx - margin - w))
        j = int(rng.integers(margin, ny - margin - d))
    else:
        lo, hi = anchor_dist
        ang = float(rng.uniform(0.0, 2.0 * math.pi))
        r = float(rng.uniform(lo, hi))
        i = int(round(anchor[0] + r * math.cos(ang)))
        j = int(round(anchor[1] + r * math.sin(ang)))
        i = min(max(i, margin), nx - margin - w)
        j = min(max(j, margin), ny - margin - d)
    return (i, j, 1), (i + w - 1, j + d - 1, h)


def _boxes_clear(mn, mx, placed, gap=2):
    for pmn, pmx in placed:
        if (
            mn[0] <= pmx[0] + gap
            and mx[0] >= pmn[0] - gap
            and mn[1] <= pmx[1] + gap
            and mx[1] >= pmn[1] - gap
        ):
            return False
    return True


def _build_world(params: GeneratorParams, seed: int, attempt: int):
    rng = np.random.default_rng([seed & 0x7FFFFFFF, attempt, 7])
    nx, ny, nz = params.dims
    placed = []  # (mn, mx) for all solid boxes
    objects = []
    next_id = 1

    def place(size_ranges, class_name=None, anchor=None, anchor_dist=None):
        nonlocal next_id
        for _ in range(60):
            mn, mx = _sample_box(
                rng, params.dims, size_ranges, params.margin, anchor, anchor_dist
            )
            if mx[2] >= nz - 2:
                continue
            if not _boxes_clear(mn, mx, placed):
                continue
            placed.append((mn, mx))
            if class_name is not None:
                objects.append(
                    SemanticObject(next_id, class_name, mn, mx)
                )
                next_id += 1
            return mn, mx
        raise GenerationError("box placement failed")

    n_inst = lambda: int(
        rng.integers(params.instances_range[0], params.instances_range[1] + 1)
    )

    def rotated(classes, n):
        if not classes:
            return []
        shift = seed % len(classes)
        ordered = list(classes[shift:]) + list(classes[:shift])
        return ordered[:n]

    vis = rotated(params.visible_classes, params.visible_per_world)
    hid = rotated(params.hidden_classes, params.hidden_per_world)
    for cls in vis:
        for _ in range(n_inst()):
            place(params.visible_size, cls)
    clutter_cells = set()

    def courtyard(mn, mx):
        """Blind wall ring two cells out, one cell above the target top.

        Blocks shallow lines of sight (distant views) while steep views
        from a nearby overflight annulus still reach the target top.
        """
        lo_i, hi_i = mn[0] - 3, mx[0] + 3
        lo_j, hi_j = mn[1] - 3, mx[1] + 3
        top = mx[2] + 1
        for i in range(lo_i, hi_i + 1):
            for j in range(lo_j, hi_j + 1):
                if lo_i < i < hi_i and lo_j < j < hi_j:
                    continue
                if not (0 <= i < nx and 0 <= j < ny):
                    continue
                for k in range(1, min(top, nz - 2) + 1):
                    clutter_cells.add((i, j, k))

    for cls in hid:
        aux_cls = (params.cooccurrence.get(cls) or params.aux_classes[:1] or [None])[0]
        for _ in range(n_inst()):
            if aux_cls is not None:
                amn, amx = place(params.aux_size, aux_cls)
                center = ((amn[0] + amx[0]) // 2, (amn[1] + amx[1]) // 2)
                hmn, hmx = place(params.hidden_size, cls, anchor=center, anchor_dist=(8, 12))
            else:
                hmn, hmx = place(params.hidden_size, cls)
            if params.courtyard_walls:
                courtyard(hmn, hmx)
    for d in range(params.aux_decoys):
        decoy_cls = params.aux_classes[d % len(params.aux_classes)] if params.aux_classes else None
        if decoy_cls is not None:
            place(params.aux_size, decoy_cls)
    for _ in range(params.clutter_count):
        try:
            mn, mx = place(params.clutter_size)
        except GenerationError:
            continue
        for i in range(mn[0], mx[0] + 1):
            for j in range(mn[1], mx[1] + 1):
                for k in range(mn[2], mx[2] + 1):
                    clutter_cells.add((i, j, k))
    ground = {(i, j, 0) for i in range(nx) for j in range(ny)}
    world = WorldModel(params.dims, ground | clutter_cells, objects)

    # start cells: free ground cells near a border (keeps typical goal
    # distances beyond the depth range), clear flight column, spread out
    starts = []
    band = params.start_edge_band
    for _ in range(400):
        if len(starts) >= params.starts_per_world:
            break
        side = int(rng.integers(0, 4))
        lo_i, hi_i = params.margin, nx - params.margin
        lo_j, hi_j = params.margin, ny - params.margin
        if side == 0:
            hi_i = params.margin + band
        elif side == 1:
            lo_i = nx - params.margin - band
        elif side == 2:
            hi_j = params.margin + band
        else:
            lo_j = ny - params.margin - band
        i = int(rng.integers(lo_i, hi_i))
        j = int(rng.integers(lo_j, hi_j))
        if any(world.occ_grid[i, j, 1:16]):
            continue
        if any(abs(i - si) + abs(j - sj) < 20 for si, sj, _ in starts):
            continue
        near_box = any(
            mn[0] - 2 <= i <= mx[0] + 2 and mn[1] - 2 <= j <= mx[1] + 2
            for mn, mx in placed
        )
        if near_box:
            continue
        starts.append((i, j, 1))
    if len(starts) < params.starts_per_world:
        raise GenerationError("could not place start poses")
    return world, rng, starts


def generate_world(params: GeneratorParams, seed: int) -> Scenario:
    """One deterministic scenario; world layout depends only on seed.

    The task and start pose are drawn from streams keyed by
    (seed, task_kind, start_index), so every scenario sharing a seed
    shares the same world.
    """
    last_err = None
    for attempt in range(params.retry_cap):
        try:
            world, _, starts = _build_world(params, seed, attempt)
            task_rng = np.random.default_rng(
                [
                    seed & 0x7FFFFFFF,
                    attempt,
                    11,
                    list(TaskKind).index(params.task_kind),
                    params.start_index,
                ]
            )
            task = _pick_task(params, world, task_rng)
            si, sj, sk = starts[params.start_index % len(starts)]
            yaw = float(task_rng.uniform(0.0, 2.0 * math.pi))
            start = Pose(
                Vec3(si + 0.5, sj + 0.5, sk + 0.5),
                Vec3(math.cos(yaw), math.sin(yaw), 0.0).unit(),
            )
            sc = Scenario(
                world=world,
                task=task,
                start=start,
                budget_steps=params.budget_steps,
                seed=seed,
                r_succ=params.r_succ,
            )
            _check_reachable(sc)
            return sc
        except (GenerationError, ScenarioError) as e:
            last_err = e
    raise GenerationError(f"generation retry cap exceeded: {last_err}")


def _pick_task(params: GeneratorParams, world: WorldModel, rng) -> TaskSpec:
    present = {c for o in world.objects for c in [o.class_name]}
    vis = [c for c in params.visible_classes if c in present]
    hid = [c for c in params.hidden_classes if c in present]
    kind = params.task_kind

    def count(classes):
        return sum(len(world.objects_of_class(c)) for c in classes)

    if kind is TaskKind.TYPE_I:
        pool = hid + vis if rng.random() < 0.5 and hid else vis + hid
        cls = pool[int(rng.integers(0, len(pool)))]
        return TaskSpec(kind, ((cls,),))
    if kind is TaskKind.TYPE_II:
        picks = []
        if vis:
            picks.append(vis[int(rng.integers(0, len(vis)))])
        if hid:
            picks.append(hid[int(rng.integers(0, len(hid)))])
        if len(picks) < 2 and len(vis) >= 2:
            extra = [c for c in vis if c not in picks]
            picks.append(extra[int(rng.integers(0, len(extra)))])
        picks = picks[:3]
        while count(picks) > 7 and len(picks) > 1:
            picks.pop()
        return TaskSpec(kind, (tuple(sorted(picks)),))
    first_pool = vis or hid
    first = first_pool[int(rng.integers(0, len(first_pool)))]
    second_pool = [c for c in hid + vis if c != first]
    second = second_pool[int(rng.integers(0, len(second_pool)))]
    return TaskSpec(kind, ((first,), (second,)))


def _check_reachable(sc: Scenario):
    """Every goal's dilated region must be reachable through free space."""
    free = sc.world.occ_grid == 0
    start_cell = np.array([cell_of(sc.start.position)], dtype=np.int32)
    field_grid = K.distance_field(free, start_cell)
    for obj in goal_instances(sc.world, sc.task):
        region = goal_region_cells(sc.world, obj, sc.r_succ)
        if region.shape[0] == 0:
            raise GenerationError(f"goal {obj.id} has no free arrival cells")
        d = field_grid[region[:, 0], region[:, 1], region[:, 2]]
        if not np.isfinite(d).any():
            raise GenerationError(f"goal {obj.id} unreachable from start")
    total = len(goal_instances(sc.world, sc.task))
    if total == 0:
        raise GenerationError("task has no goal instances")
    if total > 7:
        raise GenerationError(f"too many goal instances ({total} > 7)")
