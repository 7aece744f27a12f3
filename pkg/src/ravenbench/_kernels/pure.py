"""Pure-Python reference implementations of the hot grid kernels.

The compiled extension (`_native`) must reproduce these results exactly:
same traversal order, same tie-breaking, same float64 arithmetic. The
equivalence is enforced by tests/test_kernels.py and measured by
benchmarks/kernel_bench.py.
"""

import heapq
import math

import numpy as np

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

_STEP_COST = (0.0, 1.0, SQRT2, SQRT3)

# fixed neighbor order: di, dj, dk in lexicographic order, center excluded
NEIGHBORS26 = tuple(
    (di, dj, dk, _STEP_COST[abs(di) + abs(dj) + abs(dk)])
    for di in (-1, 0, 1)
    for dj in (-1, 0, 1)
    for dk in (-1, 0, 1)
    if (di, dj, dk) != (0, 0, 0)
)

OCC_UNKNOWN = 0
OCC_FREE = 1
OCC_OCCUPIED = 2


def _dda_setup(o, d):
    """Initial cell index, step, t_max, t_delta for one axis."""
    i = int(math.floor(o))
    if d > 0.0:
        step = 1
        t_max = ((i + 1) - o) / d
        t_delta = 1.0 / d
    elif d < 0.0:
        step = -1
        t_max = (i - o) / d
        t_delta = -1.0 / d
    else:
        step = 0
        t_max = math.inf
        t_delta = math.inf
    return i, step, t_max, t_delta


def cast_rays(occ, obj, origin, dirs, max_depth, max_visibility):
    """Trace rays through a ground-truth occupancy grid.

    occ: uint8 (nx,ny,nz), 0 free / 1 occupied. obj: int32 object index
    per cell, -1 for none. dirs: float64 (N,3) unit directions.

    Returns (free, hits, far):
      free: int32 (M,3) cells traversed with entry distance <= max_depth,
            strictly before the first occupied cell (duplicates possible).
      hits: int32 (H,5) rows (ray, i, j, k, obj_idx) for first occupied
            cells with entry distance <= max_depth (obj_idx -1 = background).
      far:  int32 (F,5) rows (ray, bi, bj, bk, obj_idx) when the first
            occupied cell is an object cell with entry distance in
            (max_depth, max_visibility]; (bi,bj,bk) is the last traversed
            cell with entry distance <= max_depth (the boundary cell).
    """
    nx, ny, nz = occ.shape
    ox, oy, oz = float(origin[0]), float(origin[1]), float(origin[2])
    free_rows = []
    hit_rows = []
    far_rows = []
    for r in range(dirs.shape[0]):
        dx = float(dirs[r, 0])
        dy = float(dirs[r, 1])
        dz = float(dirs[r, 2])
        i, sx, tmx, tdx = _dda_setup(ox, dx)
        j, sy, tmy, tdy = _dda_setup(oy, dy)
        k, sz, tmz, tdz = _dda_setup(oz, dz)
        t = 0.0
        bi, bj, bk = i, j, k
        while 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
            if t > max_visibility:
                break
            if occ[i, j, k]:
                if t <= max_depth:
                    hit_rows.append((r, i, j, k, int(obj[i, j, k])))
                elif obj[i, j, k] >= 0:
                    far_rows.append((r, bi, bj, bk, int(obj[i, j, k])))
                break
            if t <= max_depth:
                free_rows.append((i, j, k))
                bi, bj, bk = i, j, k
            if tmx <= tmy and tmx <= tmz:
                i += sx
                t = tmx
                tmx += tdx
            elif tmy <= tmz:
                j += sy
                t = tmy
                tmy += tdy
            else:
                k += sz
                t = tmz
                tmz += tdz
    free = np.array(free_rows, dtype=np.int32).reshape(-1, 3)
    hits = np.array(hit_rows, dtype=np.int32).reshape(-1, 5)
    far = np.array(far_rows, dtype=np.int32).reshape(-1, 5)
    return free, hits, far


def ray_cells(origin, direction, dims, t_max_limit):
    """Cells traversed by one ray, entry distance <= t_max_limit, in order."""
    nx, ny, nz = dims
    i, sx, tmx, tdx = _dda_setup(float(origin[0]), float(direction[0]))
    j, sy, tmy, tdy = _dda_setup(float(origin[1]), float(direction[1]))
    k, sz, tmz, tdz = _dda_setup(float(origin[2]), float(direction[2]))
    t = 0.0
    out = []
    while 0 <= i < nx and 0 <= j < ny and 0 <= k < nz and t <= t_max_limit:
        out.append((i, j, k))
        if tmx <= tmy and tmx <= tmz:
            i += sx
            t = tmx
            tmx += tdx
        elif tmy <= tmz:
            j += sy
            t = tmy
            tmy += tdy
        else:
            k += sz
            t = tmz
            tmz += tdz
    return np.array(out, dtype=np.int32).reshape(-1, 3)


def plan_grid_path(occ, start, goal, unknown_traversable):
    """A* over a 26-connected grid with Euclidean edge costs.

    occ: uint8 (nx,ny,nz) with 0 unknown / 1 free / 2 occupied. Blocked
    cells are occupied ones, plus unknown ones when unknown_traversable
    is false. Ties in the open heap break on (f, linear index), which is
    lexicographic (i,j,k) order.

    Returns (path int32 (L,3) start..goal inclusive, cost) or None.
    """
    nx, ny, nz = occ.shape
    si, sj, sk = int(start[0]), int(start[1]), int(start[2])
    gi, gj, gk = int(goal[0]), int(goal[1]), int(goal[2])
    occ_flat = occ.reshape(-1)
    nyz = ny * nz

    def blocked(lin):
        v = occ_flat[lin]
        return v == OCC_OCCUPIED or (v == OCC_UNKNOWN and not unknown_traversable)

    s_lin = (si * ny + sj) * nz + sk
    g_lin = (gi * ny + gj) * nz + gk
    if blocked(g_lin) or blocked(s_lin):
        return None
    g_cost = np.full(nx * ny * nz, np.inf, dtype=np.float64)
    parent = np.full(nx * ny * nz, -1, dtype=np.int64)
    closed = np.zeros(nx * ny * nz, dtype=bool)
    g_cost[s_lin] = 0.0
    h0 = math.sqrt(
        float((si - gi) ** 2 + (sj - gj) ** 2 + (sk - gk) ** 2)
    )
    heap = [(h0, s_lin)]
    while heap:
        f, lin = heapq.heappop(heap)
        if closed[lin]:
            continue
        closed[lin] = True
        if lin == g_lin:
            path = []
            cur = lin
            while cur >= 0:
                path.append((cur // nyz, (cur // nz) % ny, cur % nz))
                cur = parent[cur]
            path.reverse()
            return np.array(path, dtype=np.int32), float(g_cost[g_lin])
        i, rem = divmod(lin, nyz)
        j, k = divmod(rem, nz)
        base = g_cost[lin]
        for di, dj, dk, w in NEIGHBORS26:
            ni = i + di
            nj = j + dj
            nk = k + dk
            if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                continue
            nlin = (ni * ny + nj) * nz + nk
            if closed[nlin] or blocked(nlin):
                continue
            ng = base + w
            if ng < g_cost[nlin]:
                g_cost[nlin] = ng
                parent[nlin] = lin
                h = math.sqrt(
                    float((ni - gi) ** 2 + (nj - gj) ** 2 + (nk - gk) ** 2)
                )
                heapq.heappush(heap, (ng + h, nlin))
    return None


def distance_field(passable, sources):
    """Multi-source Dijkstra distances over passable cells (26-connected).

    passable: bool/uint8 (nx,ny,nz). sources: int32 (S,3), assumed
    passable. Returns float64 grid, inf where unreachable or blocked.
    """
    nx, ny, nz = passable.shape
    pass_flat = passable.reshape(-1)
    dist = np.full(nx * ny * nz, np.inf, dtype=np.float64)
    nyz = ny * nz
    heap = []
    for s in range(sources.shape[0]):
        lin = (int(sources[s, 0]) * ny + int(sources[s, 1])) * nz + int(sources[s, 2])
        if dist[lin] > 0.0:
            dist[lin] = 0.0
            heap.append((0.0, lin))
    heapq.heapify(heap)
    done = np.zeros(nx * ny * nz, dtype=bool)
    while heap:
        d, lin = heapq.heappop(heap)
        if done[lin]:
            continue
        done[lin] = True
        i, rem = divmod(lin, nyz)
        j, k = divmod(rem, nz)
        for di, dj, dk, w in NEIGHBORS26:
            ni = i + di
            nj = j + dj
            nk = k + dk
            if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                continue
            nlin = (ni * ny + nj) * nz + nk
            if done[nlin] or not pass_flat[nlin]:
                continue
            nd = d + w
            if nd < dist[nlin]:
                dist[nlin] = nd
                heapq.heappush(heap, (nd, nlin))
    return dist.reshape(nx, ny, nz)


def _shifted_slices(shape, offset):
    """dst/src slice pair so that dst[x] aligns with src[x + offset]."""
    dst = []
    src = []
    for a, n in zip(offset, shape):
        if a >= 0:
            dst.append(slice(0, n - a))
            src.append(slice(a, n))
        else:
            dst.append(slice(-a, n))
            src.append(slice(0, n + a))
    return tuple(dst), tuple(src)


def dbscan_grid(mask, offsets, min_samples):
    """Lattice DBSCAN labels over a boolean grid.

    Core cells (>= min_samples stencil neighbors, self included) are
    labeled 1..n by connected components under the stencil in C scan
    order; border cells take the label of the core neighbor at the first
    matching stencil offset; everything else stays 0.
    """
    mask = mask.astype(bool)
    counts = mask.astype(np.int32)
    off_list = [tuple(o) for o in offsets.tolist()]
    for off in off_list:
        dst, src = _shifted_slices(mask.shape, off)
        counts[dst] += mask[src]
    core = mask & (counts >= min_samples)
    labels, _ = label_components(core.astype(np.uint8), offsets)
    border = mask & ~core
    if border.any() and labels.max() > 0:
        bcells = np.argwhere(border)
        blabels = np.zeros(bcells.shape[0], dtype=np.int32)
        dims = np.array(mask.shape)
        for off in off_list:
            todo = blabels == 0
            if not todo.any():
                break
            nb = bcells[todo] + off
            inb = ((nb >= 0) & (nb < dims)).all(axis=1)
            got = np.zeros(int(todo.sum()), dtype=np.int32)
            got[inb] = labels[nb[inb][:, 0], nb[inb][:, 1], nb[inb][:, 2]]
            blabels[todo] = got
        labels[bcells[:, 0], bcells[:, 1], bcells[:, 2]] = blabels
    return labels


def label_components(mask, offsets=None):
    """Connected component labels of a boolean grid.

    offsets is an int32 (K,3) adjacency stencil; None means standard
    26-connectivity. Components are numbered 1..n in order of their first
    cell in C scan order; 0 is background. Returns (labels int32 grid, n).
    """
    nx, ny, nz = mask.shape
    if offsets is None:
        neigh = [(di, dj, dk) for di, dj, dk, _ in NEIGHBORS26]
    else:
        neigh = [tuple(o) for o in offsets.tolist()]
    labels = np.zeros((nx, ny, nz), dtype=np.int32)
    n = 0
    for i0 in range(nx):
        for j0 in range(ny):
            for k0 in range(nz):
                if not mask[i0, j0, k0] or labels[i0, j0, k0]:
                    continue
                n += 1
                stack = [(i0, j0, k0)]
                labels[i0, j0, k0] = n
                while stack:
                    i, j, k = stack.pop()
                    for di, dj, dk in neigh:
                        ni = i + di
                        nj = j + dj
                        nk = k + dk
                        if (
                            0 <= ni < nx
                            and 0 <= nj < ny
                            and 0 <= nk < nz
                            and mask[ni, nj, nk]
                            and not labels[ni, nj, nk]
                        ):
                            labels[ni, nj, nk] = n
                            stack.append((ni, nj, nk))
    return labels, n
