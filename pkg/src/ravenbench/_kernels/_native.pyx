# Compiled twin of pure.py. Behavior must match the pure lane exactly:
# same traversal order, same (f, linear-index) heap tie-breaking, same
# float64 arithmetic. Any divergence is a bug caught by test_kernels.py.

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, floor, sqrt

cnp.import_array()

OCC_UNKNOWN = 0
OCC_FREE = 1
OCC_OCCUPIED = 2

cdef double SQRT2 = sqrt(2.0)
cdef double SQRT3 = sqrt(3.0)

cdef int[26] NDI
cdef int[26] NDJ
cdef int[26] NDK
cdef double[26] NWT

cdef void _init_neighbors():
    cdef int di, dj, dk, n = 0, a
    cdef double* costs = [0.0, 1.0, SQRT2, SQRT3]
    for di in range(-1, 2):
        for dj in range(-1, 2):
            for dk in range(-1, 2):
                if di == 0 and dj == 0 and dk == 0:
                    continue
                NDI[n] = di
                NDJ[n] = dj
                NDK[n] = dk
                a = abs(di) + abs(dj) + abs(dk)
                NWT[n] = costs[a]
                n += 1

_init_neighbors()


cdef inline void _axis_setup(double o, double d, long* idx, int* step,
                             double* t_max, double* t_delta):
    idx[0] = <long>floor(o)
    if d > 0.0:
        step[0] = 1
        t_max[0] = ((idx[0] + 1) - o) / d
        t_delta[0] = 1.0 / d
    elif d < 0.0:
        step[0] = -1
        t_max[0] = (idx[0] - o) / d
        t_delta[0] = -1.0 / d
    else:
        step[0] = 0
        t_max[0] = INFINITY
        t_delta[0] = INFINITY


def cast_rays(cnp.uint8_t[:, :, ::1] occ, cnp.int32_t[:, :, ::1] obj,
              origin, cnp.float64_t[:, ::1] dirs,
              double max_depth, double max_visibility):
    cdef long nx = occ.shape[0], ny = occ.shape[1], nz = occ.shape[2]
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef Py_ssize_t n_rays = dirs.shape[0]
    # generous caps: each ray records at most ~3*max_depth+3 free cells
    cdef Py_ssize_t free_cap = n_rays * (<Py_ssize_t>(3.0 * max_depth) + 4) + 16
    free_arr = np.empty((free_cap, 3), dtype=np.int32)
    hits_arr = np.empty((n_rays, 5), dtype=np.int32)
    far_arr = np.empty((n_rays, 5), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] free_v = free_arr
    cdef cnp.int32_t[:, ::1] hits_v = hits_arr
    cdef cnp.int32_t[:, ::1] far_v = far_arr
    cdef Py_ssize_t n_free = 0, n_hits = 0, n_far = 0, r
    cdef long i, j, k, bi, bj, bk
    cdef int sx, sy, sz
    cdef double dx, dy, dz, t, tmx, tmy, tmz, tdx, tdy, tdz
    for r in range(n_rays):
        dx = dirs[r, 0]
        dy = dirs[r, 1]
        dz = dirs[r, 2]
        _axis_setup(ox, dx, &i, &sx, &tmx, &tdx)
        _axis_setup(oy, dy, &j, &sy, &tmy, &tdy)
        _axis_setup(oz, dz, &k, &sz, &tmz, &tdz)
        t = 0.0
        bi = i
        bj = j
        bk = k
        while 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
            if t > max_visibility:
                break
            if occ[i, j, k]:
                if t <= max_depth:
                    hits_v[n_hits, 0] = <cnp.int32_t>r
                    hits_v[n_hits, 1] = <cnp.int32_t>i
                    hits_v[n_hits, 2] = <cnp.int32_t>j
                    hits_v[n_hits, 3] = <cnp.int32_t>k
                    hits_v[n_hits, 4] = obj[i, j, k]
                    n_hits += 1
                elif obj[i, j, k] >= 0:
                    far_v[n_far, 0] = <cnp.int32_t>r
                    far_v[n_far, 1] = <cnp.int32_t>bi
                    far_v[n_far, 2] = <cnp.int32_t>bj
                    far_v[n_far, 3] = <cnp.int32_t>bk
                    far_v[n_far, 4] = obj[i, j, k]
                    n_far += 1
                break
            if t <= max_depth:
                free_v[n_free, 0] = <cnp.int32_t>i
                free_v[n_free, 1] = <cnp.int32_t>j
                free_v[n_free, 2] = <cnp.int32_t>k
                n_free += 1
                bi = i
                bj = j
                bk = k
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
    return (
        free_arr[:n_free].copy(),
        hits_arr[:n_hits].copy(),
        far_arr[:n_far].copy(),
    )


def ray_cells(origin, direction, dims, double t_max_limit):
    cdef long nx = dims[0], ny = dims[1], nz = dims[2]
    cdef long i, j, k
    cdef int sx, sy, sz
    cdef double t = 0.0, tmx, tmy, tmz, tdx, tdy, tdz
    _axis_setup(<double>origin[0], <double>direction[0], &i, &sx, &tmx, &tdx)
    _axis_setup(<double>origin[1], <double>direction[1], &j, &sy, &tmy, &tdy)
    _axis_setup(<double>origin[2], <double>direction[2], &k, &sz, &tmz, &tdz)
    cdef Py_ssize_t cap = <Py_ssize_t>(3.0 * t_max_limit) + 4
    out_arr = np.empty((cap, 3), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out_v = out_arr
    cdef Py_ssize_t n = 0
    while 0 <= i < nx and 0 <= j < ny and 0 <= k < nz and t <= t_max_limit:
        out_v[n, 0] = <cnp.int32_t>i
        out_v[n, 1] = <cnp.int32_t>j
        out_v[n, 2] = <cnp.int32_t>k
        n += 1
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
    return out_arr[:n].copy()


# --- binary min-heap on (f, lin), matching Python tuple ordering ---

cdef struct Heap:
    double* f
    long long* lin
    Py_ssize_t size
    Py_ssize_t cap

cdef inline bint _less(Heap* h, Py_ssize_t a, Py_ssize_t b):
    if h.f[a] != h.f[b]:
        return h.f[a] < h.f[b]
    return h.lin[a] < h.lin[b]

cdef inline void _swap(Heap* h, Py_ssize_t a, Py_ssize_t b):
    cdef double tf = h.f[a]
    cdef long long tl = h.lin[a]
    h.f[a] = h.f[b]
    h.lin[a] = h.lin[b]
    h.f[b] = tf
    h.lin[b] = tl

from libc.stdlib cimport free, malloc, realloc


cdef int _heap_init(Heap* h, Py_ssize_t cap) except -1:
    h.f = <double*>malloc(cap * sizeof(double))
    h.lin = <long long*>malloc(cap * sizeof(long long))
    if h.f == NULL or h.lin == NULL:
        raise MemoryError()
    h.size = 0
    h.cap = cap
    return 0

cdef void _heap_free(Heap* h):
    free(h.f)
    free(h.lin)

cdef int _heap_push(Heap* h, double f, long long lin) except -1:
    cdef Py_ssize_t i, p
    if h.size == h.cap:
        h.cap *= 2
        h.f = <double*>realloc(h.f, h.cap * sizeof(double))
        h.lin = <long long*>realloc(h.lin, h.cap * sizeof(long long))
        if h.f == NULL or h.lin == NULL:
            raise MemoryError()
    i = h.size
    h.f[i] = f
    h.lin[i] = lin
    h.size += 1
    while i > 0:
        p = (i - 1) >> 1
        if _less(h, i, p):
            _swap(h, i, p)
            i = p
        else:
            break
    return 0

cdef void _heap_pop(Heap* h, double* f_out, long long* lin_out):
    f_out[0] = h.f[0]
    lin_out[0] = h.lin[0]
    h.size -= 1
    h.f[0] = h.f[h.size]
    h.lin[0] = h.lin[h.size]
    cdef Py_ssize_t i = 0, c
    while True:
        c = 2 * i + 1
        if c >= h.size:
            break
        if c + 1 < h.size and _less(h, c + 1, c):
            c += 1
        if _less(h, c, i):
            _swap(h, i, c)
            i = c
        else:
            break


def plan_grid_path(cnp.uint8_t[:, :, ::1] occ, start, goal,
                   bint unknown_traversable):
    cdef long nx = occ.shape[0], ny = occ.shape[1], nz = occ.shape[2]
    cdef long si = start[0], sj = start[1], sk = start[2]
    cdef long gi = goal[0], gj = goal[1], gk = goal[2]
    cdef long long nyz = <long long>ny * nz
    cdef long long total = <long long>nx * nyz
    cdef long long s_lin = (si * ny + sj) * nz + sk
    cdef long long g_lin = (gi * ny + gj) * nz + gk
    cdef cnp.uint8_t[::1] occ_flat = np.ascontiguousarray(occ).reshape(-1)
    cdef cnp.uint8_t v

    v = occ_flat[g_lin]
    if v == 2 or (v == 0 and not unknown_traversable):
        return None
    v = occ_flat[s_lin]
    if v == 2 or (v == 0 and not unknown_traversable):
        return None

    g_cost_arr = np.full(total, np.inf, dtype=np.float64)
    parent_arr = np.full(total, -1, dtype=np.int64)
    closed_arr = np.zeros(total, dtype=np.uint8)
    cdef cnp.float64_t[::1] g_cost = g_cost_arr
    cdef cnp.int64_t[::1] parent = parent_arr
    cdef cnp.uint8_t[::1] closed = closed_arr

    cdef Heap heap
    _heap_init(&heap, 4096)
    cdef double h0 = sqrt(<double>((si - gi) ** 2 + (sj - gj) ** 2 + (sk - gk) ** 2))
    g_cost[s_lin] = 0.0
    _heap_push(&heap, h0, s_lin)

    cdef double f, base, ng, h
    cdef long long lin, nlin, cur
    cdef long i, j, k, ni, nj, nk
    cdef int m
    cdef list path
    try:
        while heap.size > 0:
            _heap_pop(&heap, &f, &lin)
            if closed[lin]:
                continue
            closed[lin] = 1
            if lin == g_lin:
                path = []
                cur = lin
                while cur >= 0:
                    path.append((cur // nyz, (cur // nz) % ny, cur % nz))
                    cur = parent[cur]
                path.reverse()
                return np.array(path, dtype=np.int32), float(g_cost[g_lin])
            i = <long>(lin // nyz)
            j = <long>((lin // nz) % ny)
            k = <long>(lin % nz)
            base = g_cost[lin]
            for m in range(26):
                ni = i + NDI[m]
                nj = j + NDJ[m]
                nk = k + NDK[m]
                if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                    continue
                nlin = (ni * ny + nj) * nz + nk
                if closed[nlin]:
                    continue
                v = occ_flat[nlin]
                if v == 2 or (v == 0 and not unknown_traversable):
                    continue
                ng = base + NWT[m]
                if ng < g_cost[nlin]:
                    g_cost[nlin] = ng
                    parent[nlin] = lin
                    h = sqrt(<double>((ni - gi) ** 2 + (nj - gj) ** 2 + (nk - gk) ** 2))
                    _heap_push(&heap, ng + h, nlin)
        return None
    finally:
        _heap_free(&heap)


def distance_field(passable, cnp.int32_t[:, ::1] sources):
    passable_u8 = np.ascontiguousarray(passable, dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] pass_v = passable_u8
    cdef long nx = pass_v.shape[0], ny = pass_v.shape[1], nz = pass_v.shape[2]
    cdef long long nyz = <long long>ny * nz
    cdef long long total = <long long>nx * nyz
    cdef cnp.uint8_t[::1] pass_flat = passable_u8.reshape(-1)
    dist_arr = np.full(total, np.inf, dtype=np.float64)
    done_arr = np.zeros(total, dtype=np.uint8)
    cdef cnp.float64_t[::1] dist = dist_arr
    cdef cnp.uint8_t[::1] done = done_arr
    cdef Heap heap
    _heap_init(&heap, 4096)
    cdef Py_ssize_t s
    cdef long long lin, nlin
    cdef double d, nd
    cdef long i, j, k, ni, nj, nk
    cdef int m
    try:
        for s in range(sources.shape[0]):
            lin = (<long long>sources[s, 0] * ny + sources[s, 1]) * nz + sources[s, 2]
            if dist[lin] > 0.0:
                dist[lin] = 0.0
                _heap_push(&heap, 0.0, lin)
        while heap.size > 0:
            _heap_pop(&heap, &d, &lin)
            if done[lin]:
                continue
            done[lin] = 1
            i = <long>(lin // nyz)
            j = <long>((lin // nz) % ny)
            k = <long>(lin % nz)
            for m in range(26):
                ni = i + NDI[m]
                nj = j + NDJ[m]
                nk = k + NDK[m]
                if not (0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz):
                    continue
                nlin = (ni * ny + nj) * nz + nk
                if done[nlin] or not pass_flat[nlin]:
                    continue
                nd = d + NWT[m]
                if nd < dist[nlin]:
                    dist[nlin] = nd
                    _heap_push(&heap, nd, nlin)
        return dist_arr.reshape((nx, ny, nz))
    finally:
        _heap_free(&heap)


def dbscan_grid(mask, cnp.int32_t[:, ::1] offsets, int min_samples):
    mask_u8 = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] m_v = mask_u8
    cdef long nx = m_v.shape[0], ny = m_v.shape[1], nz = m_v.shape[2]
    cdef int n_off = offsets.shape[0]
    cdef long i, j, k, ni, nj, nk
    cdef int m, cnt
    core_arr = np.zeros((nx, ny, nz), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] core = core_arr
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not m_v[i, j, k]:
                    continue
                cnt = 1
                for m in range(n_off):
                    ni = i + offsets[m, 0]
                    nj = j + offsets[m, 1]
                    nk = k + offsets[m, 2]
                    if (
                        0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz
                        and m_v[ni, nj, nk]
                    ):
                        cnt += 1
                        if cnt >= min_samples:
                            break
                if cnt >= min_samples:
                    core[i, j, k] = 1
    labels_arr, n = label_components(core_arr, np.asarray(offsets))
    cdef cnp.int32_t[:, :, ::1] lab = labels_arr
    if n == 0:
        return labels_arr
    # border cells adopt the core neighbor at the first matching offset
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not m_v[i, j, k] or core[i, j, k]:
                    continue
                for m in range(n_off):
                    ni = i + offsets[m, 0]
                    nj = j + offsets[m, 1]
                    nk = k + offsets[m, 2]
                    if (
                        0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz
                        and core[ni, nj, nk]
                    ):
                        lab[i, j, k] = lab[ni, nj, nk]
                        break
    return labels_arr


def label_components(mask, offsets=None):
    mask_u8 = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] m_v = mask_u8
    cdef long nx = m_v.shape[0], ny = m_v.shape[1], nz = m_v.shape[2]
    if offsets is None:
        off_arr = np.array(
            [
                (di, dj, dk)
                for di in (-1, 0, 1)
                for dj in (-1, 0, 1)
                for dk in (-1, 0, 1)
                if (di, dj, dk) != (0, 0, 0)
            ],
            dtype=np.int32,
        )
    else:
        off_arr = np.ascontiguousarray(offsets, dtype=np.int32)
    cdef cnp.int32_t[:, ::1] off = off_arr
    cdef int n_off = off.shape[0]
    labels_arr = np.zeros((nx, ny, nz), dtype=np.int32)
    cdef cnp.int32_t[:, :, ::1] lab = labels_arr
    cdef long long cap = <long long>nx * ny * nz + 1
    cdef long long* stack = <long long*>malloc(cap * sizeof(long long))
    if stack == NULL:
        raise MemoryError()
    cdef long long top, lin
    cdef long i0, j0, k0, i, j, k, ni, nj, nk
    cdef int n = 0, mm
    cdef long long nyz = <long long>ny * nz
    try:
        for i0 in range(nx):
            for j0 in range(ny):
                for k0 in range(nz):
                    if not m_v[i0, j0, k0] or lab[i0, j0, k0]:
                        continue
                    n += 1
                    top = 0
                    stack[top] = (i0 * ny + j0) * nz + k0
                    top += 1
                    lab[i0, j0, k0] = n
                    while top > 0:
                        top -= 1
                        lin = stack[top]
                        i = <long>(lin // nyz)
                        j = <long>((lin // nz) % ny)
                        k = <long>(lin % nz)
                        for mm in range(n_off):
                            ni = i + off[mm, 0]
                            nj = j + off[mm, 1]
                            nk = k + off[mm, 2]
                            if (
                                0 <= ni < nx and 0 <= nj < ny and 0 <= nk < nz
                                and m_v[ni, nj, nk] and not lab[ni, nj, nk]
                            ):
                                lab[ni, nj, nk] = n
                                stack[top] = (ni * ny + nj) * nz + nk
                                top += 1
        return labels_arr, n
    finally:
        free(stack)
