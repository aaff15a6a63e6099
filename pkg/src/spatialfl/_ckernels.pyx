# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: disc capture over a cell grid and nearest-centroid search.

Both functions reproduce the floating-point operation order of the numpy
versions in ``_pykernels`` so that the two backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.string cimport memcpy, memset

cnp.import_array()

ctypedef cnp.int64_t i64


cdef inline Py_ssize_t _cell(double v, double lo, double width, Py_ssize_t n) noexcept nogil:
    cdef double f = floor((v - lo) / width)
    if f < 0:
        return 0
    if f >= n:
        return n - 1
    return <Py_ssize_t>f


cdef void _radix_sort(i64 *a, i64 *tmp, Py_ssize_t n, int passes) noexcept nogil:
    """LSD radix sort of non-negative keys, 11 bits per pass; result lands in ``a``."""
    cdef Py_ssize_t count[2048]
    cdef Py_ssize_t i, b, total, c
    cdef int shift, ps
    cdef i64 *src = a
    cdef i64 *dst = tmp
    cdef i64 *swap
    for ps in range(passes):
        shift = 11 * ps
        memset(count, 0, sizeof(count))
        for i in range(n):
            count[(src[i] >> shift) & 2047] += 1
        total = 0
        for b in range(2048):
            c = count[b]
            count[b] = total
            total += c
        for i in range(n):
            b = (src[i] >> shift) & 2047
            dst[count[b]] = src[i]
            count[b] += 1
        swap = src
        src = dst
        dst = swap
    if src != a:
        memcpy(a, src, n * sizeof(i64))


def capture_csr(const double[:, ::1] ues, const double[:, ::1] pts, double radius):
    """Indices of points within ``radius`` of each UE, as CSR ``(offsets, indices)``.

    Each UE's slice ``indices[offsets[k]:offsets[k + 1]]`` is sorted ascending.
    """
    cdef Py_ssize_t n_ue = ues.shape[0]
    cdef Py_ssize_t n_pt = pts.shape[0]
    offsets_arr = np.zeros(n_ue + 1, dtype=np.int64)
    cdef i64[::1] offsets = offsets_arr
    if n_ue == 0 or n_pt == 0:
        return offsets_arr, np.zeros(0, dtype=np.int64)

    cdef double xmin = pts[0, 0], xmax = pts[0, 0], ymin = pts[0, 1], ymax = pts[0, 1]
    cdef Py_ssize_t i, j, k, cx, cy, cx0, cx1, cy0, cy1, c, row
    for i in range(n_pt):
        if pts[i, 0] < xmin: xmin = pts[i, 0]
        if pts[i, 0] > xmax: xmax = pts[i, 0]
        if pts[i, 1] < ymin: ymin = pts[i, 1]
        if pts[i, 1] > ymax: ymax = pts[i, 1]

    cdef double width = radius / 4
    cdef Py_ssize_t nx = <Py_ssize_t>((xmax - xmin) / width) + 1
    cdef Py_ssize_t ny = <Py_ssize_t>((ymax - ymin) / width) + 1
    # keep the grid bounded for tiny radii
    while nx * ny > 4 * n_pt + 16:
        width *= 2.0
        nx = <Py_ssize_t>((xmax - xmin) / width) + 1
        ny = <Py_ssize_t>((ymax - ymin) / width) + 1

    # stable counting sort of points into cells; coordinates copied in cell order
    cell_start_arr = np.zeros(nx * ny + 1, dtype=np.int64)
    cdef i64[::1] cell_start = cell_start_arr
    point_cell_arr = np.empty(n_pt, dtype=np.int64)
    cdef i64[::1] point_cell = point_cell_arr
    for i in range(n_pt):
        c = _cell(pts[i, 0], xmin, width, nx) * ny + _cell(pts[i, 1], ymin, width, ny)
        point_cell[i] = c
        cell_start[c + 1] += 1
    for c in range(nx * ny):
        cell_start[c + 1] += cell_start[c]
    fill_arr = cell_start_arr[:-1].copy()
    cdef i64[::1] fill = fill_arr
    by_cell_arr = np.empty(n_pt, dtype=np.int64)
    cdef i64[::1] by_cell = by_cell_arr
    xs_arr = np.empty(n_pt, dtype=np.float64)
    ys_arr = np.empty(n_pt, dtype=np.float64)
    cdef double[::1] xs = xs_arr
    cdef double[::1] ys = ys_arr
    for i in range(n_pt):
        c = point_cell[i]
        by_cell[fill[c]] = i
        xs[fill[c]] = pts[i, 0]
        ys[fill[c]] = pts[i, 1]
        fill[c] += 1

    cdef double r2 = radius * radius
    cdef double pad = 1e-9 * (1.0 + radius)
    cdef double zx, zy, dx, dy
    cdef i64 count, pos, lo, hi
    cdef int passes = 1
    while (<i64>1 << (11 * passes)) < n_pt:
        passes += 1

    # pass 1: counts
    for k in range(n_ue):
        zx = ues[k, 0]
        zy = ues[k, 1]
        cx0 = _cell(zx - radius - pad, xmin, width, nx)
        cx1 = _cell(zx + radius + pad, xmin, width, nx)
        cy0 = _cell(zy - radius - pad, ymin, width, ny)
        cy1 = _cell(zy + radius + pad, ymin, width, ny)
        count = 0
        for cx in range(cx0, cx1 + 1):
            # the cells of one grid column are contiguous in cell order
            row = cx * ny
            for j in range(cell_start[row + cy0], cell_start[row + cy1 + 1]):
                dx = xs[j] - zx
                dy = ys[j] - zy
                if dx * dx + dy * dy <= r2:
                    count += 1
        offsets[k + 1] = offsets[k] + count

    indices_arr = np.empty(offsets[n_ue], dtype=np.int64)
    cdef i64[::1] indices = indices_arr
    cdef i64 widest = 0
    for k in range(n_ue):
        if offsets[k + 1] - offsets[k] > widest:
            widest = offsets[k + 1] - offsets[k]
    scratch_arr = np.empty(max(widest, 1), dtype=np.int64)
    cdef i64[::1] scratch = scratch_arr

    # pass 2: fill and sort each UE's slice
    for k in range(n_ue):
        zx = ues[k, 0]
        zy = ues[k, 1]
        cx0 = _cell(zx - radius - pad, xmin, width, nx)
        cx1 = _cell(zx + radius + pad, xmin, width, nx)
        cy0 = _cell(zy - radius - pad, ymin, width, ny)
        cy1 = _cell(zy + radius + pad, ymin, width, ny)
        pos = offsets[k]
        for cx in range(cx0, cx1 + 1):
            row = cx * ny
            for j in range(cell_start[row + cy0], cell_start[row + cy1 + 1]):
                dx = xs[j] - zx
                dy = ys[j] - zy
                if dx * dx + dy * dy <= r2:
                    indices[pos] = by_cell[j]
                    pos += 1
        lo = offsets[k]
        hi = offsets[k + 1]
        if hi - lo > 1:
            _radix_sort(&indices[lo], &scratch[0], hi - lo, passes)

    return offsets_arr, indices_arr


def nearest_centroid(const double[:, ::1] data, const double[:, ::1] centroids):
    """Index of and squared distance to the nearest centroid; ties go to the lowest index."""
    cdef Py_ssize_t n = data.shape[0], k = centroids.shape[0], d = data.shape[1]
    labels_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef i64[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    cdef Py_ssize_t i, c, j, best
    cdef double acc, t, best_d
    with nogil:
        for i in range(n):
            best = 0
            best_d = 0.0
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    t = data[i, j] - centroids[c, j]
                    acc = acc + t * t
                if c == 0 or acc < best_d:
                    best = c
                    best_d = acc
            labels[i] = best
            dist[i] = best_d
    return labels_arr, dist_arr
