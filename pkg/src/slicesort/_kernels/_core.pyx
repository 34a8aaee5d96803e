# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: pairwise hinge loss, 3D component labelling, half-space tests."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pairwise_hinge(double[::1] scores, long long[::1] ranks, double margin):
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t i, j
    cdef double total = 0.0, d
    cdef long long n_pairs = 0
    grad_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] grad = grad_arr
    for i in range(n):
        for j in range(n):
            if ranks[i] > ranks[j]:
                n_pairs += 1
                d = scores[i] - scores[j]
                if d < margin:
                    total += margin - d
                    grad[i] -= 1.0
                    grad[j] += 1.0
    for i in range(n):
        grad[i] /= n_pairs
    return total / n_pairs, grad_arr


def label_components(mask, int connectivity=6):
    cdef cnp.uint8_t[:, :, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t nz = m.shape[0], ny = m.shape[1], nx = m.shape[2]
    cdef Py_ssize_t total = nz * ny * nx
    labels_arr = np.zeros((nz, ny, nx), dtype=np.int32)
    cdef int[:, :, ::1] lab = labels_arr
    queue_arr = np.empty(total if total > 0 else 1, dtype=np.int64)
    cdef long long[::1] queue = queue_arr
    cdef int[:, ::1] offs
    if connectivity == 6:
        offs = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int32)
    else:
        offs = np.array([[a, b, c] for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)
                         if (a, b, c) != (0, 0, 0)], dtype=np.int32)
    cdef Py_ssize_t n_off = offs.shape[0]
    cdef Py_ssize_t z, y, x, zz, yy, xx, k, head, tail
    cdef long long idx, rem
    cdef int current = 0
    sizes = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if m[z, y, x] == 0 or lab[z, y, x] != 0:
                    continue
                current += 1
                lab[z, y, x] = current
                head = 0
                tail = 0
                queue[tail] = (z * ny + y) * nx + x
                tail += 1
                while head < tail:
                    idx = queue[head]
                    head += 1
                    zz = idx // (ny * nx)
                    rem = idx - zz * ny * nx
                    yy = rem // nx
                    xx = rem - yy * nx
                    for k in range(n_off):
                        _push(m, lab, queue, &tail, zz + offs[k, 0], yy + offs[k, 1], xx + offs[k, 2],
                              nz, ny, nx, current)
                sizes.append(tail)
    return labels_arr, np.asarray(sizes, dtype=np.int64)


cdef inline void _push(cnp.uint8_t[:, :, ::1] m, int[:, :, ::1] lab, long long[::1] queue, Py_ssize_t* tail,
                       Py_ssize_t z, Py_ssize_t y, Py_ssize_t x, Py_ssize_t nz, Py_ssize_t ny, Py_ssize_t nx,
                       int current) noexcept nogil:
    if z < 0 or z >= nz or y < 0 or y >= ny or x < 0 or x >= nx:
        return
    if m[z, y, x] == 0 or lab[z, y, x] != 0:
        return
    lab[z, y, x] = current
    queue[tail[0]] = (z * ny + y) * nx + x
    tail[0] += 1


def points_in_halfspaces(double[:, ::1] points, double[:, ::1] equations, double tol):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], f = equations.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double acc
    out_arr = np.ones(n, dtype=bool)
    cdef cnp.uint8_t[::1] out = out_arr.view(np.uint8)
    for i in range(n):
        for j in range(f):
            acc = equations[j, d]
            for c in range(d):
                acc += equations[j, c] * points[i, c]
            if acc > tol:
                out[i] = 0
                break
    return out_arr


def glass_swaps(float[:, ::1] img, int max_delta, long long[::1] dy, long long[::1] dx):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t y, x, yy, xx, k = 0
    cdef float tmp
    for y in range(h - max_delta, max_delta, -1):
        for x in range(w - max_delta, max_delta, -1):
            yy = y + dy[k]
            xx = x + dx[k]
            k += 1
            if 0 <= yy < h and 0 <= xx < w and 0 <= y < h and 0 <= x < w:
                tmp = img[y, x]
                img[y, x] = img[yy, xx]
                img[yy, xx] = tmp
    return np.asarray(img)
