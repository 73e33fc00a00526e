# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
# distutils: language = c++
"""Compiled grey-level morphology kernels used by the MBI feature."""

import numpy as np
cimport numpy as cnp
from libcpp.queue cimport queue

cnp.import_array()


cdef inline Py_ssize_t _clamp(Py_ssize_t v, Py_ssize_t n) nogil:
    if v < 0:
        return 0
    if v >= n:
        return n - 1
    return v


def erode_offsets(const double[:, ::1] img, const long[:, ::1] offsets):
    """Erosion by a flat structuring element given as (dy, dx) offsets.

    Out-of-bounds reads clamp to the nearest edge pixel.
    """
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], k = offsets.shape[0]
    cdef Py_ssize_t y, x, i
    cdef double m, v
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for y in range(h):
            for x in range(w):
                m = img[_clamp(y + offsets[0, 0], h), _clamp(x + offsets[0, 1], w)]
                for i in range(1, k):
                    v = img[_clamp(y + offsets[i, 0], h), _clamp(x + offsets[i, 1], w)]
                    if v < m:
                        m = v
                o[y, x] = m
    return out


def dilate_offsets(const double[:, ::1] img, const long[:, ::1] offsets):
    """Dilation by the reflected offsets; the adjoint of :func:`erode_offsets`."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], k = offsets.shape[0]
    cdef Py_ssize_t y, x, i
    cdef double m, v
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for y in range(h):
            for x in range(w):
                m = img[_clamp(y - offsets[0, 0], h), _clamp(x - offsets[0, 1], w)]
                for i in range(1, k):
                    v = img[_clamp(y - offsets[i, 0], h), _clamp(x - offsets[i, 1], w)]
                    if v > m:
                        m = v
                o[y, x] = m
    return out


def reconstruct_by_dilation(const double[:, ::1] marker, const double[:, ::1] mask):
    """Grey-level reconstruction by dilation, 8-connected.

    Hybrid raster / anti-raster scan followed by FIFO propagation (Vincent 1993).
    The marker is clipped to the mask first.
    """
    cdef Py_ssize_t h = marker.shape[0], w = marker.shape[1]
    if mask.shape[0] != h or mask.shape[1] != w:
        raise ValueError("marker and mask differ in shape")
    out = np.minimum(np.asarray(marker), np.asarray(mask))
    cdef double[:, ::1] J = out
    cdef const double[:, ::1] I = mask
    cdef Py_ssize_t y, x, dy, dx, ny, nx, p
    cdef double m
    cdef queue[Py_ssize_t] fifo
    with nogil:
        for y in range(h):
            for x in range(w):
                m = J[y, x]
                if x > 0 and J[y, x - 1] > m:
                    m = J[y, x - 1]
                if y > 0:
                    for dx in range(-1, 2):
                        nx = x + dx
                        if 0 <= nx < w and J[y - 1, nx] > m:
                            m = J[y - 1, nx]
                J[y, x] = m if m < I[y, x] else I[y, x]
        for y in range(h - 1, -1, -1):
            for x in range(w - 1, -1, -1):
                m = J[y, x]
                if x < w - 1 and J[y, x + 1] > m:
                    m = J[y, x + 1]
                if y < h - 1:
                    for dx in range(-1, 2):
                        nx = x + dx
                        if 0 <= nx < w and J[y + 1, nx] > m:
                            m = J[y + 1, nx]
                J[y, x] = m if m < I[y, x] else I[y, x]
                # queue p if a backward neighbour can still be raised from it
                if x < w - 1 and J[y, x + 1] < J[y, x] and J[y, x + 1] < I[y, x + 1]:
                    fifo.push(y * w + x)
                    continue
                if y < h - 1:
                    for dx in range(-1, 2):
                        nx = x + dx
                        if 0 <= nx < w and J[y + 1, nx] < J[y, x] and J[y + 1, nx] < I[y + 1, nx]:
                            fifo.push(y * w + x)
                            break
        while not fifo.empty():
            p = fifo.front()
            fifo.pop()
            y = p // w
            x = p - y * w
            for dy in range(-1, 2):
                ny = y + dy
                if ny < 0 or ny >= h:
                    continue
                for dx in range(-1, 2):
                    nx = x + dx
                    if nx < 0 or nx >= w or (dy == 0 and dx == 0):
                        continue
                    if J[ny, nx] < J[y, x] and I[ny, nx] != J[ny, nx]:
                        J[ny, nx] = J[y, x] if J[y, x] < I[ny, nx] else I[ny, nx]
                        fifo.push(ny * w + nx)
    return out
