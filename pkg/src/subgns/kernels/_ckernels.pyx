# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: particle contact forces and edge scatter-sums."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor

cnp.import_array()


def pair_forces(const double[:, ::1] pos, const double[:, ::1] vel, double radius,
                double stiffness, double damping):
    """Spring-damper forces between all flow particle pairs closer than 2*radius.

    Uses a sorted cell list with cell size equal to the contact distance.
    Each pair (i < j) is visited once and applied symmetrically.
    """
    cdef Py_ssize_t n = pos.shape[0]
    out = np.zeros((n, 3), dtype=np.float64)
    if n < 2:
        return out
    cdef double[:, ::1] f = out
    cdef double h = 2.0 * radius
    cdef double h2 = h * h
    cdef double inv_cell = 1.0 / h

    lo = np.min(np.asarray(pos), axis=0)
    cdef double lx = lo[0], ly = lo[1], lz = lo[2]
    cells_np = np.empty((n, 3), dtype=np.int64)
    cdef long long[:, ::1] cells = cells_np
    cdef Py_ssize_t i, j
    for i in range(n):
        # +1 keeps every neighbour index of an occupied cell non-negative
        cells[i, 0] = <long long>floor((pos[i, 0] - lx) * inv_cell) + 1
        cells[i, 1] = <long long>floor((pos[i, 1] - ly) * inv_cell) + 1
        cells[i, 2] = <long long>floor((pos[i, 2] - lz) * inv_cell) + 1
    dims = cells_np.max(axis=0) + 2
    cdef long long ny = dims[1], nz = dims[2]
    n_cells = int(dims[0]) * int(dims[1]) * int(dims[2])
    if n_cells > 64 * n + 4096:
        # particles spread far apart: dense table would be too large
        return _pair_forces_sparse(pos, vel, radius, stiffness, damping)
    keys_np = (cells_np[:, 0] * ny + cells_np[:, 1]) * nz + cells_np[:, 2]
    order_np = np.argsort(keys_np, kind="stable").astype(np.int64)
    start_np = np.searchsorted(keys_np[order_np], np.arange(n_cells + 1)).astype(np.int64)
    cdef long long[::1] order = order_np
    cdef long long[::1] start = start_np

    cdef long long key
    cdef Py_ssize_t s, e
    cdef int dx, dy, dz
    cdef double rx, ry, rz, d2, dist, overlap, fx, fy, fz
    for i in range(n):
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                for dz in range(-1, 2):
                    key = ((cells[i, 0] + dx) * ny + (cells[i, 1] + dy)) * nz + (cells[i, 2] + dz)
                    e = start[key + 1]
                    for s in range(start[key], e):
                        j = order[s]
                        if j <= i:
                            continue
                        rx = pos[i, 0] - pos[j, 0]
                        ry = pos[i, 1] - pos[j, 1]
                        rz = pos[i, 2] - pos[j, 2]
                        d2 = rx * rx + ry * ry + rz * rz
                        if d2 >= h2 or d2 == 0.0:
                            continue
                        dist = sqrt(d2)
                        overlap = stiffness * (h - dist) / dist
                        fx = overlap * rx - damping * (vel[i, 0] - vel[j, 0])
                        fy = overlap * ry - damping * (vel[i, 1] - vel[j, 1])
                        fz = overlap * rz - damping * (vel[i, 2] - vel[j, 2])
                        f[i, 0] += fx
                        f[i, 1] += fy
                        f[i, 2] += fz
                        f[j, 0] -= fx
                        f[j, 1] -= fy
                        f[j, 2] -= fz
    return out


def _pair_forces_sparse(const double[:, ::1] pos, const double[:, ::1] vel, double radius,
                        double stiffness, double damping):
    from . import _pykernels
    return _pykernels.pair_forces(np.asarray(pos), np.asarray(vel), radius, stiffness, damping)


def rigid_forces(const double[:, ::1] pos, const double[:, ::1] vel,
                 const double[:, ::1] rpos, const double[:, ::1] rvel,
                 double contact, double stiffness, double damping):
    """Forces exerted by kinematic rigid particles on flow particles."""
    cdef Py_ssize_t n = pos.shape[0], nr = rpos.shape[0]
    out = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] f = out
    cdef double h2 = contact * contact
    cdef Py_ssize_t i, j
    cdef double rx, ry, rz, d2, dist, overlap
    for i in range(n):
        for j in range(nr):
            rx = pos[i, 0] - rpos[j, 0]
            ry = pos[i, 1] - rpos[j, 1]
            rz = pos[i, 2] - rpos[j, 2]
            d2 = rx * rx + ry * ry + rz * rz
            if d2 >= h2 or d2 == 0.0:
                continue
            dist = sqrt(d2)
            overlap = contact - dist
            f[i, 0] += stiffness * overlap * rx / dist - damping * (vel[i, 0] - rvel[j, 0])
            f[i, 1] += stiffness * overlap * ry / dist - damping * (vel[i, 1] - rvel[j, 1])
            f[i, 2] += stiffness * overlap * rz / dist - damping * (vel[i, 2] - rvel[j, 2])
    return out


def segment_sum(const double[:, ::1] values, const long long[::1] index, Py_ssize_t n_segments):
    """Sum rows of ``values`` into ``n_segments`` buckets given by ``index``."""
    cdef Py_ssize_t e = values.shape[0], d = values.shape[1]
    out = np.zeros((n_segments, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, k
    cdef long long t
    for i in range(e):
        t = index[i]
        if t < 0 or t >= n_segments:
            raise IndexError(f"segment index {t} out of range")
        for k in range(d):
            o[t, k] += values[i, k]
    return out
