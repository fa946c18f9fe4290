"""Pure numpy/scipy versions of the compiled kernels.

Same signatures and results as ``_ckernels`` up to floating-point summation
order.
"""

import numpy as np
from scipy.spatial import cKDTree


def pair_forces(pos, vel, radius, stiffness, damping):
    n = pos.shape[0]
    out = np.zeros((n, 3))
    if n < 2:
        return out
    h = 2.0 * radius
    pairs = cKDTree(pos).query_pairs(h, output_type="ndarray")
    if len(pairs) == 0:
        return out
    i, j = pairs[:, 0], pairs[:, 1]
    r = pos[i] - pos[j]
    dist = np.sqrt(np.einsum("ij,ij->i", r, r))
    keep = (dist < h) & (dist > 0.0)
    i, j, r, dist = i[keep], j[keep], r[keep], dist[keep]
    f = stiffness * ((h - dist) / dist)[:, None] * r - damping * (vel[i] - vel[j])
    for axis in range(3):
        out[:, axis] += np.bincount(i, weights=f[:, axis], minlength=n)
        out[:, axis] -= np.bincount(j, weights=f[:, axis], minlength=n)
    return out


def rigid_forces(pos, vel, rpos, rvel, contact, stiffness, damping):
    r = pos[:, None, :] - rpos[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", r, r)
    mask = (d2 < contact * contact) & (d2 > 0.0)
    dist = np.sqrt(np.where(mask, d2, 1.0))
    spring = np.where(mask, stiffness * (contact - dist) / dist, 0.0)
    f = spring[:, :, None] * r - damping * mask[:, :, None] * (vel[:, None, :] - rvel[None, :, :])
    return f.sum(axis=1)


def segment_sum(values, index, n_segments):
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= n_segments):
        raise IndexError("segment index out of range")
    out = np.zeros((n_segments, values.shape[1]))
    np.add.at(out, index, values)
    return out
