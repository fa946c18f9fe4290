"""Hot kernels, compiled when available.

The Cython extension is used if it was built; otherwise the numpy/scipy
fallback is imported. Set ``SGNS_PURE_PYTHON=1`` to force the fallback.
``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _pykernels as python

try:
    if os.environ.get("SGNS_PURE_PYTHON", "") == "1":
        raise ImportError("compiled kernels disabled by SGNS_PURE_PYTHON")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"


def pair_forces(pos, vel, radius, stiffness, damping):
    pos = np.ascontiguousarray(pos, dtype=np.float64)
    vel = np.ascontiguousarray(vel, dtype=np.float64)
    return _impl.pair_forces(pos, vel, float(radius), float(stiffness), float(damping))


def rigid_forces(pos, vel, rpos, rvel, contact, stiffness, damping):
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (pos, vel, rpos, rvel)]
    return _impl.rigid_forces(*args, float(contact), float(stiffness), float(damping))


def segment_sum(values, index, n_segments):
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    return _impl.segment_sum(values, index, int(n_segments))


__all__ = ["BACKEND", "compiled", "python", "pair_forces", "rigid_forces", "segment_sum"]
