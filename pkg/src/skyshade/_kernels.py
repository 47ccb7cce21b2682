"""Compiled inner loops."""

import math
import os

import numba
import numpy as np
from numba import njit, prange

# TBB is tried first by default and warns when the installed version is too old
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


def apply_thread_cap():
    """Honor ``SKYSHADE_THREADS`` for the parallel kernels."""
    cap = os.environ.get("SKYSHADE_THREADS")
    if cap:
        n = max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)


@njit(cache=True, parallel=True)
def sky_histograms(points, deltas, positions, rotations, e, sin2_edges, n_az, n_el, max_range2):
    """Per-pose cell counts and lower-median deltas.

    ``points`` must be sorted by ascending ``deltas``: the k-th member of a
    cell met in that order is then the k-th smallest delta of the cell.
    Points at or below a pose's horizon are skipped, as are points beyond
    ``sqrt(max_range2)`` when ``max_range2 > 0``. Elevation rows are found by
    comparing ``z**2`` with ``sin2_edges * r**2`` (squared sines of the lower
    row edges), which avoids a second arctangent and a square root per point.
    """
    n_pose = positions.shape[0]
    n_pts = points.shape[0]
    n_cells = n_az * n_el
    counts = np.zeros((n_pose, n_cells), np.int64)
    medians = np.full((n_pose, n_cells), np.nan)
    rad2deg = 180.0 / math.pi
    for p in prange(n_pose):
        cell = np.empty(n_pts, np.int32)
        local = np.zeros(n_cells, np.int64)
        r = rotations[p]
        ox = positions[p, 0]
        oy = positions[p, 1]
        oz = positions[p, 2]
        for i in range(n_pts):
            dx = points[i, 0] - ox
            dy = points[i, 1] - oy
            dz = points[i, 2] - oz
            z = r[2, 0] * dx + r[2, 1] * dy + r[2, 2] * dz
            if z <= 0.0:
                cell[i] = -1
                continue
            x = r[0, 0] * dx + r[0, 1] * dy + r[0, 2] * dz
            y = r[1, 0] * dx + r[1, 1] * dy + r[1, 2] * dz
            r2 = x * x + y * y + z * z
            if max_range2 > 0.0 and r2 > max_range2:
                cell[i] = -1
                continue
            az = math.atan2(x, y) * rad2deg
            if az < 0.0:
                az += 360.0
            ia = int(az / e)
            if ia >= n_az:
                ia = 0
            z2 = z * z
            ie = 0
            while ie < n_el - 1 and z2 >= sin2_edges[ie + 1] * r2:
                ie += 1
            c = ia * n_el + ie
            cell[i] = c
            local[c] += 1
        seen = np.zeros(n_cells, np.int64)
        for i in range(n_pts):
            c = cell[i]
            if c < 0:
                continue
            if seen[c] == (local[c] - 1) // 2:
                medians[p, c] = deltas[i]
            seen[c] += 1
        counts[p] = local
    return counts, medians
