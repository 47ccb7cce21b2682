"""Independent reference implementations used to cross-check the package.

Each oracle takes a deliberately different route from the code under test:
plain loops, linear scans, dictionaries and arbitrary precision arithmetic.
"""

from __future__ import annotations

import math
from collections import defaultdict

import mpmath
import numpy as np


def knn_linear_scan(points, query, k):
    """Indices and distances of the k nearest points, ties by index."""
    d = np.sqrt(((points - query) ** 2).sum(axis=1))
    k = min(k, len(points))
    cutoff = np.partition(d, k - 1)[k - 1]
    cand = np.flatnonzero(d <= cutoff)
    order = cand[np.lexsort((cand, d[cand]))][:k]
    return order, d[order]


def voxel_filter_bruteforce(points, d_box):
    """One point per voxel, the closest to the voxel center, via a dict."""
    best = {}
    for i, p in enumerate(points):
        key = tuple(int(math.floor(c / d_box)) for c in p)
        center = [(k + 0.5) * d_box for k in key]
        dist = sum((c - q) ** 2 for c, q in zip(p, center))
        rank = (dist, tuple(p))
        if key not in best or rank < best[key][0]:
            best[key] = (rank, i)
    return sorted(i for _, i in best.values())


def shape_values_exact(l1, l2, l3):
    """Shape features in 50-digit arithmetic."""
    with mpmath.workdps(50):
        l1, l2, l3 = (mpmath.mpf(x) for x in (l1, l2, l3))
        u = l1 / l3
        s = mpmath.mpf(0) if l1 == 0 and l2 == 0 else (l2 / l3) * (l2 - l1) / mpmath.sqrt(l1 ** 2 + l2 ** 2)
        return float(u), float(s), float(u - s)


def reduction_exact(delta_med, m, alpha=4, beta=0.25, gamma=1e-10):
    with mpmath.workdps(50):
        d = mpmath.mpf(delta_med)
        return float(1 / (1 + mpmath.exp(-mpmath.mpf(alpha) * (d - mpmath.mpf(beta))))
                     * mpmath.exp(-mpmath.mpf(gamma) * m))


def features_bruteforce(points, k, d_nn):
    """Per-point (delta, valid, normal) with a linear-scan neighborhood."""
    out_delta, out_valid, out_normal = [], [], []
    for p in points:
        idx, _ = knn_linear_scan(points, p, k)
        nb = points[idx]
        mu = nb.mean(axis=0)
        c = np.cov(nb.T, ddof=1)
        w, v = np.linalg.eigh(c)
        w = np.clip(w, 0, None)
        valid = np.linalg.norm(p - mu) <= d_nn and w[2] > 0
        if w[2] > 0:
            u = w[0] / w[2]
            s = 0.0 if w[0] == w[1] == 0 else (w[1] / w[2]) * (w[1] - w[0]) / math.hypot(w[0], w[1])
            out_delta.append(u - s)
        else:
            out_delta.append(math.nan)
        out_valid.append(bool(valid))
        out_normal.append(v[:, 0])
    return np.array(out_delta), np.array(out_valid), np.array(out_normal)


def rotation_to_z(n):
    """Rodrigues rotation taking unit n onto +z, written with explicit angle and axis."""
    n = np.asarray(n, dtype=float) / np.linalg.norm(n)
    angle = math.atan2(math.hypot(n[0], n[1]), n[2])
    if angle == 0.0:
        return np.eye(3)
    axis = np.array([n[1], -n[0], 0.0]) / math.hypot(n[0], n[1])
    x, y, z = axis
    c, s, t = math.cos(angle), math.sin(angle), 1 - math.cos(angle)
    return np.array([[t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                     [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                     [t * x * z - s * y, t * y * z + s * x, t * z * z + c]])


def histogram_bruteforce(points, deltas, position, rotation, e, l):
    """Per-cell counts and lower medians with a python loop and dict of lists."""
    n_az, n_el = round(360 / e), round(90 / l)
    members = defaultdict(list)
    for p, d in zip(points, deltas):
        x, y, z = rotation @ (np.asarray(p) - position)
        if z <= 0:
            continue
        az = math.degrees(math.atan2(x, y)) % 360.0
        el = math.degrees(math.atan2(z, math.hypot(x, y)))
        i = int(az // e) % n_az
        j = min(int(el // l), n_el - 1)
        members[(i, j)].append(d)
    counts = np.zeros((n_az, n_el), dtype=int)
    med = np.full((n_az, n_el), np.nan)
    for (i, j), vals in members.items():
        vals = sorted(vals)
        counts[i, j] = len(vals)
        med[i, j] = vals[(len(vals) - 1) // 2]
    return counts, med


def predict_double_loop(sky, counts, delta_med, alpha, beta, gamma, m_occ):
    total = 0.0
    for i in range(sky.shape[0]):
        for j in range(sky.shape[1]):
            m = counts[i, j]
            b = 1.0 if m < m_occ else 0.0
            if m > 0:
                p = 1.0 / (1.0 + math.exp(-alpha * (delta_med[i, j] - beta))) * math.exp(-gamma * m)
            else:
                p = 0.0
            total += sky[i, j] * max(p, b)
    return total


def gaussian_map_direct(sats, e, l, sigma):
    """Sky map via spherical law of cosines, each satellite summed to one."""
    n_az, n_el = round(360 / e), round(90 / l)
    cells = np.zeros((n_az, n_el))
    for az, el in sats:
        w = np.zeros((n_az, n_el))
        for i in range(n_az):
            for j in range(n_el):
                ca, ce = math.radians((i + 0.5) * e), math.radians((j + 0.5) * l)
                sa, se = math.radians(az), math.radians(el)
                cosd = math.sin(ce) * math.sin(se) + math.cos(ce) * math.cos(se) * math.cos(ca - sa)
                theta = math.degrees(math.acos(max(-1.0, min(1.0, cosd))))
                w[i, j] = math.exp(-0.5 * (theta / sigma) ** 2)
        cells += w / w.sum()
    return cells
