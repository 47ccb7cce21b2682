"""Synthetic scenes and logs for tests and demos.

Geometry generators return ``(N, 3)`` arrays in the ENU frame with the
receiver area around the origin. All randomness comes from the ``rng``
argument.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .features import FeatureCloud
from .nmea import format_sentence
from .sky import SkyGrid, sky_to_vector

SCENES = ("plane", "line", "ball", "field", "wall", "dome", "canopy", "sky")


def plane(size=10.0, spacing=0.1, jitter=1e-3, rng=None, z=0.0) -> np.ndarray:
    """Regular grid on ``z`` with small vertical noise."""
    rng = rng if rng is not None else np.random.default_rng(0)
    g = np.arange(-size / 2, size / 2 + spacing / 2, spacing)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, float(z))])
    pts[:, 2] += rng.normal(0.0, jitter, len(pts))
    return pts


def line(length=20.0, spacing=0.01, jitter=1e-3, rng=None) -> np.ndarray:
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.arange(0.0, length, spacing)
    return np.column_stack([x, rng.normal(0, jitter, len(x)), rng.normal(0, jitter, len(x))])


def ball(n=20000, radius=1.0, rng=None) -> np.ndarray:
    """Points uniform in a ball."""
    rng = rng if rng is not None else np.random.default_rng(0)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.uniform(size=n) ** (1 / 3))[:, None]


def wall(distance=5.0, width=20.0, height=12.0, spacing=0.25, azimuth=0.0) -> np.ndarray:
    """Vertical wall facing the origin, ``distance`` meters away toward ``azimuth``."""
    s = np.arange(-width / 2, width / 2 + spacing / 2, spacing)
    h = np.arange(0.0, height + spacing / 2, spacing)
    ss, hh = np.meshgrid(s, h, indexing="ij")
    local = np.column_stack([ss.ravel(), np.full(ss.size, distance), hh.ravel()])
    a = math.radians(azimuth)
    rot = np.array([[math.cos(a), math.sin(a), 0.0], [-math.sin(a), math.cos(a), 0.0], [0, 0, 1]])
    return local @ rot.T


def dome_surface(radius=10.0, spacing=0.1, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Near-uniform points on the upper hemisphere (Fibonacci lattice)."""
    n = max(int(2 * math.pi * radius ** 2 / spacing ** 2), 1)
    k = np.arange(n) + 0.5
    z = k / n
    phi = k * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z]) * radius
    return pts + np.asarray(center, dtype=float)


def volume_shell(n, r_in, r_out, rng=None, center=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Points uniform in the upper half of a thick spherical shell."""
    rng = rng if rng is not None else np.random.default_rng(0)
    d = rng.normal(size=(n, 3))
    d[:, 2] = np.abs(d[:, 2])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = (rng.uniform(r_in ** 3, r_out ** 3, n)) ** (1 / 3)
    return d * r[:, None] + np.asarray(center, dtype=float)


def canopy(n=20000, size=30.0, z_min=4.0, z_max=15.0, rng=None) -> np.ndarray:
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.column_stack([rng.uniform(-size / 2, size / 2, n), rng.uniform(-size / 2, size / 2, n),
                            rng.uniform(z_min, z_max, n)])


def cell_dome(grid: SkyGrid, per_cell: int, radius=20.0, center=(0.0, 0.0, 0.0),
              cells: np.ndarray | None = None, rng=None) -> np.ndarray:
    """Exactly ``per_cell`` points inside every selected sky cell, seen from ``center``.

    Points are kept away from cell borders so they bin unambiguously.
    ``cells`` is an optional boolean mask of shape ``grid.shape``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sel = np.ones(grid.shape, dtype=bool) if cells is None else np.asarray(cells, dtype=bool)
    i, j = np.nonzero(sel)
    i = np.repeat(i, per_cell)
    j = np.repeat(j, per_cell)
    az = (i + rng.uniform(0.1, 0.9, len(i))) * grid.e
    el = (j + rng.uniform(0.1, 0.9, len(j))) * grid.l
    return sky_to_vector(az, el) * radius + np.asarray(center, dtype=float)


def scene_features(structure: np.ndarray, delta: float, ground: np.ndarray | None = None) -> FeatureCloud:
    """Feature cloud with prescribed levels: ``delta`` on ``structure``, -1 on ``ground``."""
    parts = [structure]
    deltas = [np.full(len(structure), float(delta))]
    if ground is not None and len(ground):
        parts.append(ground)
        deltas.append(np.full(len(ground), -1.0))
    return FeatureCloud.synthetic(np.vstack(parts), np.concatenate(deltas))


def scene_parts(name: str, rng=None, delta: float | None = None, spacing: float = 0.1,
                size: float = 10.0) -> tuple[np.ndarray, np.ndarray, float]:
    """``(structure, ground, level)`` for a named scene.

    ``level`` is the spherical level the structure is meant to exhibit;
    ground points are a flat, jittered grid.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if name not in SCENES or name == "sky":
        raise ValueError(f"unknown point scene {name!r}; choose from {SCENES[:-1]}")
    none = np.zeros((0, 3))
    if name == "plane":
        return plane(size, spacing, 1e-3, rng), none, -1.0
    if name == "line":
        return line(rng=rng), none, 0.0
    if name == "ball":
        return ball(rng=rng), none, 1.0
    ground = plane(size, spacing, 1e-3, rng)
    if name == "field":
        return none, ground, -1.0
    if name == "wall":
        return wall(distance=size / 4, width=size, height=size / 2, spacing=spacing), ground, -1.0
    radius = size / 2
    if name == "dome":
        level = -1.0 if delta is None else float(delta)
        if level < 0:
            return dome_surface(radius, spacing), ground, level
        # diffuse shell, one point per spacing-sized cube
        n = int(2 * math.pi * (radius ** 3 - (radius - 0.5) ** 3) / 3 / spacing ** 3)
        return volume_shell(n, radius - 0.5, radius, rng), ground, level
    # canopy: one point per (3 * spacing)-sized cube
    n = int(size * size * 11.0 / (3 * spacing) ** 3)
    return canopy(n, size, 4.0, 15.0, rng), ground, 0.8 if delta is None else float(delta)


def make_scene(name: str, rng=None, delta: float | None = None, spacing: float = 0.1,
               size: float = 10.0) -> tuple[np.ndarray, float]:
    """All points of a named scene and the level its structure is meant to exhibit."""
    structure, ground, level = scene_parts(name, rng, delta, spacing, size)
    return np.vstack([structure, ground]), level


# ---------------------------------------------------------------------------
# NMEA logs


def _hhmmss(t: float) -> str:
    t = t % 86400.0
    h, rem = divmod(t, 3600.0)
    m, s = divmod(rem, 60.0)
    return f"{int(h):02d}{int(m):02d}{s:05.2f}"


def _ddmm(value: float, width: int, pos: str, neg: str) -> tuple[str, str]:
    a = abs(value)
    deg = int(a)
    minutes = (a - deg) * 60.0
    return f"{deg:0{width}d}{minutes:08.5f}", pos if value >= 0 else neg


def rmc_line(t: float, lat: float, lon: float, valid=True, date="150126") -> str:
    la, ns = _ddmm(lat, 2, "N", "S")
    lo, ew = _ddmm(lon, 3, "E", "W")
    return format_sentence("GN", "RMC", [_hhmmss(t), "A" if valid else "V", la, ns, lo, ew,
                                         "0.0", "0.0", date, "", "", "A"])


def gst_line(t: float, sigmas=(0.02, 0.02, 0.04)) -> str:
    return format_sentence("GN", "GST", [_hhmmss(t), "0.5", "0.03", "0.02", "45.0",
                                         *(f"{s:.3f}" for s in sigmas)])


def gsv_lines(talker: str, sats: Sequence[tuple[int, float, float, float | None]]) -> list[str]:
    """GSV group for ``(prn, elevation, azimuth, snr)`` tuples."""
    total = max(1, math.ceil(len(sats) / 4))
    lines = []
    for k in range(total):
        fields = [str(total), str(k + 1), f"{len(sats):02d}"]
        for prn, el, az, snr in sats[4 * k:4 * k + 4]:
            fields += [f"{prn:02d}", f"{int(round(el)):02d}", f"{int(round(az)) % 360:03d}",
                       "" if snr is None else f"{int(round(snr)):02d}"]
        lines.append(format_sentence(talker, "GSV", fields))
    return lines


def random_constellation(rng, n_gps=8, n_glonass=6, snr=(38, 50)):
    """Random sky positions: GPS PRNs from 1, GLONASS from 65."""
    def draw(n, first):
        return [(first + k, float(rng.uniform(16, 85)), float(rng.uniform(0, 359)),
                 float(rng.uniform(*snr))) for k in range(n)]
    return {"GP": draw(n_gps, 1), "GL": draw(n_glonass, 65)}


def synthetic_log(epochs: Iterable[tuple[float, float, float, dict]], with_gst=True) -> list[str]:
    """Lines for epochs of ``(utc_time, lat, lon, {talker: sats})``."""
    out = []
    for t, lat, lon, groups in epochs:
        out.append(rmc_line(t, lat, lon))
        if with_gst:
            out.append(gst_line(t))
        for talker, sats in groups.items():
            out.extend(gsv_lines(talker, sats))
    return out
