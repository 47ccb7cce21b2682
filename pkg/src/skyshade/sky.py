"""Hemispherical sky grids and Gaussian-mixture satellite sky maps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, SkyshadeError

DEFAULT_SIGMA = 12.5


class OutOfRange(SkyshadeError, ValueError):
    """Sky coordinate outside the hemisphere."""


class GridMismatch(SkyshadeError, ValueError):
    """Two sky grids that must agree do not."""


@dataclass(frozen=True)
class SkyGrid:
    """Azimuth x elevation binning of the upper hemisphere.

    ``e`` is the azimuth cell width and ``l`` the elevation cell width, both
    in degrees. Azimuth is measured clockwise from north.
    """

    e: float = 7.5
    l: float = 9.0  # noqa: E741

    def __post_init__(self):
        for name, width, span in (("e", self.e, 360.0), ("l", self.l, 90.0)):
            if not width > 0:
                raise ConfigError(name, f"cell width must be > 0, got {width}")
            n = span / width
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(name, f"{width} does not divide {span:g} evenly")

    @property
    def n_az(self) -> int:
        return int(round(360.0 / self.e))

    @property
    def n_el(self) -> int:
        return int(round(90.0 / self.l))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_az, self.n_el)

    @property
    def az_centers(self) -> np.ndarray:
        return (np.arange(self.n_az) + 0.5) * self.e

    @property
    def el_centers(self) -> np.ndarray:
        return (np.arange(self.n_el) + 0.5) * self.l

    def refined(self, factor: int = 2) -> "SkyGrid":
        return SkyGrid(self.e / factor, self.l / factor)

    @classmethod
    def parse(cls, text: str) -> "SkyGrid":
        """Parse ``"7.5x9"``."""
        try:
            e, l = (float(t) for t in text.lower().split("x"))  # noqa: E741
        except ValueError as exc:
            raise ConfigError("grid", f"expected '<e>x<l>', got {text!r}") from exc
        return cls(e, l)

    def __str__(self):
        return f"{self.e:g}x{self.l:g}"


def cell_index(azimuth: float, elevation: float, grid: SkyGrid) -> tuple[int, int]:
    if elevation < 0 or elevation > 90:
        raise OutOfRange(f"elevation {elevation} outside [0, 90]")
    i = int(math.floor(azimuth / grid.e)) % grid.n_az
    j = min(int(math.floor(elevation / grid.l)), grid.n_el - 1)
    return i, j


def cell_indices(azimuth, elevation, grid: SkyGrid) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`cell_index`; elevations must already be >= 0."""
    azimuth = np.asarray(azimuth, dtype=float)
    elevation = np.asarray(elevation, dtype=float)
    if np.any(elevation < 0):
        raise OutOfRange("negative elevation")
    i = np.floor(azimuth / grid.e).astype(np.int64) % grid.n_az
    j = np.minimum(np.floor(elevation / grid.l).astype(np.int64), grid.n_el - 1)
    return i, j


def angular_distance(a1, e1, a2, e2):
    """Great-circle angle in degrees between two sky directions.

    Uses the Vincenty form, which depends on the azimuths only through their
    difference and stays accurate for tiny and near-antipodal separations.
    """
    da = np.radians(np.mod(np.asarray(a2, dtype=float) - np.asarray(a1, dtype=float), 360.0))
    p1 = np.radians(e1)
    p2 = np.radians(e2)
    sin1, cos1 = np.sin(p1), np.cos(p1)
    sin2, cos2 = np.sin(p2), np.cos(p2)
    cda = np.cos(da)
    num = np.hypot(cos2 * np.sin(da), cos1 * sin2 - sin1 * cos2 * cda)
    den = sin1 * sin2 + cos1 * cos2 * cda
    return np.degrees(np.arctan2(num, den))


def sky_to_vector(azimuth, elevation) -> np.ndarray:
    """Unit ENU vectors (x east, y north, z up) for sky directions."""
    az = np.radians(np.asarray(azimuth, dtype=float))
    el = np.radians(np.asarray(elevation, dtype=float))
    return np.stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)], axis=-1)


def vector_to_sky(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth (clockwise from +y) and elevation in degrees of ENU vectors."""
    v = np.asarray(vectors, dtype=float)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    az = np.mod(np.degrees(np.arctan2(x, y)), 360.0)
    az = np.where(az >= 360.0, 0.0, az)
    el = np.degrees(np.arctan2(z, np.hypot(x, y)))
    return az, el


@dataclass(frozen=True, eq=False)
class SkyMap:
    """Satellite density ``cells[i, j]`` over azimuth bin i, elevation bin j.

    ``sources`` keeps the (azimuth, elevation) of each contributing
    satellite so the map can be re-expressed in a tilted receiver frame.
    """

    grid: SkyGrid
    cells: np.ndarray
    source_count: int
    sources: np.ndarray | None = None
    sigma: float = DEFAULT_SIGMA
    utc_time: float | None = None
    _framed: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.cells.shape != self.grid.shape:
            raise GridMismatch(f"cells {self.cells.shape} vs grid {self.grid.shape}")
        self.cells.setflags(write=False)

    @property
    def total(self) -> float:
        return math.fsum(self.cells.ravel())

    def in_frame(self, rotation: np.ndarray) -> "SkyMap":
        """This constellation as seen by a receiver rotated by ``rotation``.

        ``rotation`` maps map-frame vectors into the receiver frame.
        Satellites ending up below the receiver horizon contribute nothing.
        """
        rotation = np.asarray(rotation, dtype=float)
        if np.allclose(rotation, np.eye(3), rtol=0.0, atol=1e-12):
            return self
        if self.sources is None:
            raise SkyshadeError("sky map without satellite sources cannot be re-oriented")
        key = rotation.tobytes()
        cached = self._framed.get(key)
        if cached is None:
            az, el = vector_to_sky(sky_to_vector(self.sources[:, 0], self.sources[:, 1]) @ rotation.T)
            above = el > 0
            cached = gaussian_sky_map(az[above], el[above], self.grid, self.sigma, utc_time=self.utc_time)
            if len(self._framed) > 4096:
                self._framed.clear()
            self._framed[key] = cached
        return cached


def satellite_kernel(azimuth: float, elevation: float, grid: SkyGrid, sigma: float) -> np.ndarray:
    """One satellite's Gaussian evaluated at cell centers, summing to exactly 1."""
    if not sigma > 0:
        raise ConfigError("sigma", f"must be > 0, got {sigma}")
    theta = angular_distance(grid.az_centers[:, None], grid.el_centers[None, :], azimuth, elevation)
    w = np.exp(-0.5 * (theta / sigma) ** 2)
    total = math.fsum(w.ravel())
    if total == 0.0 or not math.isfinite(total):
        # kernel underflowed everywhere: put the unit mass in the nearest cell
        w = np.zeros(grid.shape)
        w[np.unravel_index(np.argmin(theta), grid.shape)] = 1.0
        return w
    return w / total


def gaussian_sky_map(azimuths, elevations, grid: SkyGrid, sigma=DEFAULT_SIGMA, utc_time=None) -> SkyMap:
    azimuths = np.asarray(azimuths, dtype=float).ravel()
    elevations = np.asarray(elevations, dtype=float).ravel()
    cells = np.zeros(grid.shape)
    for az, el in zip(azimuths, elevations):
        cells += satellite_kernel(az, el, grid, sigma)
    sources = np.column_stack([azimuths, elevations])
    return SkyMap(grid, cells, len(azimuths), sources, sigma, utc_time)


def build_sky_map(snapshot, grid: SkyGrid | None = None, sigma=DEFAULT_SIGMA) -> SkyMap:
    """Sky map of the viable satellites of a constellation snapshot."""
    grid = grid or SkyGrid()
    viable = snapshot.viable()
    return gaussian_sky_map([o.azimuth for o in viable], [o.elevation for o in viable],
                            grid, sigma, utc_time=snapshot.utc_time)


def write_sky_map(path, sky_map: SkyMap):
    """CSV matrix (rows: elevation bins ascending, columns: azimuth bins) plus JSON sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for j in range(sky_map.grid.n_el):
            writer.writerow([repr(float(v)) for v in sky_map.cells[:, j]])
    meta = {
        "e": sky_map.grid.e,
        "l": sky_map.grid.l,
        "n_az": sky_map.grid.n_az,
        "n_el": sky_map.grid.n_el,
        "rows": "elevation bins ascending from the horizon",
        "columns": "azimuth bins clockwise from north",
        "source_count": sky_map.source_count,
        "sigma": sky_map.sigma,
        "utc_time": sky_map.utc_time,
        "sources": None if sky_map.sources is None else sky_map.sources.tolist(),
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))


def read_sky_map(path) -> SkyMap:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    grid = SkyGrid(meta["e"], meta["l"])
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    sources = meta.get("sources")
    sources = None if sources is None else np.asarray(sources, dtype=float).reshape(-1, 2)
    return SkyMap(grid, np.ascontiguousarray(rows.T), int(meta["source_count"]), sources,
                  float(meta.get("sigma", DEFAULT_SIGMA)), meta.get("utc_time"))
