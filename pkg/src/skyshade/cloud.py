"""Point-cloud maps: file loading, voxel filtering and k-NN queries."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import SkyshadeError
from .plyio import CorruptHeader, UnsupportedFormat, read_ply, write_ply

log = logging.getLogger(__name__)

DEFAULT_VOXEL = 0.1


class EmptyCloud(SkyshadeError):
    pass


@dataclass(eq=False)
class MapCloud:
    """Points in the ENU map frame (x east, y north, z up), meters.

    ``extra`` carries any additional per-point PLY properties so they survive
    a load/filter/save round trip.
    """

    points: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)
    voxel_size: float | None = None
    dropped: int = 0
    coord_dtype: str = "f8"

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __len__(self):
        return len(self.points)

    def take(self, idx) -> "MapCloud":
        return replace(self, points=self.points[idx],
                       extra={k: v[idx] for k, v in self.extra.items()})


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return "ply"
    if suffix in (".xyz", ".csv", ".txt"):
        return "xyz"
    raise UnsupportedFormat(f"cannot infer format of {path.name!r}")


def load_cloud(path, fmt: str | None = None) -> MapCloud:
    """Load a PLY (ascii or binary little-endian) or XYZ CSV file.

    Rows with non-finite coordinates are dropped; the count is kept in
    ``MapCloud.dropped``.
    """
    path = Path(path)
    fmt = (fmt or _infer_format(path)).lower()
    if fmt in ("ply", "ply-ascii", "ply-binary", "ply-binary-little-endian"):
        data, _ = read_ply(path)
        names = data.dtype.names
        if not all(c in names for c in "xyz"):
            raise CorruptHeader("vertex element lacks x, y, z properties")
        coord_dtype = "f4" if all(data.dtype[c] == np.float32 for c in "xyz") else "f8"
        points = np.column_stack([data[c].astype(np.float64) for c in "xyz"])
        extra = {n: np.array(data[n]) for n in names if n not in ("x", "y", "z")}
    elif fmt in ("xyz", "csv", "xyz-csv"):
        points = _read_xyz(path)
        extra = {}
        coord_dtype = "f8"
    else:
        raise UnsupportedFormat(fmt)
    finite = np.isfinite(points).all(axis=1)
    dropped = int((~finite).sum())
    if dropped:
        log.info("%s: dropped %d non-finite points", path.name, dropped)
    return MapCloud(points[finite], {k: v[finite] for k, v in extra.items()},
                    dropped=dropped, coord_dtype=coord_dtype)


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        delimiter = "," if "," in sample else None
        columns = (0, 1, 2)
        for lineno, line in enumerate(fh):
            words = line.strip().split(delimiter)
            words = [w.strip() for w in words]
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if lineno == 0 and not _numeric(words[0]):
                lowered = [w.lower() for w in words]
                if all(c in lowered for c in "xyz"):
                    columns = tuple(lowered.index(c) for c in "xyz")
                continue
            if len(words) <= max(columns):
                raise CorruptHeader(f"line {lineno + 1}: expected at least {max(columns) + 1} columns")
            rows.append([_to_float(words[c]) for c in columns])
    return np.asarray(rows, dtype=np.float64).reshape(-1, 3)


def _numeric(word: str) -> bool:
    try:
        float(word)
    except ValueError:
        return False
    return True


def _to_float(word: str) -> float:
    try:
        return float(word)
    except ValueError:
        return float("nan")


def cloud_to_structured(cloud: MapCloud) -> np.ndarray:
    c = cloud.coord_dtype
    fields = [("x", c), ("y", c), ("z", c)]
    fields += [(k, v.dtype.str[1:]) for k, v in cloud.extra.items()]
    out = np.empty(len(cloud), dtype=fields)
    for i, name in enumerate("xyz"):
        out[name] = cloud.points[:, i]
    for k, v in cloud.extra.items():
        out[k] = v
    return out


def save_cloud(path, cloud: MapCloud, binary=True, comments=()):
    path = Path(path)
    if _infer_format(path) == "xyz":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "z"])
            writer.writerows([repr(float(v)) for v in row] for row in cloud.points)
        return
    comments = list(comments)
    if cloud.voxel_size is not None:
        comments.append(f"voxel_size {cloud.voxel_size!r}")
    write_ply(path, cloud_to_structured(cloud), binary=binary, comments=comments)


def voxel_keys(points: np.ndarray, d_box: float, anchor=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Integer voxel coordinates; voxel boundaries sit at multiples of d_box from ``anchor``."""
    rel = np.asarray(points, dtype=np.float64) - np.asarray(anchor, dtype=np.float64)
    return np.floor(rel / d_box).astype(np.int64)


def voxel_filter(cloud: MapCloud, d_box: float = DEFAULT_VOXEL, anchor=(0.0, 0.0, 0.0)) -> MapCloud:
    """Keep one point per voxel of side ``d_box``: the one nearest the voxel center.

    Distance ties fall back to lexicographic coordinate order, so the result
    does not depend on the input order. Output is sorted by voxel key.
    """
    if not d_box > 0:
        raise ValueError(f"d_box must be > 0, got {d_box}")
    if len(cloud) == 0:
        return replace(cloud, voxel_size=d_box)
    anchor = np.asarray(anchor, dtype=np.float64)
    rel = cloud.points - anchor
    keys = np.floor(rel / d_box).astype(np.int64)
    offset = rel - (keys + 0.5) * d_box
    dist2 = np.einsum("ij,ij->i", offset, offset)
    p = cloud.points
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0], dist2, keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sk[1:] != sk[:-1], axis=1)
    return replace(cloud.take(order[first]), voxel_size=d_box)


class SpatialIndex:
    """Exact k-nearest-neighbor index over a fixed set of points.

    Backed by :class:`scipy.spatial.cKDTree`; results are re-ranked by
    (distance, insertion index) so equidistant neighbors come back in
    insertion order.
    """

    def __init__(self, points):
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def query(self, queries, k: int, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Indices and distances of the ``min(k, N)`` nearest points of each query."""
        if len(self.points) == 0:
            raise EmptyCloud("index holds no points")
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        k_eff = min(k, n)
        k_probe = min(k_eff + 1, n)
        _, idx = self._tree.query(queries, k=k_probe, workers=workers)
        idx = idx.reshape(len(queries), k_probe)
        dist = np.linalg.norm(self.points[idx] - queries[:, None, :], axis=2)
        order = np.lexsort((idx, dist), axis=-1)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        if k_probe > k_eff:
            # a tie straddling the cut-off: resolve it against every equidistant point
            for row in np.flatnonzero(dist[:, k_eff - 1] == dist[:, k_eff]):
                idx[row], dist[row] = self._resolve_ties(queries[row], dist[row, k_eff - 1], k_probe)
        return idx[:, :k_eff], dist[:, :k_eff]

    def _resolve_ties(self, q, radius, width):
        cand = np.asarray(self._tree.query_ball_point(q, np.nextafter(radius, np.inf)), dtype=np.int64)
        d = np.linalg.norm(self.points[cand] - q, axis=1)
        order = np.lexsort((cand, d))[:width]
        return cand[order], d[order]

    def knn(self, query, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Single-query form of :meth:`query`."""
        idx, dist = self.query(np.asarray(query, dtype=np.float64).reshape(1, 3), k)
        return idx[0], dist[0]
