"""Per-point eigenvalue shape features and surface normals.

For each point the covariance of its ``k_nn`` nearest neighbors (the point
itself included) is eigendecomposed, and the sorted eigenvalues
``l1 <= l2 <= l3`` give

    u     = l1 / l3                                  unstructuredness
    s     = (l2 / l3) * (l2 - l1) / sqrt(l2^2 + l1^2)  structuredness
    delta = u - s                                    spherical level

``delta`` is close to -1 on planes, 0 on lines and edges, +1 in diffuse
volumes such as foliage. Points farther than ``d_nn`` from the mean of
their neighborhood sit on a corner or the border of the map and are marked
invalid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import MapCloud, SpatialIndex
from .errors import SkyshadeError
from .plyio import CorruptHeader, read_ply, write_ply

DEFAULT_KNN = 50
DEFAULT_DNN = 0.25


class CloudTooSmall(SkyshadeError):
    pass


class DegenerateCovariance(SkyshadeError, ZeroDivisionError):
    pass


class ZeroVector(SkyshadeError, ValueError):
    pass


def shape_values(l1: float, l2: float, l3: float) -> tuple[float, float, float]:
    """``(u, s, delta)`` for ascending eigenvalues.

    The perfect-line case ``l1 = l2 = 0`` is a 0/0 form in ``s``; it is
    defined as ``s = 0``.
    """
    if not l3 > 0:
        raise DegenerateCovariance("largest eigenvalue is zero")
    u = l1 / l3
    norm = np.hypot(l2, l1)
    s = 0.0 if norm == 0 else (l2 / l3) * ((l2 - l1) / norm)
    return float(u), float(s), float(u - s)


def shape_values_array(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`shape_values`; rows with ``l3 == 0`` yield NaN."""
    lam = np.asarray(lam, dtype=np.float64)
    l1, l2, l3 = lam[..., 0], lam[..., 1], lam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(l3 > 0, l1 / l3, np.nan)
        norm = np.hypot(l2, l1)
        ratio = np.where(norm > 0, (l2 - l1) / np.where(norm > 0, norm, 1.0), 0.0)
        s = np.where(l3 > 0, (l2 / l3) * ratio, np.nan)
    return u, s, u - s


def orient_normal(v) -> np.ndarray:
    """Unit vector with n_z >= 0; horizontal ties resolved toward +x, then +y."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise ZeroVector("cannot orient a zero vector")
    return orient_normals((v / norm)[None, :])[0]


def orient_normals(n: np.ndarray) -> np.ndarray:
    n = np.array(n, dtype=np.float64)
    nx, ny, nz = n[:, 0], n[:, 1], n[:, 2]
    flip = (nz < 0) | ((nz == 0) & ((nx < 0) | ((nx == 0) & (ny < 0))))
    n[flip] *= -1.0
    return n


@dataclass(eq=False)
class FeatureCloud:
    """Shape features for every point of a map.

    Invalid points (border/corner points, degenerate covariances) stay in
    the arrays so that exports stay aligned with the source cloud, but are
    excluded from every downstream statistic.
    """

    points: np.ndarray
    eigenvalues: np.ndarray
    u: np.ndarray
    s: np.ndarray
    delta: np.ndarray
    normals: np.ndarray
    valid: np.ndarray
    k_nn: int = DEFAULT_KNN
    d_nn: float = DEFAULT_DNN
    _sorted: tuple | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)

    @classmethod
    def synthetic(cls, points, delta, normals=None, valid=None) -> "FeatureCloud":
        """Feature cloud with prescribed spherical levels, bypassing the eigen analysis.

        ``u`` and ``s`` are set to ``max(delta, 0)`` and ``max(-delta, 0)``.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), (n,)).copy()
        if normals is None:
            normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        return cls(points, np.full((n, 3), np.nan), np.maximum(delta, 0), np.maximum(-delta, 0),
                   delta, np.asarray(normals, dtype=np.float64), valid, 0, 0.0)

    def valid_sorted_by_delta(self) -> tuple[np.ndarray, np.ndarray]:
        """Valid points and their deltas, sorted by ascending delta (stable)."""
        if self._sorted is None:
            keep = np.flatnonzero(self.valid & np.isfinite(self.delta))
            order = keep[np.argsort(self.delta[keep], kind="stable")]
            self._sorted = (np.ascontiguousarray(self.points[order]),
                            np.ascontiguousarray(self.delta[order]))
        return self._sorted


def covariance_eigen(neighborhoods: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, ascending eigenvalues (clamped at 0) and eigenvectors of (B, k, 3) neighborhoods.

    The covariance uses the unbiased 1/(k-1) normalization.
    """
    k = neighborhoods.shape[1]
    mean = neighborhoods.mean(axis=1)
    centered = neighborhoods - mean[:, None, :]
    cov = np.einsum("bki,bkj->bij", centered, centered) / max(k - 1, 1)
    lam, vec = np.linalg.eigh(cov)
    return mean, np.clip(lam, 0.0, None), vec


def compute_features(cloud: MapCloud | np.ndarray, index: SpatialIndex | None = None,
                     k_nn: int = DEFAULT_KNN, d_nn: float = DEFAULT_DNN,
                     chunk: int = 32768, workers: int = 1) -> FeatureCloud:
    points = cloud.points if isinstance(cloud, MapCloud) else np.asarray(cloud, dtype=np.float64)
    n = len(points)
    if k_nn < 3:
        raise ValueError("k_nn must be >= 3 to span a covariance")
    if n < k_nn:
        raise CloudTooSmall(f"{n} points, need at least k_nn={k_nn}")
    if index is None:
        index = SpatialIndex(points)
    lam = np.empty((n, 3))
    normals = np.empty((n, 3))
    offsets = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        idx, _ = index.query(points[start:stop], k_nn, workers=workers)
        mean, lam[start:stop], vec = covariance_eigen(index.points[idx])
        offsets[start:stop] = np.linalg.norm(points[start:stop] - mean, axis=1)
        normals[start:stop] = vec[:, :, 0]
    normals = orient_normals(normals)
    u, s, delta = shape_values_array(lam)
    valid = (offsets <= d_nn) & (lam[:, 2] > 0)
    return FeatureCloud(points.copy(), lam, u, s, delta, normals, valid, k_nn, d_nn)


_FEATURE_FIELDS = [("x", "f8"), ("y", "f8"), ("z", "f8"),
                   ("u", "f8"), ("s", "f8"), ("delta", "f8"),
                   ("nx", "f8"), ("ny", "f8"), ("nz", "f8"), ("valid", "u1")]


def write_features(path, features: FeatureCloud, binary=True):
    out = np.empty(len(features), dtype=_FEATURE_FIELDS)
    for i, c in enumerate("xyz"):
        out[c] = features.points[:, i]
        out["n" + c] = features.normals[:, i]
    out["u"], out["s"], out["delta"] = features.u, features.s, features.delta
    out["valid"] = features.valid
    write_ply(path, out, binary=binary,
              comments=[f"k_nn {features.k_nn}", f"d_nn {features.d_nn!r}"])


def read_features(path) -> FeatureCloud:
    data, comments = read_ply(path)
    missing = [n for n, _ in _FEATURE_FIELDS if n not in data.dtype.names]
    if missing:
        raise CorruptHeader(f"feature PLY lacks properties {missing}")
    params = dict(c.split(None, 1) for c in comments if " " in c)
    points = np.column_stack([data[c].astype(np.float64) for c in "xyz"])
    normals = np.column_stack([data["n" + c].astype(np.float64) for c in "xyz"])
    f = lambda name: data[name].astype(np.float64)  # noqa: E731
    return FeatureCloud(points, np.full((len(data), 3), np.nan), f("u"), f("s"), f("delta"),
                        normals, data["valid"].astype(bool),
                        int(params.get("k_nn", DEFAULT_KNN)), float(params.get("d_nn", DEFAULT_DNN)))
