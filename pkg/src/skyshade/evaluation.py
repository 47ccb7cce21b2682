"""Trajectory comparison of predicted and measured satellite counts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import SkyshadeError

DEFAULT_WINDOW = 5.0
DEFAULT_DEGREE = 2
DEFAULT_MATCH_RADIUS = 2.0

# WGS84
_A = 6378137.0
_E2 = 6.69437999014e-3


class EmptySeries(SkyshadeError, ValueError):
    pass


class RankDeficient(SkyshadeError, np.linalg.LinAlgError):
    pass


class MissingGeoreference(SkyshadeError, ValueError):
    pass


@dataclass(frozen=True)
class TrajectorySample:
    arc_length: float
    position: tuple[float, float, float]
    v: float
    v_hat: float
    v_hat_baseline: float
    utc_time: float | None = None


@dataclass(frozen=True)
class WindowedSeries:
    arc_length: np.ndarray
    v_mean: np.ndarray
    v_std: np.ndarray
    v_hat_mean: np.ndarray
    v_hat_baseline_mean: np.ndarray


@dataclass(frozen=True)
class EvalReport:
    mae: float
    rmse: float
    mean_bias: float
    baseline_mae: float
    baseline_rmse: float
    baseline_bias: float
    fit_coeffs: list[float]
    fit_mse: float
    fit_degree: int
    n_samples: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _arrays(series: Sequence[TrajectorySample]):
    arc = np.array([s.arc_length for s in series], dtype=float)
    v = np.array([s.v for s in series], dtype=float)
    v_hat = np.array([s.v_hat for s in series], dtype=float)
    v_los = np.array([s.v_hat_baseline for s in series], dtype=float)
    return arc, v, v_hat, v_los


def windowed_stats(series: Sequence[TrajectorySample], window: float = DEFAULT_WINDOW) -> WindowedSeries:
    """Centered moving statistics over ``[l - w/2, l + w/2]`` of arc length.

    The spread of ``v`` is the population standard deviation. Predictions
    are smoothed with the same window.
    """
    if not window > 0:
        raise ValueError(f"window must be > 0, got {window}")
    if len(series) == 0:
        raise EmptySeries("no samples")
    arc, v, v_hat, v_los = _arrays(series)
    if np.any(np.diff(arc) < 0):
        raise ValueError("series must be sorted by arc length")
    lo = np.searchsorted(arc, arc - window / 2.0, side="left")
    hi = np.searchsorted(arc, arc + window / 2.0, side="right")
    csum = lambda x: np.concatenate([[0.0], np.cumsum(x)])  # noqa: E731
    n = (hi - lo).astype(float)
    mean = lambda c: (c[hi] - c[lo]) / n  # noqa: E731
    v_mean = mean(csum(v))
    # two-pass variance per window; windows are short
    v_std = np.array([np.std(v[a:b]) for a, b in zip(lo, hi)])
    return WindowedSeries(arc, v_mean, v_std, mean(csum(v_hat)), mean(csum(v_los)))


def fit_relation(v, v_hat, weights=None, degree: int = DEFAULT_DEGREE) -> tuple[np.ndarray, float]:
    """Weighted least-squares polynomial ``v_hat ~ f(v)``.

    Returns coefficients in increasing order of power and the weighted mean
    squared residual.
    """
    v = np.asarray(v, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative with a positive sum")
    if len(np.unique(v[w > 0])) < degree + 1:
        raise RankDeficient(f"need at least {degree + 1} distinct v values for degree {degree}")
    vander = np.vander(v, degree + 1, increasing=True)
    sw = np.sqrt(w)
    coeffs, _, rank, _ = np.linalg.lstsq(vander * sw[:, None], v_hat * sw, rcond=None)
    if rank < degree + 1:
        raise RankDeficient(f"design matrix rank {rank} < {degree + 1}")
    resid = vander @ coeffs - v_hat
    mse = float(np.sum(w * resid ** 2) / np.sum(w))
    return coeffs, mse


def evaluate(series: Sequence[TrajectorySample], degree: int = DEFAULT_DEGREE, weights=None) -> EvalReport:
    if len(series) == 0:
        raise EmptySeries("no samples")
    _, v, v_hat, v_los = _arrays(series)
    err = v_hat - v
    err_los = v_los - v
    try:
        coeffs, fit_mse = fit_relation(v, v_hat, weights, degree)
        coeffs = [float(c) for c in coeffs]
    except RankDeficient:
        coeffs, fit_mse = [], math.nan
    return EvalReport(
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        mean_bias=float(np.mean(err)),
        baseline_mae=float(np.mean(np.abs(err_los))),
        baseline_rmse=float(np.sqrt(np.mean(err_los ** 2))),
        baseline_bias=float(np.mean(err_los)),
        fit_coeffs=coeffs,
        fit_mse=fit_mse,
        fit_degree=degree,
        n_samples=len(series),
    )


def geodetic_to_enu(lat, lon, origin: tuple[float, float] | None, height=0.0) -> np.ndarray:
    """Local tangent-plane ENU offsets (meters) of lat/lon from ``origin``.

    Uses the WGS84 meridian and prime-vertical radii at the origin; adequate
    over a few kilometers.
    """
    if origin is None:
        raise MissingGeoreference("an ENU origin (lat, lon) is required")
    lat0, lon0 = (math.radians(c) for c in origin)
    sin0 = math.sin(lat0)
    w = math.sqrt(1.0 - _E2 * sin0 * sin0)
    r_meridian = _A * (1.0 - _E2) / w ** 3
    r_normal = _A / w
    dlat = np.radians(np.asarray(lat, dtype=float)) - lat0
    dlon = np.radians(np.asarray(lon, dtype=float)) - lon0
    dlon = (dlon + math.pi) % (2 * math.pi) - math.pi
    east = dlon * r_normal * math.cos(lat0)
    north = dlat * r_meridian
    up = np.broadcast_to(np.asarray(height, dtype=float), east.shape)
    return np.stack([east, north, up], axis=-1)


@dataclass(frozen=True)
class Association:
    fix_index: np.ndarray
    pose_index: np.ndarray
    fix_enu: np.ndarray
    dropped: int


def associate(latitudes, longitudes, pose_positions, origin: tuple[float, float] | None,
              radius: float = DEFAULT_MATCH_RADIUS) -> Association:
    """Match each fix to its horizontally nearest pose within ``radius`` meters."""
    enu = geodetic_to_enu(latitudes, longitudes, origin).reshape(-1, 3)
    poses = np.asarray(pose_positions, dtype=float).reshape(-1, 3)
    if len(poses) == 0:
        return Association(np.zeros(0, int), np.zeros(0, int), enu[:0], len(enu))
    dist, idx = cKDTree(poses[:, :2]).query(enu[:, :2], k=1)
    keep = dist <= radius
    return Association(np.flatnonzero(keep), idx[keep], enu[keep], int((~keep).sum()))


def arc_lengths(positions) -> np.ndarray:
    p = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(p) == 0:
        return np.zeros(0)
    steps = np.linalg.norm(np.diff(p[:, :2], axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def write_series_csv(path, series: Sequence[TrajectorySample], window: float = DEFAULT_WINDOW):
    """Smoothed series for plotting; raw predictions are kept alongside the smoothed ones."""
    ws = windowed_stats(series, window)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["arc_length", "v_mean", "v_std", "v_hat", "v_hat_baseline",
                         "v", "v_hat_mean", "v_hat_baseline_mean"])
        for k, s in enumerate(series):
            writer.writerow([f"{ws.arc_length[k]:.3f}", f"{ws.v_mean[k]:.6f}", f"{ws.v_std[k]:.6f}",
                             f"{s.v_hat:.6f}", f"{s.v_hat_baseline:.6f}", f"{s.v:g}",
                             f"{ws.v_hat_mean[k]:.6f}", f"{ws.v_hat_baseline_mean[k]:.6f}"])
