"""Sky occupancy histograms, signal reduction and visible-satellite prediction.

For a receiver pose the map points above its horizon are binned on the sky
grid. Each cell yields a point count ``m`` and the lower median ``delta_med``
of its points' spherical levels. The pass-through factor of a cell is

    p(delta_med, m) = sigmoid(alpha * (delta_med - beta)) * exp(-gamma * m)

and cells holding fewer than ``m_occ`` points are let through entirely
(binary mask ``b = m < m_occ``). The predicted count is

    v_hat = sum_ij s_ij * max(p_ij, b_ij)

where ``s`` is the satellite sky map. The line-of-sight baseline keeps only
cells with no point at all.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from . import _kernels
from .errors import ConfigError, SkyshadeError
from .features import FeatureCloud
from .ground import GroundSet, ReceiverPose, pose_frame
from .plyio import write_ply
from .sky import GridMismatch, SkyGrid, SkyMap


class EmptyTrainingSet(SkyshadeError, ValueError):
    pass


@dataclass(frozen=True)
class ReductionParams:
    alpha: float = 4.0
    beta: float = 0.25
    gamma: float = 1e-10
    m_occ: int = 5

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha", f"must be > 0, got {self.alpha}")
        if not -1.0 <= self.beta <= 1.0:
            raise ConfigError("beta", f"must lie in [-1, 1], got {self.beta}")
        if not self.gamma >= 0:
            raise ConfigError("gamma", f"must be >= 0, got {self.gamma}")
        if int(self.m_occ) != self.m_occ or self.m_occ < 1:
            raise ConfigError("m_occ", f"must be an integer >= 1, got {self.m_occ}")


@dataclass(frozen=True, eq=False)
class SkyHistogram:
    """Point count and lower-median delta per sky cell, shape ``grid.shape``.

    ``delta_med`` is NaN where the cell is empty.
    """

    grid: SkyGrid
    counts: np.ndarray
    delta_med: np.ndarray

    @classmethod
    def empty(cls, grid: SkyGrid) -> "SkyHistogram":
        return cls(grid, np.zeros(grid.shape, dtype=np.int64), np.full(grid.shape, np.nan))


@dataclass(frozen=True, eq=False)
class Prediction:
    v_hat: float
    factors: np.ndarray
    reduction: np.ndarray
    mask: np.ndarray
    sky: SkyMap


def reduction(delta_med, m, params: ReductionParams = ReductionParams()):
    """Signal pass-through factor in [0, 1]; broadcasts over arrays."""
    delta_med = np.asarray(delta_med, dtype=float)
    m = np.asarray(m, dtype=float)
    p = expit(params.alpha * (delta_med - params.beta)) * np.exp(-params.gamma * m)
    return p if p.ndim else float(p)


def binary_mask(histogram: SkyHistogram, m_occ: int = 5) -> np.ndarray:
    if m_occ < 1:
        raise ConfigError("m_occ", f"must be >= 1, got {m_occ}")
    return histogram.counts < m_occ


def _rotations(normals: np.ndarray) -> np.ndarray:
    return np.stack([pose_frame(n) for n in normals]) if len(normals) else np.zeros((0, 3, 3))


def _sin2_edges(grid: SkyGrid) -> np.ndarray:
    edges = np.sin(np.radians(np.arange(grid.n_el) * grid.l)) ** 2
    edges[0] = 0.0
    return edges


def _histograms(positions, normals, features: FeatureCloud, grid: SkyGrid,
                max_range: float | None) -> tuple[np.ndarray, np.ndarray]:
    _kernels.apply_thread_cap()
    pts, deltas = features.valid_sorted_by_delta()
    rot = _rotations(normals)
    max_range2 = 0.0 if max_range is None else float(max_range) ** 2
    counts, medians = _kernels.sky_histograms(
        pts, deltas, np.ascontiguousarray(positions, dtype=np.float64), rot,
        float(grid.e), _sin2_edges(grid), grid.n_az, grid.n_el, max_range2)
    shape = (len(positions),) + grid.shape
    return counts.reshape(shape), medians.reshape(shape)


def build_histogram(pose: ReceiverPose, features: FeatureCloud, grid: SkyGrid | None = None,
                    max_range: float | None = None) -> SkyHistogram:
    """Bin the valid map points above the pose's horizon in its own sky frame."""
    grid = grid or SkyGrid()
    counts, medians = _histograms(np.asarray(pose.position, dtype=float)[None, :],
                                  np.asarray(pose.normal, dtype=float)[None, :],
                                  features, grid, max_range)
    return SkyHistogram(grid, counts[0], medians[0])


def _check_grids(sky_map: SkyMap, histogram: SkyHistogram):
    if sky_map.grid != histogram.grid:
        raise GridMismatch(f"sky map grid {sky_map.grid} vs histogram grid {histogram.grid}")


def _sky_for(pose: ReceiverPose | None, sky_map: SkyMap) -> SkyMap:
    if pose is None:
        return sky_map
    return sky_map.in_frame(pose_frame(pose.normal))


def cell_factors(histogram: SkyHistogram, params: ReductionParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``max(p, b)`` per cell, with ``p`` and ``b``; p is NaN in empty cells."""
    mask = binary_mask(histogram, params.m_occ)
    p = reduction(histogram.delta_med, histogram.counts, params)
    factors = np.where(mask, 1.0, p)
    return factors, p, mask


def predict(pose: ReceiverPose | None, sky_map: SkyMap, histogram: SkyHistogram,
            params: ReductionParams = ReductionParams()) -> Prediction:
    """Expected number of usable satellites at ``pose``.

    The sky map is re-expressed in the pose's tilted frame before the
    cellwise product; ``pose=None`` uses it as is.
    """
    _check_grids(sky_map, histogram)
    sky = _sky_for(pose, sky_map)
    factors, p, mask = cell_factors(histogram, params)
    return Prediction(float(np.sum(sky.cells * factors)), factors, p, mask, sky)


def predict_baseline(pose: ReceiverPose | None, sky_map: SkyMap, histogram: SkyHistogram) -> float:
    """Line-of-sight baseline: every cell holding at least one point is blocked."""
    _check_grids(sky_map, histogram)
    sky = _sky_for(pose, sky_map)
    return float(np.sum(sky.cells * (histogram.counts == 0)))


@dataclass(eq=False)
class VisibilityMap:
    positions: np.ndarray
    normals: np.ndarray
    v_hat: np.ndarray
    v_hat_baseline: np.ndarray
    v: int
    snapshot_time: float | None = None


def iter_histograms(ground: GroundSet, features: FeatureCloud, grid: SkyGrid,
                    max_range: float | None = None, batch: int = 256) -> Iterable[tuple[int, SkyHistogram]]:
    for start in range(0, len(ground), batch):
        stop = min(start + batch, len(ground))
        counts, medians = _histograms(ground.positions[start:stop], ground.normals[start:stop],
                                      features, grid, max_range)
        for k in range(stop - start):
            yield start + k, SkyHistogram(grid, counts[k], medians[k])


def visibility_map(ground: GroundSet, features: FeatureCloud, sky_map: SkyMap,
                   params: ReductionParams = ReductionParams(), max_range: float | None = None,
                   diagnostics: list | None = None) -> VisibilityMap:
    """Predicted count (and baseline) at every ground pose.

    When ``diagnostics`` is a list, one :class:`Prediction` per pose is
    appended to it together with its histogram.
    """
    v_hat = np.empty(len(ground))
    v_los = np.empty(len(ground))
    for i, hist in iter_histograms(ground, features, sky_map.grid, max_range):
        pose = ground[i]
        pred = predict(pose, sky_map, hist, params)
        v_hat[i] = pred.v_hat
        v_los[i] = predict_baseline(pose, sky_map, hist)
        if diagnostics is not None:
            diagnostics.append((pred, hist))
    return VisibilityMap(ground.positions.copy(), ground.normals.copy(), v_hat, v_los,
                         sky_map.source_count, sky_map.utc_time)


def write_visibility_csv(path, vmap: VisibilityMap, baseline=False):
    values = vmap.v_hat_baseline if baseline else vmap.v_hat
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "v_hat"])
        for (x, y, z), v in zip(vmap.positions, values):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(z)), repr(float(v))])


def write_visibility_ply(path, vmap: VisibilityMap, binary=True, baseline=False):
    values = vmap.v_hat_baseline if baseline else vmap.v_hat
    out = np.empty(len(values), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"), ("v_hat", "f4")])
    for i, c in enumerate("xyz"):
        out[c] = vmap.positions[:, i]
    out["v_hat"] = values
    comments = [f"source_count {vmap.v}"]
    if vmap.snapshot_time is not None:
        comments.append(f"snapshot_time {vmap.snapshot_time!r}")
    write_ply(path, out, binary=binary, comments=comments)


def write_diagnostics(directory, index: int, prediction: Prediction, histogram: SkyHistogram):
    """Per-pose grids as CSV matrices (rows: elevation bins, columns: azimuth bins)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grids = {
        "counts": histogram.counts,
        "mask": prediction.mask.astype(int),
        "delta_med": histogram.delta_med,
        "reduction": prediction.reduction,
        "factors": prediction.factors,
        "sky": prediction.sky.cells,
    }
    for name, grid in grids.items():
        np.savetxt(directory / f"pose{index:06d}_{name}.csv", np.asarray(grid, dtype=float).T,
                   delimiter=",", fmt="%.10g")


# ---------------------------------------------------------------------------
# calibration


@dataclass(frozen=True, eq=False)
class CalibrationSample:
    """One measured pose: its histogram, its (pose-frame) sky map and the measured count."""

    histogram: SkyHistogram
    sky: SkyMap
    v: float


def calibration_samples(ground: GroundSet, features: FeatureCloud, sky_maps: Sequence[SkyMap],
                        measured: Sequence[float], max_range=None) -> list[CalibrationSample]:
    """Pair each pose with its sky map (in the pose frame) and measured count."""
    if not (len(ground) == len(sky_maps) == len(measured)):
        raise ValueError("ground, sky_maps and measured must have equal lengths")
    out = []
    grids = {m.grid for m in sky_maps}
    hists = {}
    for grid in grids:
        for i, h in iter_histograms(ground, features, grid, max_range):
            hists[(i, grid)] = h
    for i, (sky, v) in enumerate(zip(sky_maps, measured)):
        out.append(CalibrationSample(hists[(i, sky.grid)], _sky_for(ground[i], sky), float(v)))
    return out


DEFAULT_SEARCH_SPACE = {
    "alpha": tuple(float(a) for a in np.arange(1.0, 10.5, 1.0)),
    "beta": tuple(float(b) for b in np.round(np.arange(-1.0, 1.0001, 0.125), 6)),
    "gamma": tuple(float(g) for g in 10.0 ** np.arange(-10, -1)),
}


@dataclass(frozen=True)
class CalibrationResult:
    params: ReductionParams
    mae: float
    n_samples: int


def _tie_distance(a, b, g, default: ReductionParams, space) -> float:
    span_a = (max(space["alpha"]) - min(space["alpha"])) or 1.0
    log_g = lambda x: math.log10(x) if x > 0 else -20.0  # noqa: E731
    span_g = (log_g(max(space["gamma"])) - log_g(min(space["gamma"]))) or 1.0
    return (((a - default.alpha) / span_a) ** 2 + ((b - default.beta) / 2.0) ** 2
            + ((log_g(g) - log_g(default.gamma)) / span_g) ** 2)


def calibrate(samples: Sequence[CalibrationSample], search_space: Mapping[str, Sequence[float]] | None = None,
              m_occ: int = 5, default: ReductionParams | None = None) -> CalibrationResult:
    """Grid search of (alpha, beta, gamma) minimizing the mean absolute error of v_hat.

    Candidates whose error ties the minimum (within 1e-9) are resolved
    toward ``default`` (the published parameters unless given).
    """
    if not samples:
        raise EmptyTrainingSet("no calibration samples")
    space = dict(DEFAULT_SEARCH_SPACE)
    space.update(search_space or {})
    default = default or ReductionParams(m_occ=m_occ)
    for name in ("alpha", "beta", "gamma"):
        if not len(space[name]):
            raise ConfigError(name, "empty search range")

    open_sum = np.empty(len(samples))
    measured = np.array([s.v for s in samples], dtype=float)
    s_occ, d_occ, m_occ_counts, owner = [], [], [], []
    for k, sample in enumerate(samples):
        _check_grids(sample.sky, sample.histogram)
        counts = sample.histogram.counts
        occupied = counts >= m_occ
        open_sum[k] = float(np.sum(sample.sky.cells[~occupied]))
        s_occ.append(sample.sky.cells[occupied])
        d_occ.append(sample.histogram.delta_med[occupied])
        m_occ_counts.append(counts[occupied].astype(float))
        owner.append(np.full(int(occupied.sum()), k))
    s_occ = np.concatenate(s_occ)
    d_occ = np.concatenate(d_occ)
    m_cells = np.concatenate(m_occ_counts)
    owner = np.concatenate(owner)

    gammas = np.asarray(space["gamma"], dtype=float)
    absorb = s_occ[None, :] * np.exp(-gammas[:, None] * m_cells[None, :])  # (G, C)
    best = None
    for a, b in itertools.product(space["alpha"], space["beta"]):
        sig = expit(a * (d_occ - b))
        for gi, g in enumerate(gammas):
            v_hat = open_sum + np.bincount(owner, weights=absorb[gi] * sig, minlength=len(samples))
            err = float(np.mean(np.abs(v_hat - measured)))
            tie = _tie_distance(a, b, g, default, space)
            if best is None or err < best[0] - 1e-9 or (abs(err - best[0]) <= 1e-9 and tie < best[1]):
                best = (err, tie, a, b, float(g))
    err, _, a, b, g = best
    return CalibrationResult(ReductionParams(float(a), float(b), g, m_occ), err, len(samples))
