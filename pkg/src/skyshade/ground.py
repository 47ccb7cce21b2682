"""Ground segmentation and virtual receiver poses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SkyshadeError
from .features import FeatureCloud
from .plyio import CorruptHeader, read_ply, write_ply

DEFAULT_DELTA_GROUND = -0.6
DEFAULT_EPS_DEG = 10.0
DEFAULT_H_ANT = 1.0


class DegenerateNormal(SkyshadeError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ReceiverPose:
    position: np.ndarray
    normal: np.ndarray
    h_ant: float = DEFAULT_H_ANT

    @classmethod
    def upright(cls, position, h_ant=DEFAULT_H_ANT) -> "ReceiverPose":
        return cls(np.asarray(position, dtype=float), np.array([0.0, 0.0, 1.0]), h_ant)

    @property
    def rotation(self) -> np.ndarray:
        return pose_frame(self.normal)


@dataclass(eq=False)
class GroundSet:
    """Receiver poses over the segmented ground, stored column-wise."""

    positions: np.ndarray
    normals: np.ndarray
    source_index: np.ndarray
    h_ant: float = DEFAULT_H_ANT
    delta_ground: float = DEFAULT_DELTA_GROUND
    eps_deg: float = DEFAULT_EPS_DEG

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> ReceiverPose:
        return ReceiverPose(self.positions[i], self.normals[i], self.h_ant)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_poses(cls, poses, **params) -> "GroundSet":
        poses = list(poses)
        positions = np.array([p.position for p in poses], dtype=float).reshape(-1, 3)
        normals = np.array([p.normal for p in poses], dtype=float).reshape(-1, 3)
        h_ant = poses[0].h_ant if poses else params.pop("h_ant", DEFAULT_H_ANT)
        params.pop("h_ant", None)
        return cls(positions, normals, np.full(len(poses), -1), h_ant, **params)


def segment_ground(features: FeatureCloud, delta_ground=DEFAULT_DELTA_GROUND,
                   eps_deg=DEFAULT_EPS_DEG, h_ant=DEFAULT_H_ANT,
                   offset="normal", stride=1) -> GroundSet:
    """Poses on every valid point with ``delta < delta_ground`` and ``arccos(n_z) < eps``.

    The antenna sits ``h_ant`` above the ground point, along the surface
    normal (``offset="normal"``) or straight up (``offset="vertical"``).
    """
    if not -1.0 <= delta_ground <= 1.0:
        raise ConfigError("delta_ground", f"must lie in [-1, 1], got {delta_ground}")
    if not 0.0 < eps_deg < 90.0:
        raise ConfigError("eps_deg", f"must lie in (0, 90), got {eps_deg}")
    if not h_ant > 0:
        raise ConfigError("h_ant", f"must be > 0, got {h_ant}")
    if offset not in ("normal", "vertical"):
        raise ConfigError("offset", f"must be 'normal' or 'vertical', got {offset!r}")
    nz = np.clip(features.normals[:, 2], -1.0, 1.0)
    with np.errstate(invalid="ignore"):
        keep = (features.valid & (features.delta < delta_ground)
                & (np.degrees(np.arccos(nz)) < eps_deg))
    idx = np.flatnonzero(keep)[::max(int(stride), 1)]
    normals = features.normals[idx] / np.linalg.norm(features.normals[idx], axis=1, keepdims=True)
    lift = normals if offset == "normal" else np.array([0.0, 0.0, 1.0])
    positions = features.points[idx] + h_ant * lift
    return GroundSet(positions, normals, idx, h_ant, delta_ground, eps_deg)


def pose_frame(normal) -> np.ndarray:
    """Minimal rotation taking ``normal`` onto +z.

    The rotation axis is ``normal x z``, so map north stays the azimuth
    origin of the receiver's sky for any tilt.
    """
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if not norm > 0 or not n[2] > 0:
        raise DegenerateNormal(f"receiver normal {n} must point upward")
    n = n / norm
    axis = np.cross(n, [0.0, 0.0, 1.0])
    s = np.linalg.norm(axis)
    c = n[2]
    if s < 1e-15:
        return np.eye(3)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + k + k @ k * ((1.0 - c) / (s * s))


def tilt_deg(normal) -> float:
    n = np.asarray(normal, dtype=float)
    return math.degrees(math.acos(max(-1.0, min(1.0, n[2] / np.linalg.norm(n)))))


def write_ground(path, ground: GroundSet, binary=True):
    out = np.empty(len(ground), dtype=[("x", "f8"), ("y", "f8"), ("z", "f8"),
                                       ("nx", "f8"), ("ny", "f8"), ("nz", "f8"),
                                       ("source", "i4")])
    for i, c in enumerate("xyz"):
        out[c] = ground.positions[:, i]
        out["n" + c] = ground.normals[:, i]
    out["source"] = ground.source_index
    write_ply(path, out, binary=binary, comments=[
        f"h_ant {ground.h_ant!r}", f"delta_ground {ground.delta_ground!r}",
        f"eps_deg {ground.eps_deg!r}"])


def read_ground(path) -> GroundSet:
    data, comments = read_ply(path)
    names = data.dtype.names
    if not all(c in names for c in ("x", "y", "z", "nx", "ny", "nz")):
        raise CorruptHeader("ground PLY needs x, y, z, nx, ny, nz")
    params = dict(c.split(None, 1) for c in comments if " " in c)
    positions = np.column_stack([data[c].astype(float) for c in "xyz"])
    normals = np.column_stack([data["n" + c].astype(float) for c in "xyz"])
    source = data["source"].astype(np.int64) if "source" in names else np.full(len(data), -1)
    return GroundSet(positions, normals, source,
                     float(params.get("h_ant", DEFAULT_H_ANT)),
                     float(params.get("delta_ground", DEFAULT_DELTA_GROUND)),
                     float(params.get("eps_deg", DEFAULT_EPS_DEG)))
