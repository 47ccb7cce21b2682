"""Pipeline configuration; defaults are the published experimental values."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .predictor import ReductionParams
from .sky import SkyGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Config:
    sigma: float = 12.5
    d_box: float = 0.1
    k_nn: int = 50
    d_nn: float = 0.25
    delta_ground: float = -0.6
    eps_deg: float = 10.0
    e: float = 7.5
    l: float = 9.0  # noqa: E741
    m_occ: int = 5
    alpha: float = 4.0
    beta: float = 0.25
    gamma: float = 1e-10
    h_ant: float = 1.0
    elevation_mask: float = 15.0
    snr_cutoff: float = 35.0
    origin_lat: float | None = None
    origin_lon: float | None = None

    def __post_init__(self):
        def check(name, ok, expected):
            if not ok:
                raise ConfigError(name, f"{getattr(self, name)!r} not in {expected}")

        check("sigma", self.sigma > 0, "(0, inf)")
        check("d_box", self.d_box > 0, "(0, inf)")
        check("k_nn", int(self.k_nn) == self.k_nn and self.k_nn >= 3, "integers >= 3")
        check("d_nn", self.d_nn > 0, "(0, inf)")
        check("delta_ground", -1 <= self.delta_ground <= 1, "[-1, 1]")
        check("eps_deg", 0 < self.eps_deg < 90, "(0, 90)")
        check("h_ant", self.h_ant > 0, "(0, inf)")
        check("elevation_mask", 0 <= self.elevation_mask <= 90, "[0, 90]")
        check("snr_cutoff", 0 <= self.snr_cutoff <= 99, "[0, 99]")
        if self.origin_lat is not None:
            check("origin_lat", -90 <= self.origin_lat <= 90, "[-90, 90]")
        if self.origin_lon is not None:
            check("origin_lon", -180 <= self.origin_lon <= 180, "[-180, 180]")
        if (self.origin_lat is None) != (self.origin_lon is None):
            raise ConfigError("origin_lat", "origin_lat and origin_lon must be given together")
        self.grid  # validates e and l
        self.reduction  # validates alpha, beta, gamma, m_occ

    @property
    def grid(self) -> SkyGrid:
        return SkyGrid(self.e, self.l)

    @property
    def reduction(self) -> ReductionParams:
        return ReductionParams(self.alpha, self.beta, self.gamma, self.m_occ)

    @property
    def origin(self) -> tuple[float, float] | None:
        if self.origin_lat is None:
            return None
        return (self.origin_lat, self.origin_lon)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        for name in known:
            if name not in data:
                log.info("config: %s not given, using default %r", name, known[name].default)
        values = {}
        for name, value in data.items():
            if value is None:
                values[name] = None
                continue
            kind = int if name in ("k_nn", "m_occ") else float
            try:
                converted = kind(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(name, f"expected a number, got {value!r}") from exc
            if kind is int and converted != value:
                raise ConfigError(name, f"expected an integer, got {value!r}")
            values[name] = converted
        return cls(**values)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")
