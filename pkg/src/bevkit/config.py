"""Runtime defaults shared by the CLI and the evaluation harness.

Defaults mirror the reference operating point: perception ranges
X(-30, 30), Y(-40, 40), Z(0, 80) m, a 60 x 80 BEV grid, projection-prune
threshold 1e-3, class-alignment factor 0.2, image-mask threshold 5e-4,
and 100 proposals / 100 extra queries.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Tuple

from .eval3d import MatchConfig
from .grid import UnevenGridSpec, build_grid


@dataclass(frozen=True)
class Config:
    x_range: Tuple[float, float] = (-30.0, 30.0)
    y_range: Tuple[float, float] = (-40.0, 40.0)
    z_range: Tuple[float, float] = (0.0, 80.0)
    n_x: int = 60
    n_z: int = 80
    tau: float = 1e-3
    gamma: float = 0.2
    epsilon: float = 5e-4
    m_proposals: int = 100
    n_queries: int = 100
    uneven_grid: bool = True
    uneven_projection_bins: bool = False
    visibility_tol: float = 0.1
    iou_thresholds: tuple = MatchConfig().iou_thresholds
    depth_bands: tuple = MatchConfig().depth_bands
    band_names: tuple = MatchConfig().band_names

    def __post_init__(self):
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if not hi > lo:
                raise ValueError(f"{name} must be non-degenerate")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.n_x < 1 or self.n_z < 1:
            raise ValueError("grid resolution must be >= 1")
        if self.tau < 0 or self.epsilon < 0:
            raise ValueError("tau and epsilon must be non-negative")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if self.m_proposals < 1 or self.n_queries < 0:
            raise ValueError("query counts out of range")
        object.__setattr__(self, "iou_thresholds", tuple(float(t) for t in self.iou_thresholds))
        object.__setattr__(self, "depth_bands",
                           tuple((float(a), float(b)) for a, b in self.depth_bands))
        object.__setattr__(self, "band_names", tuple(self.band_names))
        # delegate the cross-field checks
        self.match_config()

    def grid(self) -> UnevenGridSpec:
        return build_grid(self.x_range, self.z_range, self.n_x, self.n_z,
                          uneven=self.uneven_grid)

    def match_config(self) -> MatchConfig:
        return MatchConfig(self.iou_thresholds, self.depth_bands, self.band_names)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Config":
        raw = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("x_range", "y_range", "z_range", "iou_thresholds", "band_names"):
            if key in raw:
                raw[key] = tuple(raw[key])
        if "depth_bands" in raw:
            raw["depth_bands"] = tuple(tuple(b) for b in raw["depth_bands"])
        return cls(**raw)


def load_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return Config.from_json(fh.read())


def save_config(cfg: Config, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_json())
        fh.write("\n")
