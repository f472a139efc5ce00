"""Run configuration and presets.

Configs are plain JSON objects. Keys left out take the preset value; CLI
flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import ConfigError
from .filter import FilterParams
from .motion import CsmParams, ObservationModel

METHODS = ("cvpf", "cskpf")


@dataclass
class RunConfig:
    """Tracking parameters.

    ``obs_var`` is the diagonal of the observation noise covariance in world
    units squared. The simulation default matches the triangulation error of
    the default rig at 0.5 px centroid noise plus rasterization error.
    """

    method: str = "cskpf"
    n_particles: int = 100
    sigma2: float = 0.09
    alpha: Any = 5.0
    a_max: Any = 5.0
    warmup_frames: int = 10
    obs_var: Any = 0.01
    dt: float = 0.1
    ball_radius: float = 0.5
    epipolar_gate: float = 3.0
    v_max: float = 10.0
    min_track_length: int = 3
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if int(self.n_particles) < 1:
            raise ConfigError("n_particles must be >= 1")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        variances = [self.sigma2, *np.ravel(self.obs_var)]
        if any(not (v >= 0 and math.isfinite(v)) for v in variances):
            raise ConfigError("variances must be finite and non-negative")
        if np.any(np.asarray(self.alpha, float) <= 0) or np.any(np.asarray(self.a_max, float) <= 0):
            raise ConfigError("alpha and a_max must be positive")
        if self.warmup_frames < 0 or self.min_track_length < 1:
            raise ConfigError("warmup_frames must be >= 0 and min_track_length >= 1")
        if self.epipolar_gate <= 0 or self.v_max <= 0 or self.ball_radius <= 0:
            raise ConfigError("gates and ball radius must be positive")
        return self

    def filter_params(self) -> FilterParams:
        return FilterParams(
            n_particles=int(self.n_particles),
            sigma2=float(self.sigma2),
            csm=CsmParams(self.alpha, self.a_max, self.dt),
            obs=ObservationModel.position(self.obs_var),
            ball_radius=float(self.ball_radius),
        )

    @property
    def warmup_steps(self) -> int:
        """Steps a new tracker runs CVPF before switching to CSKPF.

        Trackers are born on their second frame, so a warm-up horizon of
        ``T_h`` frames leaves ``T_h - 2`` steps.
        """
        return max(int(self.warmup_frames) - 2, 0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, np.ndarray):
                d[k] = v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, base: "RunConfig | None" = None) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = dataclasses.replace(base or cls(), **d)
        return cfg.validate()


PRESETS = {
    "sim": RunConfig(),
    # Real-rig scale: millimetres and 100 fps.
    "real": RunConfig(n_particles=300, sigma2=4.0, alpha=1.0, a_max=0.1, dt=0.01,
                      ball_radius=1.5, obs_var=0.25, v_max=2000.0),
}


def load_config(path=None, preset: str = "sim", overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a preset, a config file and overrides.

    The file may hold top-level ``method``/``seed``, a shared ``track``
    section and per-method ``cvpf``/``cskpf`` sections. Precedence is
    overrides > method section > track section > top level > preset.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    raw: dict = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    data = {k: raw[k] for k in ("method", "seed") if k in raw}
    data.update(raw.get("track", {}))
    method = overrides.get("method", data.get("method", PRESETS[preset].method))
    data.update(raw.get(method, {}))
    data.update(overrides)
    return RunConfig.from_dict(data, PRESETS[preset])
