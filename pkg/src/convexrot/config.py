"""Run configuration: a flat ``key = value`` text format with embedded defaults."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from convexrot.eigen import FlowParams
from convexrot.optimizer import LineSearchConfig

PROBLEMS = ("dirichlet", "insulation")
SHAPES = ("half_disk", "half_ellipsoid")
GLIDES = ("axis", "out")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str = "dirichlet"
    m: float = 6.0
    h: float = 2.0 ** -4
    initial_shape: str = "half_ellipsoid"
    a: float = 1.0
    volume: float = 4.0 * math.pi / 3.0
    epsilon: float = 0.0            # 0 selects N^{-1/2}/10
    tau0: float = 0.5
    tau_min: float = 1e-6
    vol_tol: float = 1e-2
    eps_stop: float = 1e-6
    max_iter: int = 500
    t0: float = 1.0
    glide: str = "axis"
    uzawa_tol: float = 1e-8
    volume_correction: bool = True
    repair_tol: float = 1e-3
    flow_tol_residual: float = 1e-8
    flow_max_iter: int = 20000
    m_list: list = field(default_factory=lambda: [2.0, 5.0, 6.0, 11.0, 12.0, 13.0])
    asym_a: float = 1.6
    bracket_lo: float = 4.0
    bracket_hi: float = 8.0
    scale_ell: bool = False
    snapshots: bool = False
    output_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}")
        if self.initial_shape not in SHAPES:
            raise ConfigError(f"initial_shape must be one of {SHAPES}")
        if self.glide not in GLIDES:
            raise ConfigError(f"glide must be one of {GLIDES}")
        if not (0.0 < self.h <= 1.0):
            raise ConfigError("h must lie in (0, 1]")
        positive = ("m", "a", "volume", "asym_a", "uzawa_tol", "flow_tol_residual", "t0")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(f"{key} must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if not (0.0 < self.bracket_lo < self.bracket_hi):
            raise ConfigError("need 0 < bracket_lo < bracket_hi")
        if not self.m_list or any(v <= 0 for v in self.m_list):
            raise ConfigError("m_list must be a nonempty list of positive masses")
        try:
            self.line_search()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived parameter objects -------------------------------------------

    def line_search(self) -> LineSearchConfig:
        return LineSearchConfig(self.tau0, self.tau_min, self.vol_tol, self.eps_stop, self.max_iter,
                                self.t0, self.glide, self.uzawa_tol, self.volume_correction,
                                self.repair_tol)

    def flow(self) -> FlowParams:
        return FlowParams(tol_residual=self.flow_tol_residual, max_iter=self.flow_max_iter)

    @property
    def eps(self) -> float | None:
        return self.epsilon if self.epsilon > 0 else None

    # -- serialization --------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, **overrides) -> "RunConfig":
        values = {}
        known = {f.name: f for f in fields(cls)}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value'")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {n}: unknown key {key!r}")
            values[key] = _parse(known[key], val)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        return cls.loads(Path(path).read_text(), **overrides)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _parse(f, s: str):
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    try:
        if isinstance(default, bool):
            if s.lower() not in ("true", "false"):
                raise ValueError(s)
            return s.lower() == "true"
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        if isinstance(default, list):
            return [float(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid value for {f.name}: {s!r}") from exc
    return s
