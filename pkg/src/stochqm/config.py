"""Scenario configuration: JSON in, validated models out.

Units are whatever consistent set the user picks (the bundled scenarios use
m = hbar = 1).  Exactly one of ``D`` and ``hbar`` is given; the other
follows from hbar = 2 m D.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigInvalid
from .fields import Grid
from .schrodinger import PhysicalParams, Potential


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    dim: Literal[1, 2] = 1
    extents: list[tuple[float, float]]
    n: list[int]
    dt: float = Field(gt=0)

    @model_validator(mode="after")
    def _shape(self):
        if len(self.extents) != self.dim or len(self.n) != self.dim:
            raise ValueError("extents and n need one entry per dimension")
        for lo, hi in self.extents:
            if not hi > lo:
                raise ValueError(f"extent [{lo}, {hi}] is empty")
        if any(k < 8 for k in self.n):
            raise ValueError("need at least 8 points per axis")
        return self

    def build(self) -> Grid:
        return Grid(tuple(tuple(e) for e in self.extents), tuple(self.n), self.dt)


class PhysicsSpec(_Strict):
    m: float = Field(gt=0)
    D: float | None = Field(default=None, gt=0)
    hbar: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _one_of(self):
        if (self.D is None) == (self.hbar is None):
            raise ValueError("give exactly one of D and hbar")
        return self

    def build(self) -> PhysicalParams:
        if self.D is not None:
            return PhysicalParams.from_D(self.m, self.D)
        return PhysicalParams.from_hbar(self.m, self.hbar)


class PotentialSpec(_Strict):
    kind: Literal["free", "harmonic", "barrier"] = "free"
    k: float = Field(default=1.0, gt=0)
    center: list[float] = [0.0]
    height: float = 0.0
    width: float = Field(default=1.0, gt=0)
    offset: float = 0.0

    def build(self) -> Potential:
        if self.kind == "harmonic":
            return Potential.harmonic(self.k, tuple(self.center), self.offset)
        if self.kind == "barrier":
            return Potential.barrier(self.height, self.center[0], self.width, self.offset)
        return Potential.free(self.offset)


class InitialSpec(_Strict):
    """Initial wave function.

    gaussian: free packet with ``x0``, ``p0``, ``sigma0``; ground_state:
    imaginary-time relaxation in the configured potential; excited: first
    excited state (1D); vortex: ``(x + i y)^charge`` core of ``width``;
    superposition: harmonic ground state plus the unit-charge vortex level
    (2D, equal weights); file: a complex field in NDJSON or CSV at ``path``.
    """

    kind: Literal["gaussian", "ground_state", "excited", "vortex", "superposition", "file"] = "gaussian"
    x0: list[float] = [0.0]
    p0: list[float] = [0.0]
    sigma0: float = Field(default=1.0, gt=0)
    charge: int = 1
    width: float = Field(default=0.7071067811865476, gt=0)
    path: str | None = None

    @model_validator(mode="after")
    def _file(self):
        if self.kind == "file" and not self.path:
            raise ValueError("initial kind 'file' needs a path")
        return self


class EnsembleSpec(_Strict):
    n: int = Field(default=100_000, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    bandwidth: int = Field(default=0, ge=0)
    threads: int = Field(default=1, ge=1)


class ScheduleSpec(_Strict):
    t_end: float = Field(gt=0)
    snapshots: list[float] = []


class OutputSpec(_Strict):
    directory: str = "out"
    formats: list[Literal["csv", "ndjson"]] = ["csv", "ndjson"]
    trajectories: int = Field(default=0, ge=0)
    trajectory_every: int = Field(default=10, ge=1)


class ScenarioConfig(_Strict):
    name: str
    grid: GridSpec
    physics: PhysicsSpec
    potential: PotentialSpec = PotentialSpec()
    initial: InitialSpec = InitialSpec()
    ensemble: EnsembleSpec = EnsembleSpec()
    schedule: ScheduleSpec
    outputs: OutputSpec = OutputSpec()

    @model_validator(mode="after")
    def _snapshots(self):
        dt = self.grid.dt
        for t in self.schedule.snapshots:
            k = round(t / dt)
            if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)) or t < 0:
                raise ValueError(f"snapshot time {t} is not a nonnegative multiple of dt={dt}")
            if t > self.schedule.t_end + 1e-12:
                raise ValueError(f"snapshot time {t} lies beyond t_end={self.schedule.t_end}")
        return self

    def steps(self) -> int:
        return int(round(self.schedule.t_end / self.grid.dt))

    def snapshot_steps(self) -> list[int]:
        return sorted({int(round(t / self.grid.dt)) for t in self.schedule.snapshots})

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def _errors(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        out.append(f"{loc}: {err['msg']}")
    return out


def parse_config(data: dict | str) -> ScenarioConfig:
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid([f"<json>: {exc}"]) from exc
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigInvalid(_errors(exc)) from exc


def bundled_scenarios() -> list[str]:
    root = resources.files("stochqm") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a config file; a bare bundled scenario name also works."""
    p = Path(path)
    if not p.exists():
        name = p.name[:-5] if p.name.endswith(".json") else p.name
        if name in bundled_scenarios():
            return parse_config((resources.files("stochqm") / "scenarios" / f"{name}.json").read_text())
        raise ConfigInvalid([f"config: file {path} not found"])
    return parse_config(p.read_text())


def json_schema() -> dict:
    return ScenarioConfig.model_json_schema()
