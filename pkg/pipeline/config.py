"""YAML run configurations validated by pydantic models."""

from pathlib import Path
from typing import List, Literal, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from energy.state import EnergyWeights
from scenario.generate import GaussianBump, ScenarioConfig
from solver.lm import SolveOptions

Strategy = Literal["batch", "marginalized", "decoupled"]
STRATEGIES = ("batch", "marginalized", "decoupled")

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class SimulationConfig(BaseModel):
    """slam-sim: scenario plus solver settings."""
    model_config = ConfigDict(extra="forbid")

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    solver: SolveOptions = Field(default_factory=SolveOptions)
    weights: EnergyWeights = Field(default_factory=EnergyWeights)
    alpha: float = Field(default=1.0, ge=0.0)
    strategy: Strategy = "decoupled"
    icp_iterations: int = Field(default=3, ge=1)
    export_frames: bool = False


class BenchConfig(BaseModel):
    """bench: a grid strip grown along x at a fixed visible window.

    Scale s has `rows` x (`base_columns` * s) vertices; the first
    `visible_columns` columns are observed, so the PR set stays fixed.
    """
    model_config = ConfigDict(extra="forbid")

    rows: int = Field(default=6, ge=2)
    base_columns: int = Field(default=16, ge=2)
    visible_columns: int = Field(default=8, ge=1)
    spacing: float = Field(default=0.01, gt=0.0)
    node_radius: Optional[float] = Field(default=None, gt=0.0)
    scales: List[int] = Field(default_factory=lambda: [1, 2, 4, 8])
    bumps: List[GaussianBump] = Field(default_factory=lambda: [GaussianBump(center=(0.04, 0.025), amplitude=0.01, width=0.03)])
    noise_sigma: float = Field(default=0.0, ge=0.0)
    repeats: int = Field(default=5, ge=1)
    solver: SolveOptions = Field(default_factory=lambda: SolveOptions(max_outer_iterations=5))
    weights: EnergyWeights = Field(default_factory=EnergyWeights)
    alpha: float = Field(default=1.0, ge=0.0)
    strategies: List[Strategy] = Field(default_factory=lambda: list(STRATEGIES))
    seed: int = Field(default=0, ge=0)

    @field_validator("scales")
    @classmethod
    def _positive_scales(cls, v: List[int]) -> List[int]:
        if not v or any(s < 1 for s in v):
            raise ValueError(f"scales must be a non-empty list of integers >= 1, got {v}")
        return v

    @property
    def radius(self) -> float:
        return 2.5 * self.spacing if self.node_radius is None else self.node_radius


class DeformConfig(BaseModel):
    """deform: handle-driven deformation of a mesh.

    An unset `node_radius` is 5% of the mesh bounding-box diagonal.
    """
    model_config = ConfigDict(extra="forbid")

    node_radius: Optional[float] = Field(default=None, gt=0.0)
    solver: SolveOptions = Field(default_factory=lambda: SolveOptions(optimize_global_pose=False, max_outer_iterations=30))
    weights: EnergyWeights = Field(default_factory=EnergyWeights)
    alpha: float = Field(default=1.0, ge=0.0)
    strategy: Strategy = "batch"


def _load(path: Path, model: Type[ConfigT]) -> ConfigT:
    """Parse a YAML file into `model`.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ValueError: On YAML syntax errors
        pydantic.ValidationError: On schema violations
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ValueError(f"{path}: invalid YAML: {e}")
    return model.model_validate(raw or {})


def load_simulation_config(path: Path) -> SimulationConfig:
    return _load(path, SimulationConfig)


def load_bench_config(path: Path) -> BenchConfig:
    return _load(path, BenchConfig)


def load_deform_config(path: Path) -> DeformConfig:
    return _load(path, DeformConfig)
