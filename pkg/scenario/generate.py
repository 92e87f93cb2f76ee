"""Synthetic expanding-map scenarios: a flat surface warped by moving Gaussian
bumps, observed frame by frame by a downward-looking camera with a limited
field of view."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

from geometry.io import Mesh, PointSet, save_points

logger = logging.getLogger(__name__)

Vec2 = Tuple[float, float]
Vec3 = Tuple[float, float, float]

# Camera-to-world rotation of a camera looking down -z.
LOOK_DOWN = np.diag([1.0, -1.0, -1.0])


class GaussianBump(BaseModel):
    """Displacement a(f) exp(-|x - c(f)|^2 / (2 width^2)) along `direction`.

    The center moves linearly, c(f) = center + f * velocity. With
    `ramp_frames` > 0 the amplitude grows linearly from 0 over that many frames.
    """
    model_config = ConfigDict(extra="forbid")

    center: Vec2
    velocity: Vec2 = (0.0, 0.0)
    amplitude: float
    width: float = Field(gt=0.0)
    direction: Vec3 = (0.0, 0.0, 1.0)
    ramp_frames: int = Field(default=0, ge=0)

    @field_validator("direction")
    @classmethod
    def _nonzero_direction(cls, v: Vec3) -> Vec3:
        if np.linalg.norm(v) == 0:
            raise ValueError("bump direction must be non-zero")
        return v

    def amplitude_at(self, frame: int) -> float:
        if self.ramp_frames == 0:
            return self.amplitude
        return self.amplitude * min(1.0, frame / self.ramp_frames)

    def displacement(self, rest: np.ndarray, frame: int) -> np.ndarray:
        c = np.asarray(self.center) + frame * np.asarray(self.velocity)
        d2 = np.sum((rest[:, :2] - c) ** 2, axis=1)
        axis = np.asarray(self.direction, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return (self.amplitude_at(frame) * np.exp(-d2 / (2.0 * self.width ** 2)))[:, None] * axis


class ScenarioConfig(BaseModel):
    """Surface, camera path, warp, noise and sampling settings of one scenario.

    Unset `noise_sigma`, `node_radius` and `max_correspondence_distance`
    default to 0.1, 2.5 and 2 times the grid spacing.
    """
    model_config = ConfigDict(extra="forbid")

    grid: Tuple[int, int] = (40, 20)
    spacing: float = Field(default=0.01, gt=0.0)
    frames: int = Field(default=10, ge=1)
    camera_start: Vec3 = (0.06, 0.1, 0.15)
    camera_end: Vec3 = (0.33, 0.1, 0.15)
    fov: Vec2 = (0.45, 0.6)
    bumps: List[GaussianBump] = Field(default_factory=list)
    drift_per_frame: Vec3 = (0.0, 0.0, 0.0)
    yaw_per_frame: float = 0.0
    noise_sigma: Optional[float] = Field(default=None, ge=0.0)
    node_radius: Optional[float] = Field(default=None, gt=0.0)
    max_correspondence_distance: Optional[float] = Field(default=None, gt=0.0)
    seed: int = Field(default=0, ge=0)

    @field_validator("grid")
    @classmethod
    def _grid_extent(cls, v: Tuple[int, int]) -> Tuple[int, int]:
        if v[0] < 2 or v[1] < 2:
            raise ValueError(f"grid needs at least 2 x 2 vertices, got {v}")
        return v

    @field_validator("fov")
    @classmethod
    def _fov_range(cls, v: Vec2) -> Vec2:
        if not all(0.0 < a < np.pi / 2 for a in v):
            raise ValueError(f"FOV half-angles must lie in (0, pi/2), got {v}")
        return v

    @model_validator(mode="after")
    def _camera_above_surface(self) -> "ScenarioConfig":
        if self.camera_start[2] <= 0 or self.camera_end[2] <= 0:
            raise ValueError("camera path must stay above the surface (z > 0)")
        return self

    @property
    def sigma(self) -> float:
        return 0.1 * self.spacing if self.noise_sigma is None else self.noise_sigma

    @property
    def radius(self) -> float:
        return 2.5 * self.spacing if self.node_radius is None else self.node_radius

    @property
    def max_distance(self) -> float:
        return 2.0 * self.spacing if self.max_correspondence_distance is None else self.max_correspondence_distance


@dataclass(frozen=True, eq=False)
class Frame:
    """One observation: true camera pose, noisy scan of the visible vertices.

    `scan.points[k]` observes vertex `visible[k]`; `truth` holds the true
    warped position of every surface vertex at this frame.
    """
    index: int
    camera_rotation: np.ndarray
    camera_position: np.ndarray
    scan: PointSet
    visible: np.ndarray
    revealed: np.ndarray
    truth: np.ndarray


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    surface: Mesh
    frames: List[Frame]

    @property
    def rest(self) -> np.ndarray:
        return self.surface.vertices

    def warp(self, points: np.ndarray, frame: int) -> np.ndarray:
        """Ground-truth warp of rest positions at `frame`."""
        return true_warp(self.config, np.asarray(points, dtype=np.float64).reshape(-1, 3), frame)


def grid_surface(config: ScenarioConfig) -> Mesh:
    """Flat row-major grid at z = 0, two triangles per cell."""
    cols, rows = config.grid
    xs, ys = np.meshgrid(np.arange(cols) * config.spacing, np.arange(rows) * config.spacing)
    vertices = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1)
    idx = np.arange(cols * rows).reshape(rows, cols)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, d], axis=1), np.stack([a, d, c], axis=1)])
    return Mesh(vertices=vertices, faces=faces)


def true_warp(config: ScenarioConfig, rest: np.ndarray, frame: int) -> np.ndarray:
    """Bumps on the rest surface, then the rigid drift about the grid center."""
    warped = rest.copy()
    for bump in config.bumps:
        warped += bump.displacement(rest, frame)
    if config.yaw_per_frame or any(config.drift_per_frame):
        center = 0.5 * config.spacing * (np.asarray(config.grid, dtype=np.float64) - 1.0)
        center = np.array([center[0], center[1], 0.0])
        R = Rotation.from_rotvec([0.0, 0.0, config.yaw_per_frame * frame]).as_matrix()
        warped = (warped - center) @ R.T + center + frame * np.asarray(config.drift_per_frame)
    return warped


def camera_pose(config: ScenarioConfig, frame: int) -> Tuple[np.ndarray, np.ndarray]:
    """Camera-to-world rotation and camera center, linear along the path."""
    s = frame / (config.frames - 1) if config.frames > 1 else 0.0
    start, end = np.asarray(config.camera_start), np.asarray(config.camera_end)
    return LOOK_DOWN.copy(), start + s * (end - start)


def in_frustum(points: np.ndarray, rotation: np.ndarray, position: np.ndarray, fov: Vec2) -> np.ndarray:
    """Mask of points strictly in front of the camera and inside both half-angles."""
    local = (points - position) @ rotation
    z = local[:, 2]
    inside = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        inside &= np.abs(local[:, 0]) <= np.tan(fov[0]) * z
        inside &= np.abs(local[:, 1]) <= np.tan(fov[1]) * z
    return inside


def generate_scenario(config: ScenarioConfig) -> Scenario:
    """Frames for the whole camera path; deterministic for a fixed seed."""
    rng = np.random.default_rng(config.seed)
    surface = grid_surface(config)
    seen = np.zeros(len(surface.vertices), dtype=bool)
    frames = []
    for f in range(config.frames):
        truth = true_warp(config, surface.vertices, f)
        rotation, position = camera_pose(config, f)
        visible = np.flatnonzero(in_frustum(truth, rotation, position, config.fov))
        revealed = visible[~seen[visible]]
        seen[visible] = True
        scan = truth[visible] + rng.normal(0.0, config.sigma, size=(len(visible), 3))
        frames.append(Frame(
            index=f,
            camera_rotation=rotation,
            camera_position=position,
            scan=PointSet(points=scan),
            visible=visible,
            revealed=revealed,
            truth=truth,
        ))
        logger.debug("frame %d: %d visible, %d revealed", f, len(visible), len(revealed))
    logger.info("Generated %d frames over %d vertices (%d seen)", len(frames), len(seen), int(seen.sum()))
    return Scenario(config=config, surface=surface, frames=frames)


def export_frame(frame: Frame, directory: Path) -> Path:
    """Write the frame's scan as an OBJ point list, returns its path."""
    path = Path(directory) / f"frame_{frame.index:04d}.obj"
    save_points(frame.scan, path)
    return path
