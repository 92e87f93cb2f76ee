"""Correspondences and registration metrics."""

import csv
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial import cKDTree

# Relative slack when collecting scan points tied at the minimum distance.
_TIE_SLACK = 1e-12

METRICS_COLUMNS = [
    "run_id", "frame", "solver", "status", "total_nodes", "pr_nodes", "pi_nodes",
    "visible_vertices", "pairs", "level1_dim", "level2_dim", "rmse", "backprojection",
    "coupling_norm", "iterations", "assembly_ms", "level1_ms", "level2_ms", "linear_ms", "total_ms",
]


def make_correspondences(
    model_vertices: np.ndarray,
    scan,
    max_dist: float,
    vertex_ids: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Pair each model vertex with its nearest scan point within `max_dist`.

    Args:
        model_vertices: Current (deformed) positions, (n, 3)
        scan: PointSet or (p, 3) array
        max_dist: Pairs farther apart are dropped
        vertex_ids: Model vertex id of each row (defaults to the row index)

    Returns:
        (P, 2) int array of (model vertex id, scan index); equal distances go
        to the lower scan index.
    """
    model_vertices = np.asarray(model_vertices, dtype=np.float64).reshape(-1, 3)
    points = np.asarray(getattr(scan, "points", scan), dtype=np.float64).reshape(-1, 3)
    if vertex_ids is None:
        vertex_ids = np.arange(len(model_vertices))
    vertex_ids = np.asarray(vertex_ids, dtype=np.int64)
    if len(vertex_ids) != len(model_vertices):
        raise ValueError("vertex_ids must match model_vertices")
    if len(model_vertices) == 0 or len(points) == 0:
        return np.zeros((0, 2), dtype=np.int64)

    tree = cKDTree(points)
    k = min(2, len(points))
    d, idx = tree.query(model_vertices, k=k)
    d = np.asarray(d).reshape(len(model_vertices), k)
    idx = np.asarray(idx).reshape(len(model_vertices), k)
    best = idx[:, 0].copy()
    keep = d[:, 0] <= max_dist
    if k > 1:
        # any number of scan points may share the minimum distance
        tied = np.flatnonzero(keep & (d[:, 1] <= d[:, 0] * (1.0 + _TIE_SLACK)))
        if len(tied):
            balls = tree.query_ball_point(model_vertices[tied], d[tied, 0] * (1.0 + _TIE_SLACK))
            for i, candidates in zip(tied, balls):
                candidates = np.asarray(candidates, dtype=np.int64)
                dist = np.linalg.norm(points[candidates] - model_vertices[i], axis=1)
                best[i] = candidates[dist == dist.min()].min()
    return np.stack([vertex_ids[keep], best[keep]], axis=1)


def registration_rmse(estimated: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared point distance."""
    estimated = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if estimated.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimated.shape} vs {truth.shape}")
    if len(estimated) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum((estimated - truth) ** 2, axis=1))))


def backprojection_error(deformed: np.ndarray, targets: np.ndarray, pairs: np.ndarray) -> float:
    """Mean distance between paired deformed model vertices and scan points."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return 0.0
    targets = np.asarray(getattr(targets, "points", targets), dtype=np.float64)
    return float(np.mean(np.linalg.norm(deformed[pairs[:, 0]] - targets[pairs[:, 1]], axis=1)))


class FrameMetrics(BaseModel):
    """One row of metrics.csv (run_id is added when written)."""
    model_config = ConfigDict(extra="forbid")

    frame: int = Field(ge=0)
    solver: str
    status: str
    total_nodes: int = Field(ge=0)
    pr_nodes: int = Field(ge=0)
    pi_nodes: int = Field(ge=0)
    visible_vertices: int = Field(ge=0)
    pairs: int = Field(ge=0)
    level1_dim: int = Field(ge=0)
    level2_dim: int = Field(ge=0)
    rmse: float = Field(ge=0.0)
    backprojection: float = Field(ge=0.0)
    coupling_norm: float = Field(ge=0.0)
    iterations: int = Field(ge=0)
    assembly_ms: float = Field(ge=0.0)
    level1_ms: float = Field(ge=0.0)
    level2_ms: float = Field(ge=0.0)
    linear_ms: float = Field(ge=0.0)
    total_ms: float = Field(ge=0.0)

    @model_validator(mode="after")
    def _node_counts(self) -> "FrameMetrics":
        if self.pr_nodes + self.pi_nodes != self.total_nodes:
            raise ValueError(f"PR ({self.pr_nodes}) + PI ({self.pi_nodes}) != total ({self.total_nodes})")
        return self


class RunMetrics(BaseModel):
    """Per-frame rows plus run aggregates."""
    model_config = ConfigDict(extra="forbid")

    frames: List[FrameMetrics]
    mean_rmse: float
    max_rmse: float
    final_rmse: float
    mean_backprojection: float
    max_backprojection: float
    failed_frames: int
    total_ms: float

    def summary(self) -> Dict[str, float]:
        return self.model_dump(exclude={"frames"})


def evaluate(rows: Sequence[FrameMetrics]) -> RunMetrics:
    """Aggregate per-frame metrics; frames flagged `failed` still count."""
    rows = list(rows)
    rmse = np.array([r.rmse for r in rows], dtype=np.float64)
    back = np.array([r.backprojection for r in rows], dtype=np.float64)
    return RunMetrics(
        frames=rows,
        mean_rmse=float(rmse.mean()) if len(rows) else 0.0,
        max_rmse=float(rmse.max()) if len(rows) else 0.0,
        final_rmse=float(rmse[-1]) if len(rows) else 0.0,
        mean_backprojection=float(back.mean()) if len(rows) else 0.0,
        max_backprojection=float(back.max()) if len(rows) else 0.0,
        failed_frames=sum(r.status == "failed" for r in rows),
        total_ms=float(sum(r.total_ms for r in rows)),
    )


def _format(value) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[Dict]) -> None:
    """CSV with a header row; floats at round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row[k]) for k in columns})


def write_metrics_csv(path: Path, run_id: str, rows: Sequence[FrameMetrics]) -> None:
    write_rows(path, METRICS_COLUMNS, [{"run_id": run_id, **r.model_dump()} for r in rows])


def read_metrics_csv(path: Path) -> List[FrameMetrics]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return [FrameMetrics(**{k: v for k, v in row.items() if k != "run_id"}) for row in csv.DictReader(f)]
