"""Tests for the synthetic scenario generator and the registration metrics."""

import tempfile
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from geometry.io import load_points
from scenario.generate import (
    LOOK_DOWN,
    GaussianBump,
    ScenarioConfig,
    export_frame,
    generate_scenario,
    grid_surface,
    in_frustum,
    true_warp,
)
from scenario.metrics import (
    FrameMetrics,
    backprojection_error,
    evaluate,
    make_correspondences,
    read_metrics_csv,
    registration_rmse,
    write_metrics_csv,
)


def _row(frame=0, rmse=0.0, status="ok", total_ms=1.0, **overrides):
    values = dict(
        frame=frame, solver="decoupled", status=status, total_nodes=10, pr_nodes=4, pi_nodes=6,
        visible_vertices=50, pairs=40, level1_dim=54, level2_dim=72, rmse=rmse, backprojection=0.001,
        coupling_norm=2.5, iterations=3, assembly_ms=0.1, level1_ms=0.2, level2_ms=0.3, linear_ms=0.05,
        total_ms=total_ms,
    )
    values.update(overrides)
    return FrameMetrics(**values)


def test_grid_surface_layout():
    """Test vertex positions and face count of the rest grid."""
    config = ScenarioConfig(grid=(4, 3), spacing=0.5)
    mesh = grid_surface(config)
    assert mesh.vertices.shape == (12, 3)
    assert mesh.vertices[5].tolist() == [0.5, 0.5, 0.0]
    assert len(mesh.faces) == 2 * 3 * 2
    assert np.all(mesh.vertices[:, 2] == 0)


def test_generation_is_deterministic():
    """Test that a fixed seed reproduces every scan exactly."""
    config = ScenarioConfig(frames=4, seed=7)
    a, b = generate_scenario(config), generate_scenario(config)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.scan.points, fb.scan.points)
        assert np.array_equal(fa.visible, fb.visible)
    c = generate_scenario(config.model_copy(update={"seed": 8}))
    assert not np.array_equal(a.frames[0].scan.points, c.frames[0].scan.points)


def test_static_noiseless_scan_is_the_grid():
    """Test that without warp or noise the scan equals the visible rest vertices."""
    scenario = generate_scenario(ScenarioConfig(frames=3, noise_sigma=0.0))
    for frame in scenario.frames:
        assert np.array_equal(frame.truth, scenario.rest)
        assert np.array_equal(frame.scan.points, scenario.rest[frame.visible])


def test_bump_peak_and_ramp():
    """Test the bump displacement at its center, its motion and its amplitude ramp."""
    bump = GaussianBump(center=(0.1, 0.1), velocity=(0.01, 0.0), amplitude=0.02, width=0.02, ramp_frames=4)
    config = ScenarioConfig(bumps=[bump])
    rest = np.array([[0.1, 0.1, 0.0], [0.12, 0.1, 0.0], [0.3, 0.1, 0.0]])

    assert bump.amplitude_at(0) == 0.0
    assert bump.amplitude_at(2) == pytest.approx(0.01)
    assert bump.amplitude_at(10) == pytest.approx(0.02)

    warped = true_warp(config, rest, 4)
    assert warped[0, 2] == pytest.approx(0.02 * np.exp(-0.5 * 0.04 ** 2 / 0.02 ** 2))
    assert warped[1, 2] == pytest.approx(0.02 * np.exp(-0.5 * 0.02 ** 2 / 0.02 ** 2))
    assert warped[2, 2] == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(warped[:, :2], rest[:, :2])


def test_frames_follow_the_scenario_warp():
    """Test that per-frame truth and noiseless scans are the scenario's warp of the rest grid."""
    bump = GaussianBump(center=(0.1, 0.1), velocity=(0.005, 0.0), amplitude=0.01, width=0.03, ramp_frames=2)
    config = ScenarioConfig(frames=4, bumps=[bump], drift_per_frame=(0.001, 0.0, 0.0), noise_sigma=0.0)
    scenario = generate_scenario(config)
    for frame in scenario.frames:
        assert np.array_equal(frame.truth, scenario.warp(scenario.rest, frame.index))
        assert np.allclose(frame.scan.points, scenario.warp(scenario.rest[frame.visible], frame.index), rtol=0, atol=1e-15)


def test_drift_and_yaw():
    """Test the rigid drift and the yaw about the grid center."""
    config = ScenarioConfig(grid=(3, 3), spacing=1.0, drift_per_frame=(0.5, 0.0, 0.0))
    rest = grid_surface(config).vertices
    assert np.allclose(true_warp(config, rest, 2), rest + [1.0, 0.0, 0.0])

    config = ScenarioConfig(grid=(3, 3), spacing=1.0, yaw_per_frame=np.pi / 2)
    warped = true_warp(config, np.array([[1.0, 1.0, 0.0], [2.0, 1.0, 0.0]]), 1)
    assert np.allclose(warped, [[1.0, 1.0, 0.0], [1.0, 2.0, 0.0]])


def test_frustum_matches_angle_test():
    """Test the frustum mask against explicit half-angle comparisons."""
    rng = np.random.default_rng(0)
    points = rng.uniform(-1, 1, size=(500, 3))
    position = np.array([0.1, -0.2, 0.8])
    fov = (0.4, 0.6)
    mask = in_frustum(points, LOOK_DOWN, position, fov)
    for p, inside in zip(points, mask):
        local = LOOK_DOWN.T @ (p - position)
        expected = local[2] > 0 and np.arctan2(abs(local[0]), local[2]) <= fov[0] and np.arctan2(abs(local[1]), local[2]) <= fov[1]
        assert inside == expected


def test_frustum_excludes_points_behind():
    """Test that a point above a downward camera is never visible."""
    position = np.array([0.0, 0.0, 1.0])
    mask = in_frustum(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0], [0.0, 0.0, 1.0]]), LOOK_DOWN, position, (0.5, 0.5))
    assert mask.tolist() == [True, False, False]


def test_visibility_expands_the_map():
    """Test that revealed sets are disjoint and the seen set grows to the full grid."""
    scenario = generate_scenario(ScenarioConfig())
    seen = set()
    sizes = []
    for frame in scenario.frames:
        revealed = set(frame.revealed.tolist())
        assert not revealed & seen
        assert revealed <= set(frame.visible.tolist())
        seen |= revealed
        sizes.append(len(seen))
    assert scenario.frames[0].revealed.tolist() == scenario.frames[0].visible.tolist()
    assert sizes[0] < sizes[-1] == len(scenario.rest)
    assert all(a <= b for a, b in zip(sizes, sizes[1:]))


def test_config_defaults_and_validation():
    """Test spacing-relative defaults and rejected settings."""
    config = ScenarioConfig(spacing=0.02)
    assert config.sigma == pytest.approx(0.002)
    assert config.radius == pytest.approx(0.05)
    assert config.max_distance == pytest.approx(0.04)
    with pytest.raises(ValidationError):
        ScenarioConfig(grid=(1, 5))
    with pytest.raises(ValidationError):
        ScenarioConfig(fov=(0.4, 1.6))
    with pytest.raises(ValidationError):
        ScenarioConfig(camera_start=(0.0, 0.0, -1.0))
    with pytest.raises(ValidationError):
        ScenarioConfig(bumps=[{"center": (0, 0), "amplitude": 1.0, "width": 0.0}])
    with pytest.raises(ValidationError):
        ScenarioConfig(cameras=3)


def test_export_frame():
    """Test that an exported frame loads back as the same point list."""
    scenario = generate_scenario(ScenarioConfig(frames=2))
    with tempfile.TemporaryDirectory() as tmpdir:
        path = export_frame(scenario.frames[1], Path(tmpdir))
        assert path.name == "frame_0001.obj"
        points = load_points(path)
        assert np.max(np.abs(points.points - scenario.frames[1].scan.points)) <= 1e-6


def test_correspondences_match_brute_force():
    """Test nearest-point pairing and the distance cutoff against an exhaustive search."""
    rng = np.random.default_rng(1)
    model = rng.uniform(size=(80, 3))
    scan = rng.uniform(size=(60, 3))
    pairs = make_correspondences(model, scan, 0.1)
    expected = []
    for i, v in enumerate(model):
        d = np.linalg.norm(scan - v, axis=1)
        if d.min() <= 0.1:
            expected.append([i, int(np.argmin(d))])
    assert pairs.tolist() == expected


def test_correspondence_ties_and_ids():
    """Test that equidistant scan points go to the lower index and ids are mapped."""
    scan = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 5.0, 0.0]])
    pairs = make_correspondences(np.zeros((1, 3)), scan, 2.0, vertex_ids=np.array([42]))
    assert pairs.tolist() == [[42, 0]]
    assert make_correspondences(np.zeros((1, 3)), scan, 0.5).shape == (0, 2)
    assert make_correspondences(np.zeros((1, 3)), np.zeros((0, 3)), 1.0).shape == (0, 2)
    with pytest.raises(ValueError):
        make_correspondences(np.zeros((2, 3)), scan, 1.0, vertex_ids=np.array([0]))


def test_correspondence_ties_beyond_four_points():
    """Test that the lowest index wins among six equidistant scan points in any order."""
    axes = np.vstack([np.eye(3), -np.eye(3)])
    rng = np.random.default_rng(3)
    for _ in range(10):
        scan = axes[rng.permutation(6)]
        pairs = make_correspondences(np.zeros((1, 3)), scan, 2.0)
        assert pairs.tolist() == [[0, 0]]

    # noiseless grid scan, model vertex at the center of a cell
    xs, ys = np.meshgrid(np.arange(4.0), np.arange(4.0))
    grid = np.stack([xs.ravel(), ys.ravel(), np.zeros(16)], axis=1)[rng.permutation(16)]
    center = np.array([[1.5, 1.5, 0.0]])
    expected = min(i for i, p in enumerate(grid) if np.allclose(np.abs(p[:2] - 1.5), 0.5))
    assert make_correspondences(center, grid, 1.0).tolist() == [[0, expected]]


def test_rmse_and_backprojection():
    """Test the RMSE of a constant offset and a hand-computed back-projection error."""
    truth = np.random.default_rng(2).uniform(size=(30, 3))
    assert registration_rmse(truth + [0.003, 0.004, 0.0], truth) == pytest.approx(0.005)
    assert registration_rmse(np.zeros((0, 3)), np.zeros((0, 3))) == 0.0
    with pytest.raises(ValueError):
        registration_rmse(np.zeros((2, 3)), np.zeros((3, 3)))

    deformed = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    targets = np.array([[0.0, 0.0, 1.0], [1.0, 3.0, 0.0]])
    assert backprojection_error(deformed, targets, [[0, 0], [1, 1]]) == pytest.approx(2.0)
    assert backprojection_error(deformed, targets, np.zeros((0, 2))) == 0.0


def test_frame_metrics_node_counts():
    """Test that PR + PI must equal the node total."""
    with pytest.raises(ValidationError):
        _row(pr_nodes=5)
    with pytest.raises(ValidationError):
        _row(rmse=-1.0)


def test_evaluate_aggregates():
    """Test run aggregates over frames, failed frames included."""
    rows = [_row(0, rmse=0.002), _row(1, rmse=0.004, status="failed"), _row(2, rmse=0.003, total_ms=2.0)]
    run = evaluate(rows)
    assert run.mean_rmse == pytest.approx(0.003)
    assert run.max_rmse == pytest.approx(0.004)
    assert run.final_rmse == pytest.approx(0.003)
    assert run.failed_frames == 1
    assert run.total_ms == pytest.approx(4.0)
    assert "frames" not in run.summary()
    assert evaluate([]).mean_rmse == 0.0


def test_metrics_csv_keeps_full_precision():
    """Test that metrics.csv carries a run id column and reloads the rows exactly."""
    rows = [_row(0, rmse=1 / 3), _row(1, rmse=2 / 7)]
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "metrics.csv"
        write_metrics_csv(path, "abc123", rows)
        header = path.read_text().splitlines()[0].split(",")
        assert header[0] == "run_id"
        assert read_metrics_csv(path) == rows
