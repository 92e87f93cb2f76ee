"""Tests for the per-frame mapping graph."""

import json
import tempfile
from functools import partial
from pathlib import Path

import numpy as np

from edgraph.build import BIND_COUNT, bind_vertices, build_node_edges, sample_nodes
from energy.state import DeformState
from journal.log import validate_chain
from pipeline.config import SimulationConfig
from pipeline.graph import create_simulation, grow_map, initial_state, run_simulation
from pipeline.guarded import guarded_solver
from scenario.generate import ScenarioConfig, generate_scenario
from solver.lm import SolveOptions
from solver.strategies import solve_with


def _config(**overrides):
    scenario = ScenarioConfig(
        grid=(16, 8),
        frames=3,
        camera_start=(0.03, 0.035, 0.08),
        camera_end=(0.12, 0.035, 0.08),
        noise_sigma=0.0,
    )
    values = dict(scenario=scenario, solver=SolveOptions(max_outer_iterations=5, linear_solver="direct-dense"), icp_iterations=1)
    values.update(overrides)
    return SimulationConfig(**values)


def test_graph_visits_every_frame():
    """Test that the compiled graph records one row per frame with growing models."""
    config = _config()
    scenario = generate_scenario(config.scenario)
    calls = []

    def solve(problem, partition, state0, opts):
        calls.append(problem.node_count)
        return solve_with("batch", problem, partition, state0, opts)

    app = create_simulation(scenario, config, solve)
    final = app.invoke(initial_state(scenario), config={"recursion_limit": 50})

    assert [row.frame for row in final["rows"]] == [0, 1, 2]
    assert len(calls) == 3
    assert calls == sorted(calls)
    assert len(final["model_ids"]) == len(set(np.concatenate([f.visible for f in scenario.frames]).tolist()))
    assert final["state"].node_count == final["graph"].node_count


def test_failed_solves_are_flagged_and_skipped():
    """Test that a failing solver marks rows as failed, keeps the state and journals the failures."""
    config = _config()
    scenario = generate_scenario(config.scenario)

    def singular(problem, partition, state0, opts):
        raise np.linalg.LinAlgError("singular")

    with tempfile.TemporaryDirectory() as tmpdir:
        journal = Path(tmpdir) / "journal.jsonl"
        solve = guarded_solver(singular, strategy="batch", log_path=journal, run_id="r")
        result = run_simulation(scenario, config, solve, journal, "r")

        assert [row.status for row in result.rows] == ["failed"] * 3
        assert result.state.distance(DeformState.identity(result.graph.node_count)) <= 1e-12
        assert validate_chain(journal)
        with open(journal) as f:
            events = [json.loads(line)["event"] for line in f]
        assert events == ["solve", "frame"] * 3


def test_grow_map_rebinds_small_graphs():
    """Test that vertices bound while the graph was tiny are rebound to BIND_COUNT nodes."""
    old = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    graph = build_node_edges(sample_nodes(old, 0.5))
    binding = bind_vertices(old, graph)
    assert binding.node_ids.shape[1] == 3

    new = np.array([[2.0, 0.0, 0.0], [2.0, 1.0, 0.0], [3.0, 0.0, 0.0]])
    grown, rebound = grow_map(graph, binding, old, new)
    assert grown.node_count == 6
    assert rebound.node_ids.shape == (6, BIND_COUNT)
    assert np.allclose(rebound.weights.sum(axis=1), 1.0)


def test_single_node_first_frames():
    """Test a run whose first frames see a patch smaller than one node radius."""
    scenario_config = ScenarioConfig(
        grid=(20, 20),
        frames=4,
        camera_start=(0.1, 0.1, 0.01),
        camera_end=(0.1, 0.1, 0.16),
        noise_sigma=0.0,
        node_radius=0.05,
    )
    config = _config(scenario=scenario_config)
    scenario = generate_scenario(scenario_config)
    assert len(scenario.frames[0].visible) == 1

    result = run_simulation(scenario, config, partial(solve_with, "decoupled"))

    assert [row.total_nodes for row in result.rows[:2]] == [1, 1]
    assert [row.status for row in result.rows[:2]] == ["skipped", "skipped"]
    assert result.rows[-1].total_nodes > BIND_COUNT
    assert all(row.status != "failed" for row in result.rows)
    assert all(row.rmse <= 1e-9 for row in result.rows)
    assert result.binding.width == BIND_COUNT
