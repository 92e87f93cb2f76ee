"""The four CLI commands: deform, slam-sim, bench, check-grad."""

import hashlib
import logging
import platform
import time
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy
from pydantic import BaseModel, ConfigDict, Field

from checks.gradients import GradCheckDecision, run_gradient_checks
from edgraph.build import bind_vertices, build_node_edges, classify_nodes, sample_nodes
from energy.problem import DeformationProblem
from energy.state import DeformState
from energy.terms import apply_deformation
from geometry.io import Mesh, load_handles, load_obj, save_obj
from journal.log import canonical_json, validate_chain
from pipeline.config import (
    STRATEGIES,
    BenchConfig,
    DeformConfig,
    SimulationConfig,
    load_bench_config,
    load_deform_config,
    load_simulation_config,
)
from pipeline.graph import run_simulation
from pipeline.guarded import guarded_solver
from scenario.generate import ScenarioConfig, export_frame, generate_scenario, grid_surface, true_warp
from scenario.metrics import FrameMetrics, evaluate, write_metrics_csv, write_rows
from solver.strategies import solve_with

logger = logging.getLogger(__name__)

TIMING_COLUMNS = [
    "run_id", "scale", "total_nodes", "pr_nodes", "solver", "level1_dim",
    "assembly_ms", "linear_ms", "level1_ms", "level2_ms", "total_ms", "repeats",
]


class RunRecord(BaseModel):
    """Summary JSON of one command run; `config` reproduces the run."""
    model_config = ConfigDict(extra="forbid")

    run_id: str
    command: str
    strategy: str
    config: Dict[str, Any]
    environment: Dict[str, str]
    summary: Dict[str, Any] = Field(default_factory=dict)
    frames: List[FrameMetrics] = Field(default_factory=list)
    timings: List[Dict[str, Any]] = Field(default_factory=list)
    outputs: Dict[str, str] = Field(default_factory=dict)
    journal_valid: Optional[bool] = None


def make_run_id(config: Dict[str, Any], strategy: str) -> str:
    return hashlib.sha256(canonical_json({"config": config, "solver": strategy})).hexdigest()[:16]


def environment_note() -> Dict[str, str]:
    clock = time.get_clock_info("perf_counter")
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "clock": f"perf_counter ({clock.implementation}, monotonic={clock.monotonic})",
    }


def _write_record(record: RunRecord, out_dir: Path) -> Path:
    path = out_dir / "summary.json"
    record.outputs["summary"] = str(path)
    path.write_text(record.model_dump_json(indent=2), encoding="utf-8")
    return path


def cmd_deform(
    mesh_path: Path,
    handles_path: Path,
    out_dir: Path,
    strategy: Optional[str] = None,
    config_path: Optional[Path] = None,
) -> RunRecord:
    """Deform a mesh so the handle vertices reach their targets.

    Handle vertices form the PR set for the marginalized and decoupled
    solvers. A non-batch run is also solved with batch and the per-vertex
    difference is reported.
    """
    config = load_deform_config(config_path) if config_path else DeformConfig()
    if strategy:
        config = config.model_copy(update={"strategy": strategy})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    mesh = load_obj(mesh_path)
    handle_ids, targets = load_handles(handles_path, len(mesh.vertices))
    snapshot = config.model_dump(mode="json")
    snapshot["mesh"] = str(mesh_path)
    snapshot["handles"] = str(handles_path)
    run_id = make_run_id(snapshot, config.strategy)
    journal = out_dir / "journal.jsonl"

    radius = config.node_radius or 0.05 * mesh.diagonal
    graph = build_node_edges(sample_nodes(mesh.vertices, radius))
    binding = bind_vertices(mesh.vertices, graph)
    problem = DeformationProblem(
        graph=graph,
        binding=binding,
        vertices=mesh.vertices,
        targets=targets,
        pairs=np.stack([handle_ids, np.arange(len(handle_ids))], axis=1),
        weights=config.weights,
        alpha=config.alpha,
    )
    partition = classify_nodes(binding, handle_ids, graph.node_count)
    logger.info("deform: %d vertices, %d nodes (%d bound to handles), %d handles", len(mesh.vertices), graph.node_count, len(partition.pr_nodes), len(handle_ids))

    def run(name: str) -> Tuple[np.ndarray, Any]:
        solve = guarded_solver(partial(solve_with, name), strategy=name, log_path=journal, run_id=run_id)
        state, report = solve(problem, partition, DeformState.identity(graph.node_count), config.solver)
        return apply_deformation(state, graph, binding, mesh.vertices), report

    deformed, report = run(config.strategy)
    mesh_out = out_dir / "deformed.obj"
    save_obj(mesh.with_vertices(deformed), mesh_out)

    handle_err = np.linalg.norm(deformed[handle_ids] - targets, axis=1) if len(handle_ids) else np.zeros(0)
    summary: Dict[str, Any] = {
        "vertices": len(mesh.vertices),
        "nodes": graph.node_count,
        "pr_nodes": len(partition.pr_nodes),
        "handles": len(handle_ids),
        "energies": report.energies,
        "total_energy": report.total_energy,
        "iterations": report.iterations,
        "status": report.status,
        "times_ms": report.times,
        "max_handle_error": float(handle_err.max(initial=0.0)),
        "max_displacement": float(np.linalg.norm(deformed - mesh.vertices, axis=1).max()),
    }
    if config.strategy != "batch":
        reference, _ = run("batch")
        diff = np.linalg.norm(deformed - reference, axis=1)
        summary["vs_batch"] = {"max": float(diff.max()), "mean": float(diff.mean())}

    record = RunRecord(
        run_id=run_id,
        command="deform",
        strategy=config.strategy,
        config=snapshot,
        environment=environment_note(),
        summary=summary,
        outputs={"mesh": str(mesh_out), "journal": str(journal)},
        journal_valid=validate_chain(journal),
    )
    _write_record(record, out_dir)
    return record


def _model_mesh(surface: Mesh, model_ids: np.ndarray, deformed: np.ndarray) -> Mesh:
    """Deformed seen vertices with the surface faces whose corners were all seen."""
    local = np.full(len(surface.vertices), -1, dtype=np.int64)
    local[model_ids] = np.arange(len(model_ids))
    faces = local[surface.faces]
    return Mesh(vertices=deformed, faces=faces[np.all(faces >= 0, axis=1)])


def cmd_slam_sim(
    config_path: Optional[Path],
    out_dir: Path,
    strategy: Optional[str] = None,
    seed: Optional[int] = None,
) -> RunRecord:
    """Run the frame loop over a generated scenario; writes metrics.csv, model.obj and summary.json."""
    config = load_simulation_config(config_path) if config_path else SimulationConfig()
    if strategy:
        config = config.model_copy(update={"strategy": strategy})
    if seed is not None:
        config = config.model_copy(update={"scenario": config.scenario.model_copy(update={"seed": seed})})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    snapshot = config.model_dump(mode="json")
    run_id = make_run_id(snapshot, config.strategy)
    journal = out_dir / "journal.jsonl"

    scenario = generate_scenario(config.scenario)
    outputs = {"journal": str(journal)}
    if config.export_frames:
        for frame in scenario.frames:
            export_frame(frame, out_dir / "frames")
        outputs["frames"] = str(out_dir / "frames")

    solve = guarded_solver(partial(solve_with, config.strategy), strategy=config.strategy, log_path=journal, run_id=run_id)
    result = run_simulation(scenario, config, solve, journal, run_id)

    metrics_path = out_dir / "metrics.csv"
    write_metrics_csv(metrics_path, run_id, result.rows)
    model_path = out_dir / "model.obj"
    if len(result.model_ids):
        save_obj(_model_mesh(scenario.surface, result.model_ids, result.deformed), model_path)
        outputs["model"] = str(model_path)
    outputs["metrics"] = str(metrics_path)

    metrics = evaluate(result.rows)
    summary = metrics.summary()
    summary["bbox_diagonal"] = scenario.surface.diagonal
    record = RunRecord(
        run_id=run_id,
        command="slam-sim",
        strategy=config.strategy,
        config=snapshot,
        environment=environment_note(),
        summary=summary,
        frames=result.rows,
        outputs=outputs,
        journal_valid=validate_chain(journal),
    )
    _write_record(record, out_dir)
    return record


def bench_problem(config: BenchConfig, scale: int) -> Tuple[DeformationProblem, Any]:
    """Warped strip of `base_columns * scale` columns with the first `visible_columns` observed."""
    surface_cfg = ScenarioConfig(grid=(config.base_columns * scale, config.rows), spacing=config.spacing, bumps=config.bumps, seed=config.seed)
    rest = grid_surface(surface_cfg).vertices
    visible = np.flatnonzero(rest[:, 0] < (config.visible_columns - 0.5) * config.spacing)
    rng = np.random.default_rng(config.seed)
    targets = true_warp(surface_cfg, rest[visible], frame=0)
    targets = targets + rng.normal(0.0, config.noise_sigma, size=targets.shape)

    graph = build_node_edges(sample_nodes(rest, config.radius))
    binding = bind_vertices(rest, graph)
    problem = DeformationProblem(
        graph=graph,
        binding=binding,
        vertices=rest,
        targets=targets,
        pairs=np.stack([visible, np.arange(len(visible))], axis=1),
        weights=config.weights,
        alpha=config.alpha,
    )
    return problem, classify_nodes(binding, visible, graph.node_count)


def cmd_bench(
    config_path: Optional[Path],
    out_dir: Path,
    repeat: Optional[int] = None,
    seed: Optional[int] = None,
) -> RunRecord:
    """Median solver timings per growth scale; writes timing.csv and summary.json.

    Repetitions run sequentially; problem construction is excluded from timing.
    """
    config = load_bench_config(config_path) if config_path else BenchConfig()
    updates = {k: v for k, v in (("repeats", repeat), ("seed", seed)) if v is not None}
    if updates:
        config = config.model_copy(update=updates)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = config.model_dump(mode="json")
    run_id = make_run_id(snapshot, ",".join(config.strategies))

    rows: List[Dict[str, Any]] = []
    for scale in config.scales:
        problem, partition = bench_problem(config, scale)
        state0 = DeformState.identity(problem.node_count)
        for name in config.strategies:
            samples = {phase: [] for phase in ("assembly", "linear", "level1", "level2", "total")}
            level1_dim = 0
            for _ in range(config.repeats):
                _, report = solve_with(name, problem, partition, state0, config.solver)
                level1_dim = report.level1_dim
                for phase in samples:
                    samples[phase].append(report.times.get(phase, 0.0))
            row = {
                "run_id": run_id,
                "scale": scale,
                "total_nodes": problem.node_count,
                "pr_nodes": len(partition.pr_nodes),
                "solver": name,
                "level1_dim": level1_dim,
                "repeats": config.repeats,
            }
            row.update({f"{phase}_ms": float(np.median(v)) for phase, v in samples.items()})
            rows.append(row)
            logger.info("bench scale %d %s: %d nodes, total %.2f ms", scale, name, problem.node_count, row["total_ms"])

    timing_path = out_dir / "timing.csv"
    write_rows(timing_path, TIMING_COLUMNS, rows)

    record = RunRecord(
        run_id=run_id,
        command="bench",
        strategy=",".join(config.strategies),
        config=snapshot,
        environment=environment_note(),
        summary=growth_ratios(rows),
        timings=rows,
        outputs={"timing": str(timing_path)},
    )
    _write_record(record, out_dir)
    return record


def growth_ratios(rows: List[Dict[str, Any]]) -> Dict[str, float]:
    """Largest-scale over smallest-scale median time, per solver.

    Decoupled uses its Level I time, the others their total time.
    """
    ratios: Dict[str, float] = {}
    for name in STRATEGIES:
        series = sorted((r for r in rows if r["solver"] == name), key=lambda r: r["scale"])
        if len(series) < 2:
            continue
        phase = "level1_ms" if name == "decoupled" else "total_ms"
        first, last = series[0][phase], series[-1][phase]
        key = f"{name}_{phase[:-3]}_ratio"
        ratios[key] = float(last / first) if first > 0 else float("inf")
    return ratios


def cmd_check_grad(seed: int = 0, instances: int = 50, out_dir: Optional[Path] = None, hook=None) -> Tuple[List[GradCheckDecision], int]:
    """Finite-difference check of every term; exit code 1 when any term fails."""
    decisions = run_gradient_checks(seed=seed, instances=instances, hook=hook)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.json").write_text(
            "[" + ",".join(d.model_dump_json() for d in decisions) + "]", encoding="utf-8"
        )
    failed = [d.term for d in decisions if d.decision == "FAIL"]
    if failed:
        logger.warning("gradient check failed for %s", ", ".join(failed))
    return decisions, 1 if failed else 0
