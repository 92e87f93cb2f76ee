"""Per-frame deformable-mapping loop as a LangGraph state graph.

reveal -> classify -> register -> record, looping back to reveal until the
scenario runs out of frames.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Literal, Optional, Tuple, TypedDict

import numpy as np
from langgraph.graph import END, StateGraph

from edgraph.build import BIND_COUNT, BindingTable, EDGraph, Partition, bind_to_graph, classify_nodes, extend_graph
from energy.design import SparseDesign, build_design, evaluate_design
from energy.problem import DeformationProblem
from energy.state import DeformState, grow_state
from journal.log import append
from pipeline.config import SimulationConfig
from pipeline.guarded import SolverFailed
from scenario.generate import Scenario
from scenario.metrics import FrameMetrics, backprojection_error, make_correspondences, registration_rmse
from solver.lm import SolveReport

logger = logging.getLogger(__name__)

# (problem, partition, state0, opts) -> (state, report)
FrameSolver = Callable[..., Tuple[DeformState, SolveReport]]

NODES_PER_FRAME = 4


class SimState(TypedDict):
    """Mutable map state carried between graph nodes.

    Model vertex i is surface vertex `model_ids[i]`; `local_of` inverts
    that (-1 for unseen surface vertices).
    """
    frame_index: int
    model_ids: np.ndarray
    local_of: np.ndarray
    graph: EDGraph
    binding: BindingTable
    design: Optional[SparseDesign]
    state: DeformState
    visible: np.ndarray
    partition: Optional[Partition]
    pairs: np.ndarray
    report: Optional[SolveReport]
    status: str
    iterations: int
    rows: List[FrameMetrics]


@dataclass(eq=False)
class SimulationResult:
    rows: List[FrameMetrics]
    state: DeformState
    graph: EDGraph
    binding: BindingTable
    model_ids: np.ndarray
    deformed: np.ndarray


def _empty_binding() -> BindingTable:
    return BindingTable(node_ids=np.zeros((0, BIND_COUNT), dtype=np.int64), weights=np.zeros((0, BIND_COUNT)))


def grow_map(graph: EDGraph, binding: BindingTable, model_rest: np.ndarray, new_points: np.ndarray) -> Tuple[EDGraph, BindingTable]:
    """extend_graph, rebinding every vertex while the graph is still below BIND_COUNT + 1 nodes."""
    if len(binding) and binding.width < BIND_COUNT:
        grown, _ = extend_graph(graph, _empty_binding(), new_points)
        return grown, bind_to_graph(np.vstack([model_rest, new_points]), grown)
    return extend_graph(graph, binding, new_points)


def initial_state(scenario: Scenario) -> SimState:
    return SimState(
        frame_index=0,
        model_ids=np.zeros(0, dtype=np.int64),
        local_of=np.full(len(scenario.rest), -1, dtype=np.int64),
        graph=EDGraph.empty(scenario.config.radius),
        binding=_empty_binding(),
        design=None,
        state=DeformState.identity(0),
        visible=np.zeros(0, dtype=np.int64),
        partition=None,
        pairs=np.zeros((0, 2), dtype=np.int64),
        report=None,
        status="",
        iterations=0,
        rows=[],
    )


def create_simulation(
    scenario: Scenario,
    config: SimulationConfig,
    solve: FrameSolver,
    journal_path: Optional[Path] = None,
    run_id: str = "",
):
    """Compile the per-frame graph for one scenario and solver."""
    rest = scenario.rest
    max_dist = scenario.config.max_distance

    def reveal(s: SimState) -> dict:
        frame = scenario.frames[s["frame_index"]]
        new_ids = frame.revealed
        if len(new_ids) == 0:
            return {}
        model_ids = np.concatenate([s["model_ids"], new_ids])
        local_of = s["local_of"].copy()
        local_of[new_ids] = np.arange(len(s["model_ids"]), len(model_ids))

        old_nodes = s["graph"].nodes
        graph, binding = grow_map(s["graph"], s["binding"], rest[s["model_ids"]], rest[new_ids])
        state = grow_state(s["state"], old_nodes, graph.nodes[len(old_nodes):])
        logger.debug("frame %d: +%d vertices, %d nodes", frame.index, len(new_ids), graph.node_count)
        return {
            "model_ids": model_ids,
            "local_of": local_of,
            "graph": graph,
            "binding": binding,
            "design": build_design(graph, binding, rest[model_ids]),
            "state": state,
        }

    def classify(s: SimState) -> dict:
        frame = scenario.frames[s["frame_index"]]
        visible = s["local_of"][frame.visible]
        return {"visible": visible, "partition": classify_nodes(s["binding"], visible, s["graph"].node_count)}

    def register(s: SimState) -> dict:
        frame = scenario.frames[s["frame_index"]]
        state, design = s["state"], s["design"]
        model_rest = rest[s["model_ids"]]
        merged: Optional[SolveReport] = None
        status, iterations = "skipped", 0
        pairs = np.zeros((0, 2), dtype=np.int64)
        if design is None or s["graph"].node_count < 2:
            return {"pairs": pairs, "report": None, "status": status, "iterations": 0}

        for _ in range(config.icp_iterations):
            deformed = evaluate_design(design, state, s["graph"])
            pairs = make_correspondences(deformed[s["visible"]], frame.scan, max_dist, vertex_ids=s["visible"])
            problem = DeformationProblem(
                graph=s["graph"],
                binding=s["binding"],
                vertices=model_rest,
                targets=frame.scan.points,
                pairs=pairs,
                weights=config.weights,
                alpha=config.alpha,
                design=design,
            )
            try:
                state, report = solve(problem, s["partition"], state, config.solver)
            except SolverFailed as e:
                logger.warning("frame %d: %s; keeping the previous state", frame.index, e)
                return {"pairs": pairs, "report": merged, "status": "failed", "iterations": iterations}
            iterations += report.iterations
            status = report.status
            if merged is None:
                merged = report.model_copy(deep=True)
            else:
                for phase, ms in report.times.items():
                    merged.add_time(phase, ms)
        return {"state": state, "pairs": pairs, "report": merged, "status": status, "iterations": iterations}

    def record(s: SimState) -> dict:
        frame = scenario.frames[s["frame_index"]]
        graph, partition, report = s["graph"], s["partition"], s["report"]
        if s["design"] is not None and graph.node_count:
            deformed = evaluate_design(s["design"], s["state"], graph)
            rmse = registration_rmse(deformed[s["visible"]], frame.truth[frame.visible])
            back = backprojection_error(deformed, frame.scan, s["pairs"])
        else:
            rmse, back = 0.0, 0.0
        times = report.times if report is not None else {}
        row = FrameMetrics(
            frame=frame.index,
            solver=config.strategy,
            status=s["status"],
            total_nodes=graph.node_count,
            pr_nodes=len(partition.pr_nodes) if partition is not None else 0,
            pi_nodes=len(partition.pi_nodes) if partition is not None else graph.node_count,
            visible_vertices=len(frame.visible),
            pairs=len(s["pairs"]),
            level1_dim=report.level1_dim if report is not None else 0,
            level2_dim=report.level2_dim if report is not None else 0,
            rmse=rmse,
            backprojection=back,
            coupling_norm=report.coupling_norm if report is not None else 0.0,
            iterations=s["iterations"],
            assembly_ms=times.get("assembly", 0.0),
            level1_ms=times.get("level1", 0.0),
            level2_ms=times.get("level2", 0.0),
            linear_ms=times.get("linear", 0.0),
            total_ms=times.get("total", 0.0),
        )
        logger.info(
            "frame %d: %d nodes (%d PR), %d pairs, rmse %.3e, %s",
            row.frame, row.total_nodes, row.pr_nodes, row.pairs, row.rmse, row.status,
        )
        if journal_path is not None:
            append({"event": "frame", "run_id": run_id, "data": row.model_dump()}, journal_path)
        return {"rows": s["rows"] + [row], "frame_index": s["frame_index"] + 1}

    def should_continue(s: SimState) -> Literal["reveal", "end"]:
        return "reveal" if s["frame_index"] < len(scenario.frames) else "end"

    workflow = StateGraph(SimState)
    workflow.add_node("reveal", reveal)
    workflow.add_node("classify", classify)
    workflow.add_node("register", register)
    workflow.add_node("record", record)

    workflow.set_entry_point("reveal")
    workflow.add_edge("reveal", "classify")
    workflow.add_edge("classify", "register")
    workflow.add_edge("register", "record")
    workflow.add_conditional_edges("record", should_continue, {"reveal": "reveal", "end": END})
    return workflow.compile()


def run_simulation(
    scenario: Scenario,
    config: SimulationConfig,
    solve: FrameSolver,
    journal_path: Optional[Path] = None,
    run_id: str = "",
) -> SimulationResult:
    app = create_simulation(scenario, config, solve, journal_path, run_id)
    final = app.invoke(
        initial_state(scenario),
        config={"recursion_limit": NODES_PER_FRAME * len(scenario.frames) + 10},
    )
    deformed = (
        evaluate_design(final["design"], final["state"], final["graph"])
        if final["design"] is not None else np.zeros((0, 3))
    )
    return SimulationResult(
        rows=final["rows"],
        state=final["state"],
        graph=final["graph"],
        binding=final["binding"],
        model_ids=final["model_ids"],
        deformed=deformed,
    )
