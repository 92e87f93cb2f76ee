"""Finite-difference checks of the analytic energy Jacobians."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.spatial.transform import Rotation

from edgraph.build import BindingTable, EDGraph, bind_vertices, build_node_edges
from energy.design import SparseDesign, build_design
from energy.state import DeformState
from energy.terms import TermName, data_triplets, e_data, e_reg, e_rot, reg_triplets, rot_triplets

logger = logging.getLogger(__name__)

TERMS: Sequence[TermName] = ("rot", "reg", "data")

FD_STEP = 1e-6
REL_TOLERANCE = 1e-5
# |f| below this is compared absolutely (at REL_TOLERANCE * floor)
MAGNITUDE_FLOOR = 1e-3

JacobianHook = Callable[[str, np.ndarray], np.ndarray]


class GradCheckDecision(BaseModel):
    """Outcome of the finite-difference comparison for one term."""
    model_config = ConfigDict(extra="forbid")

    term: str
    decision: Literal["PASS", "FAIL"]
    max_rel_error: float
    max_abs_error: float
    instances: int
    reason: str


@dataclass(eq=False)
class Instance:
    state: DeformState
    graph: EDGraph
    binding: BindingTable
    design: SparseDesign
    targets: np.ndarray
    pairs: np.ndarray
    alpha: float


def random_instance(rng: np.random.Generator, nodes: int = 8, vertices: int = 30, pairs: int = 20) -> Instance:
    """Random graph, bindings and a generic (non-rigid) state."""
    graph = build_node_edges(EDGraph(
        nodes=rng.uniform(-1.0, 1.0, size=(nodes, 3)),
        sampling_radius=1e-3,
        edge_index=np.zeros((0, 2), dtype=np.int64),
        edge_ptr=np.zeros(nodes + 1, dtype=np.int64),
    ))
    points = rng.uniform(-1.0, 1.0, size=(vertices, 3))
    binding = bind_vertices(points, graph)
    state = DeformState(
        A=np.eye(3) + 0.3 * rng.standard_normal((nodes, 3, 3)),
        t=0.2 * rng.standard_normal((nodes, 3)),
        R_c=Rotation.random(random_state=int(rng.integers(2**31))).as_matrix(),
        T_c=rng.standard_normal(3),
    )
    targets = rng.uniform(-1.0, 1.0, size=(pairs, 3))
    pair_ids = np.stack([rng.integers(0, vertices, size=pairs), np.arange(pairs)], axis=1)
    return Instance(
        state=state,
        graph=graph,
        binding=binding,
        design=build_design(graph, binding, points),
        targets=targets,
        pairs=pair_ids,
        alpha=float(rng.uniform(0.5, 2.0)),
    )


def _residuals(term: str, inst: Instance, state: DeformState) -> np.ndarray:
    if term == "rot":
        return rot_triplets(state)[0]
    if term == "reg":
        return reg_triplets(state, inst.graph, inst.alpha)[0]
    return data_triplets(state, inst.design, inst.targets, inst.pairs)[0]


def _analytic(term: str, inst: Instance) -> np.ndarray:
    if term == "rot":
        block = e_rot(inst.state)
    elif term == "reg":
        block = e_reg(inst.state, inst.graph, inst.alpha)
    else:
        block = e_data(inst.state, inst.design, inst.targets, inst.pairs)
    return block.jacobian.toarray()


def finite_difference(term: str, inst: Instance, h: float = FD_STEP) -> np.ndarray:
    """Central differences through `DeformState.retract`, one column per parameter."""
    dim = inst.state.dim
    columns = []
    for c in range(dim):
        e = np.zeros(dim)
        e[c] = h
        plus = _residuals(term, inst, inst.state.retract(e))
        minus = _residuals(term, inst, inst.state.retract(-e))
        columns.append((plus - minus) / (2.0 * h))
    return np.stack(columns, axis=1)


def check_term(term: str, seed: int = 0, instances: int = 50, hook: Optional[JacobianHook] = None) -> GradCheckDecision:
    """Compare analytic and finite-difference Jacobians of one term.

    Args:
        term: "rot", "reg" or "data"
        seed: Seed of the instance generator
        instances: Number of random instances
        hook: Optional (term, jacobian) -> jacobian applied to the analytic
            Jacobian before comparison

    Returns:
        GradCheckDecision; PASS iff every entry satisfies
        |analytic - fd| <= 1e-5 * max(|fd|, 1e-3).

    Entries with |fd| below MAGNITUDE_FLOOR are compared absolutely. The
    floor is 1e-3 rather than 1e-8: with h = 1e-6 the central difference
    carries roundoff near 1e-10, which swamps a relative test on entries
    that are analytically zero or nearly so.
    """
    if term not in TERMS:
        raise ValueError(f"unknown term {term!r}, expected one of {TERMS}")
    rng = np.random.default_rng(seed)
    worst_rel, worst_abs = 0.0, 0.0
    for _ in range(instances):
        inst = random_instance(rng)
        analytic = _analytic(term, inst)
        if hook is not None:
            analytic = hook(term, analytic)
        fd = finite_difference(term, inst)
        err = np.abs(analytic - fd)
        worst_abs = max(worst_abs, float(err.max(initial=0.0)))
        worst_rel = max(worst_rel, float((err / np.maximum(np.abs(fd), MAGNITUDE_FLOOR)).max(initial=0.0)))

    passed = worst_rel <= REL_TOLERANCE
    reason = f"max relative error {worst_rel:.3e} {'<=' if passed else '>'} {REL_TOLERANCE:g}"
    logger.info("gradient check %s: %s", term, reason)
    return GradCheckDecision(
        term=term,
        decision="PASS" if passed else "FAIL",
        max_rel_error=worst_rel,
        max_abs_error=worst_abs,
        instances=instances,
        reason=reason,
    )


def run_gradient_checks(seed: int = 0, instances: int = 50, terms: Sequence[str] = TERMS, hook: Optional[JacobianHook] = None) -> List[GradCheckDecision]:
    return [check_term(term, seed, instances, hook) for term in terms]
