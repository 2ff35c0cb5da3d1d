from __future__ import annotations

import logging
from dataclasses import dataclass

import networkx as nx
import numpy as np

from .environment import attenuation_matrix
from .models import ScenarioConfig
from .scenario import AllocationTensor, GroundTruth, validate_allocation

logger = logging.getLogger(__name__)

SOURCE = "s"
SINK = "t"
COST_SCALE = 10**9


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OracleSolution:
    allocation: np.ndarray
    value: float
    per_kind_values: tuple[float, ...]


def _integral(values: np.ndarray, name: str) -> np.ndarray:
    rounded = np.round(values)
    if not np.allclose(values, rounded, rtol=0.0, atol=1e-9):
        raise OracleError(f"non_integral_{name}: use integral acceptance instances")
    return rounded.astype(int)


def _transport_graph(profit: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> nx.DiGraph:
    """Balanced min-cost flow network; the source -> sink bypass absorbs unused supply."""
    total = int(supply.sum())
    g = nx.DiGraph()
    g.add_node(SOURCE, demand=-total)
    g.add_node(SINK, demand=total)
    g.add_edge(SOURCE, SINK, capacity=total, weight=0)
    n_slices, n_nodes = profit.shape
    for i in range(n_slices):
        g.add_edge(SOURCE, ("slice", i), capacity=int(supply[i]), weight=0)
    for j in range(n_nodes):
        g.add_edge(("node", j), SINK, capacity=int(demand[j]), weight=0)
    for i in range(n_slices):
        for j in range(n_nodes):
            cost = int(round(float(profit[i, j]) * COST_SCALE))
            # arcs without profit carry nothing
            if cost > 0:
                g.add_edge(("slice", i), ("node", j), weight=-cost)
    return g


def max_profit_transport(profit: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """Integral max-profit flow on the slice -> node bipartite graph.

    Network simplex on integer-scaled costs; the network is acyclic, so no
    negative cycle can appear whatever the rounding.
    """
    n_slices, n_nodes = profit.shape
    flow = np.zeros((n_slices, n_nodes), dtype=int)
    if int(supply.sum()) == 0 or int(demand.sum()) == 0:
        return flow
    g = _transport_graph(profit, supply, demand)
    try:
        _, flow_dict = nx.network_simplex(g)
    except (nx.NetworkXUnfeasible, nx.NetworkXUnbounded) as exc:
        raise OracleError(f"flow_failed: {exc}") from exc
    for i in range(n_slices):
        for (_, j), units in flow_dict[("slice", i)].items():
            flow[i, j] = int(units)
    return flow


def solve_optimal(
    gt: GroundTruth, config: ScenarioConfig, *, attack_slot: int | None = None
) -> OracleSolution:
    """Exact optimum of the true linear utility, one transportation problem per kind.

    With ``attack_slot`` the weights are scaled by (1 - delta_eff) at that slot first.
    """
    capacity = _integral(config.capacity, "capacity")
    budget = _integral(config.budget, "budget")
    n_slices, n_nodes, n_kinds = config.shape
    alpha = gt.alpha
    if attack_slot is not None:
        delta = attenuation_matrix(config.attacks, n_slices, n_nodes, attack_slot)
        alpha = alpha * (1.0 - delta)[:, :, None]
    x = np.zeros(config.shape)
    per_kind: list[float] = []
    for k in range(n_kinds):
        flow = max_profit_transport(alpha[:, :, k], budget[:, k], capacity[:, k])
        x[:, :, k] = flow
        per_kind.append(float(np.sum(alpha[:, :, k] * flow)))
    return OracleSolution(allocation=x, value=float(sum(per_kind)), per_kind_values=tuple(per_kind))


def optimality_gap(x: AllocationTensor, gt: GroundTruth, config: ScenarioConfig) -> float:
    """Achieved true utility over the oracle optimum."""
    report = validate_allocation(x, config)
    if not report.feasible:
        raise OracleError(f"infeasible_allocation: {report}")
    best = solve_optimal(gt, config).value
    achieved = float(np.sum(gt.alpha * x))
    if best <= 0:
        return 1.0
    return achieved / best
