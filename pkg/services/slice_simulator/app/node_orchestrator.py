from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ShapeMismatchError


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSubproblem:
    """x-update of one node: maximise g.x - rho/2 |x - v|^2 under the node's capacity.

    gradients and reference are (I, K); capacity is (K,).
    """

    node: int
    gradients: np.ndarray
    reference: np.ndarray
    rho: float
    capacity: np.ndarray


def project_capped_simplex_rows(v: np.ndarray, cap: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection onto {x >= 0, sum(x) <= cap}.

    v is (m, n), cap is (m,). Rows whose clamped sum fits are returned clamped; the
    rest are water-filled at the threshold found by a stable descending sort.
    """
    v = np.asarray(v, dtype=float)
    cap = np.asarray(cap, dtype=float)
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(cap))):
        raise ProjectionError("non_finite_input")
    clipped = np.maximum(v, 0.0)
    over = clipped.sum(axis=1) > cap
    if not over.any():
        return clipped
    m, n = v.shape
    u = -np.sort(-v, axis=1, kind="stable")
    css = np.cumsum(u, axis=1) - cap[:, None]
    active = u - css / np.arange(1, n + 1) > 0
    # Active indices form a prefix; take its last position
    last = n - 1 - np.argmax(active[:, ::-1], axis=1)
    theta = css[np.arange(m), last] / (last + 1)
    out = np.where(over[:, None], np.maximum(v - theta[:, None], 0.0), clipped)
    out[over & (cap <= 0.0)] = 0.0
    return out


def project_capped_simplex(v: np.ndarray, cap: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeMismatchError(f"expected a vector, got shape {v.shape}")
    if cap < 0:
        raise ProjectionError("negative_capacity")
    return project_capped_simplex_rows(v[None, :], np.asarray([cap]))[0]


def subproblem_objective(p: NodeSubproblem, x: np.ndarray) -> float:
    return float(np.sum(p.gradients * x) - 0.5 * p.rho * np.sum((x - p.reference) ** 2))


def solve_node_subproblem(p: NodeSubproblem) -> np.ndarray:
    """Exact maximiser: per kind, project the targets v + g/rho onto the node's capped simplex."""
    if p.gradients.shape != p.reference.shape or p.gradients.ndim != 2:
        raise ShapeMismatchError(
            f"gradients {p.gradients.shape} and reference {p.reference.shape} must both be (I, K)"
        )
    if p.capacity.shape != (p.gradients.shape[1],):
        raise ShapeMismatchError(f"capacity {p.capacity.shape} must be (K,)")
    targets = p.reference + p.gradients / p.rho
    return project_capped_simplex_rows(targets.T, p.capacity).T


def solve_node_subproblems(
    gradients: np.ndarray, reference: np.ndarray, rho: float, capacity: np.ndarray
) -> np.ndarray:
    """All nodes' x-updates in one batch; equal to stacking solve_node_subproblem per node."""
    if gradients.shape != reference.shape:
        raise ShapeMismatchError(f"gradients {gradients.shape} != reference {reference.shape}")
    n_slices, n_nodes, n_kinds = gradients.shape
    if capacity.shape != (n_nodes, n_kinds):
        raise ShapeMismatchError(f"capacity {capacity.shape} must be (J, K)")
    targets = (reference + gradients / rho).transpose(1, 2, 0).reshape(n_nodes * n_kinds, n_slices)
    out = project_capped_simplex_rows(targets, capacity.reshape(-1))
    return out.reshape(n_nodes, n_kinds, n_slices).transpose(2, 0, 1)
