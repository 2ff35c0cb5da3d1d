from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from opentelemetry import trace

from .environment import SliceEnvironment, slice_utilities, total_utility
from .estimator import (
    covariance_trace,
    detect_attacks,
    exploration_dither,
    gradients,
    init_estimator,
    update_many,
)
from .logging_metrics import (
    admm_iterations,
    admm_max_iter_hits_total,
    attack_flags_total,
    infeasible_deployments_total,
    run_id,
    slots_total,
)
from .models import ScenarioConfig
from .node_orchestrator import ProjectionError, project_capped_simplex_rows, solve_node_subproblems
from .scenario import (
    AllocationTensor,
    ShapeMismatchError,
    baseline_allocation,
    check_shape,
    enforce_feasibility,
    ground_truth,
    rng_streams,
    validate_allocation,
)

logger = logging.getLogger(__name__)
tracer = trace.get_tracer(__name__)

SIMULATED_ALGORITHMS = ("learning", "baseline")


class AdmmDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdmmState:
    """Scaled-form consensus ADMM iterate: X (node reports), Z (SLA-feasible copy), U (scaled duals)."""

    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    iterations: int = 0
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    converged: bool = False


@dataclass(frozen=True)
class MetricsRow:
    slot: int
    algorithm: str
    total_utility: float
    slice_utility: tuple[float, ...]
    admm_iters: int
    primal_residual: float
    dual_residual: float
    flagged_nodes: tuple[int, ...]
    flagged_pairs: tuple[tuple[int, int], ...]
    checksum: str
    feasible: bool
    exploring: bool
    allocation: np.ndarray = field(repr=False, compare=False)


@dataclass
class MetricsTimeline:
    algorithm: str
    seed: int
    rows: list[MetricsRow] = field(default_factory=list)

    def utilities(self) -> np.ndarray:
        return np.asarray([r.total_utility for r in self.rows])

    @property
    def all_feasible(self) -> bool:
        return all(r.feasible for r in self.rows)

    @property
    def final_allocation(self) -> np.ndarray:
        return self.rows[-1].allocation


def _same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"mismatched shapes {sorted(shapes)}")


def update_auxiliary(
    x: np.ndarray, u: np.ndarray, budget: np.ndarray, rho: float
) -> np.ndarray:
    """z-update: per (slice, kind), project X + U over the node axis onto the SLA budget.

    In scaled form the projection does not depend on rho; it is validated only.
    """
    _same_shape(x, u)
    if rho <= 0:
        raise ValueError("rho must be positive")
    n_slices, n_nodes, n_kinds = x.shape
    if budget.shape != (n_slices, n_kinds):
        raise ShapeMismatchError(f"budget {budget.shape} must be (I, K)")
    rows = (x + u).transpose(0, 2, 1).reshape(n_slices * n_kinds, n_nodes)
    z = project_capped_simplex_rows(rows, budget.reshape(-1))
    return np.ascontiguousarray(z.reshape(n_slices, n_kinds, n_nodes).transpose(0, 2, 1))


def update_duals(u: np.ndarray, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    _same_shape(u, x, z)
    return u + x - z


def residuals(x: np.ndarray, z: np.ndarray, z_prev: np.ndarray, rho: float) -> tuple[float, float]:
    _same_shape(x, z, z_prev)
    return float(np.linalg.norm(x - z)), float(rho * np.linalg.norm(z - z_prev))


def run_admm(
    grads: np.ndarray,
    config: ScenarioConfig,
    warm_start: AdmmState | None = None,
) -> AdmmState:
    """Iterate x/z/u updates until both residuals meet tolerance or max_iters is reached."""
    check_shape(grads, config)
    if not np.all(np.isfinite(grads)):
        raise AdmmDivergenceError("non_finite_gradients")
    params = config.admm
    capacity, budget = config.capacity, config.budget
    if warm_start is None:
        x = np.zeros(config.shape)
        z = np.zeros(config.shape)
        u = np.zeros(config.shape)
    else:
        check_shape(warm_start.z, config)
        x, z, u = warm_start.x, warm_start.z, warm_start.u
    primal = dual = float("inf")
    converged = False
    it = 0
    try:
        for it in range(1, params.max_iters + 1):
            x = solve_node_subproblems(grads, z - u, params.rho, capacity)
            z_prev = z
            z = update_auxiliary(x, u, budget, params.rho)
            u = update_duals(u, x, z)
            primal, dual = residuals(x, z, z_prev, params.rho)
            if not (np.isfinite(primal) and np.isfinite(dual)):
                raise AdmmDivergenceError(f"non_finite_residuals at iteration {it}")
            if primal <= params.eps_primal and dual <= params.eps_dual:
                converged = True
                break
    except ProjectionError as e:
        raise AdmmDivergenceError(f"non_finite_iterate at iteration {it}") from e
    admm_iterations.observe(it)
    if not converged:
        admm_max_iter_hits_total.inc()
        logger.debug(f"ADMM stopped at max_iters={params.max_iters} primal={primal:.3g} dual={dual:.3g}")
    return AdmmState(
        x=x, z=z, u=u, iterations=it, primal_residual=primal, dual_residual=dual, converged=converged
    )


def release_dust(x: AllocationTensor, floor: float) -> AllocationTensor:
    """Zero entries below ``floor`` units; sums only drop, so feasibility is kept."""
    if floor <= 0:
        return x
    return np.where(x < floor, 0.0, x)


def release_unprofitable(
    x: AllocationTensor, grads: np.ndarray, floor: float
) -> AllocationTensor:
    """Zero entries whose learned marginal utility is below ``floor``; sums only drop."""
    if floor <= 0:
        return x
    return np.where(grads < floor, 0.0, x)


def allocation_checksum(x: AllocationTensor) -> str:
    return hashlib.sha256(np.round(x, 9).tobytes()).hexdigest()[:16]


def run_simulation(
    config: ScenarioConfig,
    seed: int,
    algorithm: str,
    *,
    exact_gradients: bool = False,
) -> MetricsTimeline:
    """Slotted loop: allocate, deploy, observe, learn, detect. Deterministic per (config, seed)."""
    if algorithm not in SIMULATED_ALGORITHMS:
        raise ValueError(
            f"unknown algorithm '{algorithm}'; valid names: {', '.join(SIMULATED_ALGORITHMS)}"
        )
    digest = hashlib.sha256(f"{config.model_dump_json()}|{seed}|{algorithm}".encode()).hexdigest()
    token = run_id.set(digest[:16])
    try:
        with tracer.start_as_current_span(
            "run_simulation",
            attributes={"seed": seed, "algorithm": algorithm, "horizon": config.horizon},
        ):
            timeline = _simulate(config, seed, algorithm, exact_gradients)
        logger.info(
            f"run finished algorithm={algorithm} seed={seed} "
            f"final_utility={timeline.rows[-1].total_utility:.6g}"
        )
        return timeline
    finally:
        run_id.reset(token)


def _simulate(
    config: ScenarioConfig, seed: int, algorithm: str, exact_gradients: bool
) -> MetricsTimeline:
    gt = ground_truth(config, seed)
    streams = rng_streams(seed)
    env = SliceEnvironment(gt, config, streams["noise"])
    est = init_estimator(config)
    learning, detection = config.learning, config.detection
    learns = algorithm == "learning" and not exact_gradients
    explore_slots = config.exploration_slots
    explore_until = explore_slots if learns else 0
    reference_trace: float | None = None
    baseline = baseline_allocation(config)
    admm_state: AdmmState | None = None
    flagged_nodes: frozenset[int] = frozenset()
    timeline = MetricsTimeline(algorithm=algorithm, seed=seed)

    for t in range(config.horizon):
        exploring = t < explore_until
        if algorithm == "baseline":
            x = baseline.copy()
        else:
            grads = gt.alpha if exact_gradients else gradients(est)
            admm_state = run_admm(grads, config, warm_start=admm_state)
            x = enforce_feasibility(admm_state.x, config)
            x = release_dust(x, config.admm.deploy_floor)
            if learns:
                x = release_unprofitable(x, grads, learning.gradient_floor)
            if exploring:
                x = exploration_dither(x, learning.dither_magnitude, config, streams["dither"])

        observations = env.observe(x, t)
        est = update_many(est, observations, learning.forgetting, record_efficiency=not exploring)
        found = detect_attacks(est, detection.threshold, detection.window)
        est = replace(est, last_detection=found)
        if found.nodes != flagged_nodes:
            logger.info(f"slot {t}: flagged nodes {sorted(found.nodes)}")
            flagged_nodes = found.nodes
        if found.pairs:
            attack_flags_total.labels(algorithm=algorithm).inc(len(found.pairs))

        if learns:
            level = covariance_trace(est)
            if t + 1 == explore_until or (reference_trace is None and not exploring):
                reference_trace = level
            elif (
                not exploring
                and explore_slots > 0
                and reference_trace is not None
                and level > learning.retrigger_ratio * reference_trace
            ):
                explore_until = t + 1 + explore_slots
                logger.info(f"slot {t}: covariance trace {level:.3g} re-arms exploration")

        report = validate_allocation(x, config)
        if not report.feasible:
            infeasible_deployments_total.labels(algorithm=algorithm).inc()
            logger.warning(f"slot {t}: infeasible deployment {report}")
        slots_total.labels(algorithm=algorithm).inc()
        timeline.rows.append(
            MetricsRow(
                slot=t,
                algorithm=algorithm,
                total_utility=total_utility(observations),
                slice_utility=slice_utilities(observations, config.num_slices),
                admm_iters=admm_state.iterations if admm_state is not None else 0,
                primal_residual=admm_state.primal_residual if admm_state is not None else 0.0,
                dual_residual=admm_state.dual_residual if admm_state is not None else 0.0,
                flagged_nodes=tuple(sorted(found.nodes)),
                flagged_pairs=tuple(sorted(found.pairs)),
                checksum=allocation_checksum(x),
                feasible=report.feasible,
                exploring=exploring,
                allocation=x,
            )
        )
    return timeline
