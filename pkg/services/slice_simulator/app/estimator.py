from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .environment import Observation
from .models import EPS_NUM, ScenarioConfig
from .scenario import AllocationTensor, ShapeMismatchError, enforce_feasibility

logger = logging.getLogger(__name__)


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    pairs: frozenset[tuple[int, int]] = frozenset()
    nodes: frozenset[int] = frozenset()


@dataclass(frozen=True)
class EstimatorState:
    """Per (slice, node) recursive least squares over the marginal-utility vector.

    mean is (I, J, K), cov is (I, J, K, K). history is (I, J, H), newest entry last,
    NaN-padded on the left; counts holds how many entries of each row are real.
    """

    mean: np.ndarray
    cov: np.ndarray
    history: np.ndarray
    counts: np.ndarray
    last_detection: Detection = Detection()


def init_estimator(config: ScenarioConfig) -> EstimatorState:
    n_slices, n_nodes, n_kinds = config.shape
    learning = config.learning
    mean = np.full((n_slices, n_nodes, n_kinds), float(learning.prior_mean))
    cov = np.tile(np.eye(n_kinds) * learning.prior_scale, (n_slices, n_nodes, 1, 1))
    # Window plus as many older entries again
    depth = 2 * config.detection.window + 1
    history = np.full((n_slices, n_nodes, depth), np.nan)
    counts = np.zeros((n_slices, n_nodes), dtype=int)
    return EstimatorState(mean=mean, cov=cov, history=history, counts=counts)


def _check_pair(state: EstimatorState, i: int, j: int) -> None:
    n_slices, n_nodes, _ = state.mean.shape
    if not (0 <= i < n_slices and 0 <= j < n_nodes):
        raise EstimatorError(f"pair ({i}, {j}) out of range")


def _rls_step(
    mean: np.ndarray,
    cov: np.ndarray,
    history: np.ndarray,
    counts: np.ndarray,
    obs: Observation,
    forgetting: float,
    record_efficiency: bool,
) -> None:
    x = np.asarray(obs.allocation, dtype=float)
    if x.shape != (mean.shape[2],):
        raise ShapeMismatchError(f"observation allocation {x.shape} != ({mean.shape[2]},)")
    if not (np.all(np.isfinite(x)) and np.isfinite(obs.utility)):
        raise EstimatorError("non_finite_observation")
    i, j = obs.slice, obs.node
    units = float(x.sum())
    # A zero regressor carries no information
    if units <= EPS_NUM:
        return
    p = cov[i, j]
    px = p @ x
    gain = px / (forgetting + x @ px)
    mean[i, j] = mean[i, j] + gain * (obs.utility - mean[i, j] @ x)
    p_next = (p - np.outer(gain, px)) / forgetting
    cov[i, j] = 0.5 * (p_next + p_next.T)
    if record_efficiency:
        history[i, j, :-1] = history[i, j, 1:]
        history[i, j, -1] = obs.utility / max(units, EPS_NUM)
        counts[i, j] = min(counts[i, j] + 1, history.shape[2])


def update(
    state: EstimatorState,
    obs: Observation,
    forgetting: float,
    *,
    record_efficiency: bool = True,
) -> EstimatorState:
    """One RLS step with exponential forgetting for the observation's (slice, node) pair.

    ``record_efficiency=False`` keeps the observation out of the detection history.
    """
    return update_many(state, [obs], forgetting, record_efficiency=record_efficiency)


def update_many(
    state: EstimatorState,
    observations: Iterable[Observation],
    forgetting: float,
    *,
    record_efficiency: bool = True,
) -> EstimatorState:
    if not 0.0 < forgetting <= 1.0:
        raise EstimatorError("forgetting must lie in (0, 1]")
    mean = state.mean.copy()
    cov = state.cov.copy()
    history = state.history.copy()
    counts = state.counts.copy()
    for obs in observations:
        _check_pair(state, obs.slice, obs.node)
        _rls_step(mean, cov, history, counts, obs, forgetting, record_efficiency)
    return replace(state, mean=mean, cov=cov, history=history, counts=counts)


def gradient(state: EstimatorState, i: int, j: int) -> np.ndarray:
    _check_pair(state, i, j)
    return state.mean[i, j].copy()


def gradients(state: EstimatorState) -> np.ndarray:
    return state.mean.copy()


def covariance_trace(state: EstimatorState) -> float:
    return float(np.trace(state.cov, axis1=2, axis2=3).sum())


def efficiency_history(state: EstimatorState, i: int, j: int) -> np.ndarray:
    _check_pair(state, i, j)
    n = int(state.counts[i, j])
    return state.history[i, j, state.history.shape[2] - n :].copy()


def detect_attacks(state: EstimatorState, threshold: float, window: int) -> Detection:
    """Flag pairs whose latest efficiency fell below threshold * median of the prior window.

    A node is flagged when every slice with history on it is flagged.
    """
    if not 0.0 < threshold < 1.0:
        raise EstimatorError("threshold must lie in (0, 1)")
    if window < 1:
        raise EstimatorError("window must be >= 1")
    n_slices, n_nodes, depth = state.history.shape
    pairs: set[tuple[int, int]] = set()
    for i in range(n_slices):
        for j in range(n_nodes):
            n = int(state.counts[i, j])
            if n < window + 1:
                continue
            recent = state.history[i, j, depth - n :]
            if recent[-1] < threshold * float(np.median(recent[-window - 1 : -1])):
                pairs.add((i, j))
    nodes: set[int] = set()
    for j in range(n_nodes):
        tracked = [i for i in range(n_slices) if state.counts[i, j] > 0]
        if tracked and all((i, j) in pairs for i in tracked):
            nodes.add(j)
    return Detection(pairs=frozenset(pairs), nodes=frozenset(nodes))


def exploration_dither(
    x: AllocationTensor,
    magnitude: float,
    config: ScenarioConfig,
    rng: np.random.Generator,
) -> AllocationTensor:
    """Zero-mean uniform perturbation of every entry, then restored to feasibility."""
    if magnitude <= 0:
        return x.copy()
    noise = rng.uniform(-magnitude, magnitude, size=x.shape)
    return enforce_feasibility(x + noise, config)
