from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import AttackEvent, ScenarioConfig
from .scenario import AllocationTensor, GroundTruth


@dataclass(frozen=True)
class Observation:
    slot: int
    slice: int
    node: int
    # x_{i,j,.}, length K
    allocation: np.ndarray
    utility: float


def attack_attenuation(schedule: Sequence[AttackEvent], i: int, j: int, t: int) -> float:
    """Strongest attenuation among events active at slot t that hit (i, j); 0 when none."""
    delta = 0.0
    for ev in schedule:
        if ev.active(t) and ev.matches(i, j):
            delta = max(delta, ev.attenuation)
    return delta


def attenuation_matrix(
    schedule: Sequence[AttackEvent], n_slices: int, n_nodes: int, t: int
) -> np.ndarray:
    delta = np.zeros((n_slices, n_nodes))
    for ev in schedule:
        if not ev.active(t):
            continue
        rows = slice(None) if ev.target_slice is None else ev.target_slice
        delta[rows, ev.target_node] = np.maximum(delta[rows, ev.target_node], ev.attenuation)
    return delta


def realized_utility(
    gt: GroundTruth,
    x: AllocationTensor,
    schedule: Sequence[AttackEvent],
    t: int,
    noise_sigma: float,
    rng: np.random.Generator | None,
) -> list[Observation]:
    n_slices, n_nodes, _ = x.shape
    delta = attenuation_matrix(schedule, n_slices, n_nodes, t)
    r = (1.0 - delta) * np.einsum("ijk,ijk->ij", gt.alpha, x)
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng stream")
        r = r + rng.normal(0.0, noise_sigma, size=r.shape)
    return [
        Observation(slot=t, slice=i, node=j, allocation=x[i, j].copy(), utility=float(r[i, j]))
        for i in range(n_slices)
        for j in range(n_nodes)
    ]


def total_utility(observations: Sequence[Observation]) -> float:
    if not observations:
        raise ValueError("total_utility needs at least one observation")
    return float(sum(o.utility for o in observations))


def slice_utilities(observations: Sequence[Observation], n_slices: int) -> tuple[float, ...]:
    out = [0.0] * n_slices
    for o in observations:
        out[o.slice] += o.utility
    return tuple(out)


class SliceEnvironment:
    """Owns the hidden ground truth, the attack schedule and the noise stream for one run."""

    def __init__(self, gt: GroundTruth, config: ScenarioConfig, rng: np.random.Generator) -> None:
        self._gt = gt
        self._schedule = tuple(config.attacks)
        self._sigma = config.observation_noise_sigma
        self._rng = rng
        self.slot = 0

    def observe(self, x: AllocationTensor, t: int) -> list[Observation]:
        if t < self.slot:
            raise ValueError(f"slot {t} precedes current slot {self.slot}")
        self.slot = t
        return realized_utility(self._gt, x, self._schedule, t, self._sigma, self._rng)
