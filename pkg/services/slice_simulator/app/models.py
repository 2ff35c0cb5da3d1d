from __future__ import annotations

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

DEFAULT_KIND_LABELS = ("uplink_radio", "downlink_radio", "compute")
VALID_ALGORITHMS = ("baseline", "learning", "oracle")
# Numerical zero for allocation units
EPS_NUM = 1e-9


class ResourceKind(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    label: str = Field(min_length=1)


class AttackEvent(BaseModel):
    """DoS attack window on one node, optionally restricted to one slice.

    Active on slots ``start_slot <= t < end_slot``; no ``end_slot`` means until the horizon.
    """

    model_config = ConfigDict(frozen=True)

    target_node: int = Field(ge=0)
    target_slice: int | None = Field(default=None, ge=0)
    start_slot: int = Field(ge=0)
    end_slot: int | None = None
    attenuation: float = Field(default=1.0, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _window(self) -> AttackEvent:
        if self.end_slot is not None and self.start_slot >= self.end_slot:
            raise ValueError("attack start_slot must precede end_slot")
        return self

    def active(self, t: int) -> bool:
        return self.start_slot <= t and (self.end_slot is None or t < self.end_slot)

    def matches(self, i: int, j: int) -> bool:
        return self.target_node == j and (self.target_slice is None or self.target_slice == i)


class AlphaSpec(BaseModel):
    """Either explicit row-major I*J*K weights, or a uniform sampling law."""

    model_config = ConfigDict(frozen=True)

    values: list[float] | None = None
    low: float = 1.0
    high: float = 10.0
    # Pins the ground truth regardless of the run seed when set
    seed: int | None = None

    @model_validator(mode="after")
    def _law(self) -> AlphaSpec:
        if self.low > self.high:
            raise ValueError("alpha low must not exceed high")
        if self.values is not None and not all(math.isfinite(v) for v in self.values):
            raise ValueError("alpha values must be finite")
        return self

    @property
    def sampled(self) -> bool:
        return self.values is None


class AdmmParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    rho: float = Field(default=1.0, gt=0.0)
    eps_primal: float = Field(default=1e-4, gt=0.0)
    eps_dual: float = Field(default=1e-4, gt=0.0)
    max_iters: int = Field(default=500, ge=1)
    # Deployed entries below this many units are released to zero
    deploy_floor: float = Field(default=1e-3, ge=0.0)


class LearningParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    forgetting: float = Field(default=0.9, gt=0.0, le=1.0)
    prior_mean: float = 1.0
    prior_scale: float = Field(default=100.0, gt=0.0)
    dither_magnitude: float = Field(default=2.0, ge=0.0)
    # None means K + 2
    dither_slots: int | None = Field(default=None, ge=0)
    retrigger_ratio: float = Field(default=10.0, gt=1.0)
    # Deployed units on (i, j, k) with a learned gradient below this are withdrawn
    gradient_floor: float = Field(default=0.5, ge=0.0)


class DetectionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    threshold: float = Field(default=0.5, gt=0.0, lt=1.0)
    window: int = Field(default=5, ge=1)


class ScenarioConfig(BaseModel):
    """Full experiment description. Indices are 0-based: slices i, nodes j, kinds k."""

    model_config = ConfigDict(frozen=True)

    num_slices: int = Field(ge=1)
    num_nodes: int = Field(ge=1)
    resource_kinds: list[ResourceKind]
    # J x K
    node_capacity: list[list[float]]
    # I x K
    sla_budget: list[list[float]]
    alpha: AlphaSpec = AlphaSpec()
    attacks: list[AttackEvent] = Field(default_factory=list)
    horizon: int = Field(ge=1)
    admm: AdmmParams = AdmmParams()
    learning: LearningParams = LearningParams()
    detection: DetectionParams = DetectionParams()
    observation_noise_sigma: float = Field(default=0.0, ge=0.0)

    @field_validator("resource_kinds")
    @classmethod
    def _kinds(cls, v: list[ResourceKind]) -> list[ResourceKind]:
        if not v:
            raise ValueError("resource_kinds must not be empty")
        labels = [k.label for k in v]
        if len(set(labels)) != len(labels):
            raise ValueError("resource kind labels must be unique")
        if [k.index for k in v] != list(range(len(v))):
            raise ValueError("resource kind indices must be 0..K-1 in order")
        return v

    @model_validator(mode="after")
    def _shapes(self) -> ScenarioConfig:
        n_kinds = len(self.resource_kinds)
        _check_matrix(self.node_capacity, self.num_nodes, n_kinds, "node_capacity", "num_nodes")
        _check_matrix(self.sla_budget, self.num_slices, n_kinds, "sla_budget", "num_slices")
        expected = self.num_slices * self.num_nodes * n_kinds
        if self.alpha.values is not None and len(self.alpha.values) != expected:
            raise ValueError(f"alpha values must hold num_slices*num_nodes*K = {expected} entries")
        for ev in self.attacks:
            if ev.target_node >= self.num_nodes:
                raise ValueError(f"attack target_node {ev.target_node} out of range")
            if ev.target_slice is not None and ev.target_slice >= self.num_slices:
                raise ValueError(f"attack target_slice {ev.target_slice} out of range")
        return self

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.num_slices, self.num_nodes, len(self.resource_kinds)

    @property
    def capacity(self) -> np.ndarray:
        return np.asarray(self.node_capacity, dtype=float).reshape(self.num_nodes, -1)

    @property
    def budget(self) -> np.ndarray:
        return np.asarray(self.sla_budget, dtype=float).reshape(self.num_slices, -1)

    @property
    def exploration_slots(self) -> int:
        if self.learning.dither_slots is not None:
            return self.learning.dither_slots
        return len(self.resource_kinds) + 2


def _check_matrix(rows: list[list[float]], n_rows: int, n_cols: int, name: str, axis: str) -> None:
    if len(rows) != n_rows or any(len(r) != n_cols for r in rows):
        raise ValueError(f"{name} must have shape ({axis}, K) = ({n_rows}, {n_cols})")
    for r in rows:
        for v in r:
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            if v < 0:
                raise ValueError(f"{name} must be nonnegative")


class RunSpec(BaseModel):
    """One CLI invocation: what to run and where to write it."""

    scenario: str
    seed: int = 0
    algorithms: list[str] = Field(default_factory=lambda: ["learning", "baseline"])
    out: str | None = None
    # Attacked-node counts for sweeps
    attacked: list[int] | None = None
    seeds: int = Field(default=10, ge=1)
    exact_gradients: bool = False
    # Hypervisor replay: PRBs per node and scheduler ticks
    num_prbs: int = Field(default=50, ge=1)
    ticks: int = Field(default=100, ge=1)

    @field_validator("algorithms")
    @classmethod
    def _known(cls, v: list[str]) -> list[str]:
        for name in v:
            if name not in VALID_ALGORITHMS:
                raise ValueError(
                    f"unknown algorithm '{name}'; valid names: {', '.join(VALID_ALGORITHMS)}"
                )
        if not v:
            raise ValueError(f"no algorithms given; valid names: {', '.join(VALID_ALGORITHMS)}")
        return v
