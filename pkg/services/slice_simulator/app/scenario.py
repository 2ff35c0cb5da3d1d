from __future__ import annotations

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from typing import Any

import numpy as np
import tomli_w
from pydantic import ValidationError

from .models import (
    DEFAULT_KIND_LABELS,
    AttackEvent,
    ResourceKind,
    ScenarioConfig,
)

logger = logging.getLogger(__name__)

# x_{i,j,k}: units of kind k granted to slice i on node j, shape (I, J, K)
AllocationTensor = np.ndarray

FEASIBILITY_TOL = 1e-6


class ScenarioError(ValueError):
    """Malformed or invalid scenario description."""


class ShapeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruth:
    """Hidden efficiency weights alpha_{i,j,k}; only the environment and oracle read them."""

    alpha: np.ndarray


@dataclass(frozen=True)
class FeasibilityReport:
    node_capacity: float
    sla_budget: float
    nonnegativity: float

    @property
    def feasible(self) -> bool:
        return max(self.node_capacity, self.sla_budget, self.nonnegativity) <= FEASIBILITY_TOL


def _matrix(table: dict[str, Any], rows: int, cols: int) -> list[list[float]]:
    if "values" in table:
        return [list(r) for r in table["values"]]
    default = table["default"]
    if isinstance(default, list):
        return [list(default) for _ in range(rows)]
    return [[default] * cols for _ in range(rows)]


def scenario_from_dict(doc: dict[str, Any]) -> ScenarioConfig:
    """Build a validated config from the table form of a scenario file, filling defaults."""
    try:
        topo = doc["topology"]
        n_slices = int(topo["num_slices"])
        n_nodes = int(topo["num_nodes"])
        labels = list(topo.get("resource_kinds", DEFAULT_KIND_LABELS))
        n_kinds = len(labels)
        capacity = _matrix(doc["capacity"], n_nodes, n_kinds)
        if "sla" in doc:
            budget = _matrix(doc["sla"], n_slices, n_kinds)
        else:
            # Even share of system capacity per kind
            per_kind = np.asarray(capacity, dtype=float).sum(axis=0) / n_slices
            budget = [per_kind.tolist() for _ in range(n_slices)]
        learning = dict(doc.get("learning", {}))
        learning.setdefault("dither_slots", n_kinds + 2)
        fields: dict[str, Any] = {
            "num_slices": n_slices,
            "num_nodes": n_nodes,
            "resource_kinds": [ResourceKind(index=k, label=lb) for k, lb in enumerate(labels)],
            "node_capacity": capacity,
            "sla_budget": budget,
            "alpha": doc.get("alpha", {}),
            "attacks": doc.get("attacks", []),
            "horizon": topo["horizon"],
            "admm": doc.get("admm", {}),
            "learning": learning,
            "detection": doc.get("detection", {}),
            "observation_noise_sigma": topo.get("observation_noise_sigma", 0.0),
        }
    except KeyError as e:
        raise ScenarioError(f"missing scenario key {e}") from e
    except (TypeError, ValueError) as e:
        raise ScenarioError(f"malformed scenario: {e}") from e
    try:
        return ScenarioConfig(**fields)
    except ValidationError as e:
        raise ScenarioError(str(e)) from e


def load_scenario(text: str) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"parse error: {e}") from e
    return scenario_from_dict(doc)


def load_scenario_file(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as f:
        config = load_scenario(f.read())
    logger.info(f"loaded scenario {path}: I={config.num_slices} J={config.num_nodes} T={config.horizon}")
    return config


def dump_scenario(config: ScenarioConfig) -> str:
    """Serialize with every default spelled out; ``load_scenario`` inverts it."""
    topology: dict[str, Any] = {
        "num_slices": config.num_slices,
        "num_nodes": config.num_nodes,
        "horizon": config.horizon,
        "resource_kinds": [k.label for k in config.resource_kinds],
        "observation_noise_sigma": config.observation_noise_sigma,
    }
    doc: dict[str, Any] = {
        "topology": topology,
        "capacity": {"values": config.node_capacity},
        "sla": {"values": config.sla_budget},
        "alpha": config.alpha.model_dump(exclude_none=True),
        "admm": config.admm.model_dump(),
        "learning": config.learning.model_dump(exclude_none=True),
        "detection": config.detection.model_dump(),
    }
    if config.attacks:
        doc["attacks"] = [ev.model_dump(exclude_none=True) for ev in config.attacks]
    return tomli_w.dumps(doc)


def with_attacks(config: ScenarioConfig, attacks: list[AttackEvent]) -> ScenarioConfig:
    return config.model_copy(update={"attacks": list(attacks)})


def sample_ground_truth(config: ScenarioConfig, seed: int) -> GroundTruth:
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(config.alpha.low, config.alpha.high, size=config.shape)
    return GroundTruth(alpha=alpha)


def ground_truth(config: ScenarioConfig, seed: int) -> GroundTruth:
    """Explicit weights when the scenario lists them, otherwise a draw from the law."""
    if config.alpha.values is not None:
        return GroundTruth(alpha=np.asarray(config.alpha.values, dtype=float).reshape(config.shape))
    pinned = config.alpha.seed
    return sample_ground_truth(config, seed if pinned is None else pinned)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per purpose so one consumer cannot shift another's draws."""
    dither, noise, attack_sets, hypervisor = np.random.SeedSequence(seed).spawn(4)
    return {
        "dither": np.random.default_rng(dither),
        "noise": np.random.default_rng(noise),
        "attack_sets": np.random.default_rng(attack_sets),
        "hypervisor": np.random.default_rng(hypervisor),
    }


def baseline_allocation(config: ScenarioConfig) -> AllocationTensor:
    n_slices, n_nodes, _ = config.shape
    per_slice = config.capacity[None, :, :] / n_slices
    per_node = config.budget[:, None, :] / n_nodes
    return np.minimum(per_slice, per_node)


def check_shape(x: np.ndarray, config: ScenarioConfig) -> None:
    if x.shape != config.shape:
        raise ShapeMismatchError(f"allocation shape {x.shape} != {config.shape}")


def validate_allocation(x: AllocationTensor, config: ScenarioConfig) -> FeasibilityReport:
    check_shape(x, config)
    node_excess = x.sum(axis=0) - config.capacity
    sla_excess = x.sum(axis=1) - config.budget
    return FeasibilityReport(
        node_capacity=float(max(node_excess.max(), 0.0)),
        sla_budget=float(max(sla_excess.max(), 0.0)),
        nonnegativity=float(max((-x).max(), 0.0)),
    )


def enforce_feasibility(x: AllocationTensor, config: ScenarioConfig) -> AllocationTensor:
    """Clamp, shrink overfull node columns, then shrink over-budget slice rows.

    Uniform row shrinking can only lower node sums, so the node pass stays satisfied.
    """
    check_shape(x, config)
    out = np.maximum(x, 0.0)
    capacity, budget = config.capacity, config.budget
    per_node = out.sum(axis=0)
    scale = np.where(per_node > capacity, capacity / np.where(per_node > 0, per_node, 1.0), 1.0)
    out = out * scale[None, :, :]
    per_slice = out.sum(axis=1)
    scale = np.where(per_slice > budget, budget / np.where(per_slice > 0, per_slice, 1.0), 1.0)
    return out * scale[:, None, :]
