import functools

import numpy as np
import pytest

from app.coordinator import enforce_feasibility
from app.oracle import OracleError, max_profit_transport, optimality_gap, solve_optimal
from app.paths import scenario_path
from app.scenario import (
    GroundTruth,
    baseline_allocation,
    ground_truth,
    load_scenario_file,
    validate_allocation,
    with_attacks,
)


def _enumerate_best(profit, supply, demand):
    """Exhaustive search over integral allocations, row by row, memoized on column room."""
    n_rows = profit.shape[0]

    def splits(total, room):
        # every way to place at most `total` units across columns within `room`
        if not room:
            yield ()
            return
        for q in range(min(total, room[0]) + 1):
            for rest in splits(total - q, room[1:]):
                yield (q,) + rest

    @functools.lru_cache(maxsize=None)
    def best_from(row, room):
        if row == n_rows:
            return 0.0
        return max(
            sum(q * profit[row, j] for j, q in enumerate(split))
            + best_from(row + 1, tuple(r - q for r, q in zip(room, split)))
            for split in splits(int(supply[row]), room)
        )

    return best_from(0, tuple(int(d) for d in demand))


def test_two_by_two_example(make_config):
    cfg = make_config(capacity=10, sla=10)
    gt = GroundTruth(alpha=np.array([[5.0, 1.0], [2.0, 4.0]]).reshape(2, 2, 1))
    sol = solve_optimal(gt, cfg)
    assert sol.value == pytest.approx(90.0)
    assert sol.allocation[:, :, 0].tolist() == [[10.0, 0.0], [0.0, 10.0]]
    assert optimality_gap(sol.allocation, gt, cfg) == pytest.approx(1.0)
    assert optimality_gap(np.zeros(cfg.shape), gt, cfg) == 0.0
    assert optimality_gap(baseline_allocation(cfg), gt, cfg) == pytest.approx(60.0 / 90.0)


def test_single_cell_and_constant_weights(make_config):
    cfg = make_config(num_slices=1, num_nodes=1, capacity=100, sla=100)
    assert solve_optimal(GroundTruth(alpha=np.full((1, 1, 1), 7.0)), cfg).value == pytest.approx(700.0)

    cfg = make_config(
        num_slices=3,
        num_nodes=2,
        kinds=("a", "b"),
        capacity=[[10, 4], [6, 9]],
        sla=[[3, 5], [2, 5], [4, 5]],
    )
    sol = solve_optimal(GroundTruth(alpha=np.full(cfg.shape, 2.5)), cfg)
    expected = 2.5 * sum(
        min(cfg.capacity[:, k].sum(), cfg.budget[:, k].sum()) for k in range(2)
    )
    assert sol.value == pytest.approx(expected)
    assert sol.value == pytest.approx(sum(sol.per_kind_values))


def test_flow_matches_enumeration():
    rng = np.random.default_rng(0)
    shapes = [(1, 1), (1, 3), (2, 2), (3, 1), (2, 3), (3, 2), (1, 6), (6, 1)]
    for n_rows, n_cols in shapes:
        for _ in range(5):
            profit = rng.uniform(0, 10, size=(n_rows, n_cols))
            supply = rng.integers(0, 11, size=n_rows)
            demand = rng.integers(0, 11, size=n_cols)
            flow = max_profit_transport(profit, supply, demand)
            assert np.all(flow >= 0)
            assert np.all(flow.sum(axis=1) <= supply)
            assert np.all(flow.sum(axis=0) <= demand)
            assert float(np.sum(profit * flow)) == pytest.approx(
                _enumerate_best(profit, supply, demand), abs=1e-6
            )


def test_oracle_dominates_random_feasible_points(make_config):
    rng = np.random.default_rng(1)
    cfg = make_config(num_slices=3, num_nodes=3, kinds=("a", "b"), capacity=20, sla=15)
    gt = GroundTruth(alpha=rng.uniform(1, 10, size=cfg.shape))
    best = solve_optimal(gt, cfg)
    for _ in range(200):
        x = enforce_feasibility(rng.uniform(0, 20, size=cfg.shape), cfg)
        assert float(np.sum(gt.alpha * x)) <= best.value + 1e-9
        assert optimality_gap(x, gt, cfg) <= 1.0 + 1e-9


def test_attack_slot_scales_weights(make_config):
    cfg = make_config(
        capacity=10,
        sla=10,
        attacks=[{"target_node": 0, "target_slice": 0, "start_slot": 5, "attenuation": 1.0}],
    )
    gt = GroundTruth(alpha=np.array([[5.0, 1.0], [2.0, 4.0]]).reshape(2, 2, 1))
    assert solve_optimal(gt, cfg, attack_slot=4).value == pytest.approx(90.0)
    attacked = solve_optimal(gt, cfg, attack_slot=5)
    # slice 1 keeps node 1; slice 0 gains nothing anywhere else
    assert attacked.value == pytest.approx(40.0)
    assert attacked.allocation[0, 0, 0] == 0.0
    assert attacked.allocation[1, 1, 0] == 10.0


def test_errors(make_config):
    cfg = make_config(capacity=10.5, sla=10)
    gt = GroundTruth(alpha=np.ones(cfg.shape))
    with pytest.raises(OracleError, match="non_integral"):
        solve_optimal(gt, cfg)
    cfg = make_config(capacity=10, sla=10)
    with pytest.raises(OracleError, match="infeasible"):
        optimality_gap(np.full(cfg.shape, 11.0), gt, cfg)


def test_shipped_scenario_solves_for_many_seeds():
    attacked = load_scenario_file(scenario_path("single_node_attack"))
    calm = with_attacks(attacked, [])
    onset = attacked.attacks[0].start_slot
    for seed in range(20):
        gt = ground_truth(calm, seed)
        sol = solve_optimal(gt, calm)
        x = sol.allocation
        assert validate_allocation(x, calm).feasible
        assert np.array_equal(x, np.round(x))
        assert sol.value >= float(np.sum(gt.alpha * baseline_allocation(calm))) - 1e-9
        assert optimality_gap(x, gt, calm) == pytest.approx(1.0)

        hit = solve_optimal(gt, attacked, attack_slot=onset)
        assert hit.value <= sol.value + 1e-9
        assert np.all(hit.allocation[:, attacked.attacks[0].target_node, :] == 0.0)
