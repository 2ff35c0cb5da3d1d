import numpy as np
import pytest

from app.environment import Observation
from app.estimator import (
    EstimatorError,
    covariance_trace,
    detect_attacks,
    efficiency_history,
    exploration_dither,
    gradient,
    gradients,
    init_estimator,
    update,
    update_many,
)
from app.scenario import validate_allocation


def _obs(x, r, i=0, j=0, t=0):
    return Observation(slot=t, slice=i, node=j, allocation=np.asarray(x, dtype=float), utility=float(r))


def test_init_defaults(make_config):
    state = init_estimator(make_config(kinds=("a", "b", "c")))
    assert np.all(state.mean == 1.0)
    assert np.allclose(state.cov[0, 0], 100.0 * np.eye(3))
    assert state.counts.sum() == 0
    assert state.history.shape == (2, 2, 11)
    zero = init_estimator(make_config(learning={"prior_mean": 0.0}))
    assert np.all(zero.mean == 0.0)
    again = init_estimator(make_config(kinds=("a", "b", "c")))
    assert np.array_equal(state.mean, again.mean) and np.array_equal(state.cov, again.cov)


def test_three_observation_fit(make_config):
    cfg = make_config(num_slices=1, num_nodes=1, kinds=("a", "b"), learning={"prior_scale": 1e6})
    state = update_many(
        init_estimator(cfg), [_obs([1, 0], 3), _obs([0, 1], 4), _obs([1, 1], 7)], forgetting=1.0
    )
    assert np.allclose(gradient(state, 0, 0), [3.0, 4.0], atol=1e-3)
    assert np.array_equal(gradient(state, 0, 0), gradient(state, 0, 0))
    assert efficiency_history(state, 0, 0).tolist() == [3.0, 4.0, 3.5]


def test_zero_regressor_changes_nothing(make_config):
    cfg = make_config(kinds=("a", "b"))
    state = init_estimator(cfg)
    after = update(state, _obs([0, 0], 5), 0.9)
    assert np.array_equal(after.mean, state.mean)
    assert np.array_equal(after.cov, state.cov)
    assert after.counts[0, 0] == 0


def test_update_does_not_mutate_input(make_config):
    state = init_estimator(make_config())
    before = state.mean.copy()
    update(state, _obs([2.0], 9.0), 0.9)
    assert np.array_equal(state.mean, before)


def test_repeated_observation_error_shrinks(make_config):
    cfg = make_config(num_slices=1, num_nodes=1, kinds=("a", "b"))
    state = init_estimator(cfg)
    x, r = np.array([2.0, 1.0]), 10.0
    errors = []
    for _ in range(10):
        state = update(state, _obs(x, r), 1.0)
        errors.append(abs(float(state.mean[0, 0] @ x) - r))
    assert all(b <= a + 1e-12 for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 1e-3


def test_exact_recovery_from_spanning_data(make_config):
    rng = np.random.default_rng(0)
    cfg = make_config(num_slices=1, num_nodes=1, kinds=("a", "b", "c"), learning={"prior_scale": 1e8})
    alpha = rng.uniform(1, 10, size=3)
    obs = []
    for n in range(6):
        x = 10.0 * np.eye(3)[n % 3] + rng.uniform(0, 1, size=3)
        obs.append(_obs(x, alpha @ x, t=n))
    state = update_many(init_estimator(cfg), obs, forgetting=1.0)
    assert np.max(np.abs(state.mean[0, 0] - alpha)) <= 1e-6


def test_covariance_stays_symmetric_positive_definite(make_config):
    rng = np.random.default_rng(1)
    cfg = make_config(num_slices=1, num_nodes=1, kinds=("a", "b", "c"))
    state = init_estimator(cfg)
    for t in range(200):
        x = rng.uniform(0, 10, size=3) * (rng.random(3) < 0.7)
        state = update(state, _obs(x, rng.uniform(0, 50), t=t), 0.9)
        p = state.cov[0, 0]
        assert np.allclose(p, p.T)
        assert np.linalg.eigvalsh(p).min() > 0


def test_forgetting_tracks_step_change(make_config):
    rng = np.random.default_rng(2)
    cfg = make_config(num_slices=1, num_nodes=1, kinds=("a", "b", "c"))
    old, new = np.array([2.0, 5.0, 8.0]), np.array([6.0, 1.0, 3.0])
    state = init_estimator(cfg)
    for t in range(30):
        x = rng.uniform(0, 10, size=3)
        state = update(state, _obs(x, old @ x, t=t), 0.9)
    for t in range(30, 180):
        x = rng.uniform(0, 10, size=3)
        state = update(state, _obs(x, new @ x, t=t), 0.9)
    assert np.max(np.abs(state.mean[0, 0] - new)) <= 1e-3


def test_gradient_index_errors(make_config):
    state = init_estimator(make_config())
    assert np.array_equal(gradient(state, 1, 1), np.ones(1))
    assert gradients(state).shape == (2, 2, 1)
    with pytest.raises(EstimatorError):
        gradient(state, 2, 0)
    with pytest.raises(EstimatorError):
        update(state, _obs([1.0], 1.0, j=5), 0.9)


def test_non_finite_observation_rejected(make_config):
    state = init_estimator(make_config())
    with pytest.raises(EstimatorError, match="non_finite"):
        update(state, _obs([1.0], float("nan")), 0.9)
    with pytest.raises(EstimatorError):
        update(state, _obs([1.0], 1.0), 0.0)


def _with_efficiencies(cfg, values):
    return update_many(
        init_estimator(cfg), [_obs([1.0], e, t=t) for t, e in enumerate(values)], forgetting=1.0
    )


def test_detect_attacks_rule(make_config):
    cfg = make_config(num_slices=1, num_nodes=1)
    state = _with_efficiencies(cfg, [5.1, 5.0, 4.9, 5.0, 5.1, 0.4])
    found = detect_attacks(state, 0.5, 5)
    assert found.pairs == {(0, 0)}
    assert found.nodes == {0}
    state = _with_efficiencies(cfg, [5.1, 5.0, 4.9, 5.0, 5.1, 4.0])
    assert detect_attacks(state, 0.5, 5).pairs == frozenset()
    state = _with_efficiencies(cfg, [5.0, 5.0, 5.0, 5.0, 0.1])
    assert detect_attacks(state, 0.5, 5).pairs == frozenset()
    with pytest.raises(EstimatorError):
        detect_attacks(state, 1.5, 5)


def test_node_flag_needs_every_tracked_slice(make_config):
    cfg = make_config(num_slices=2, num_nodes=1)
    steady = [_obs([1.0], 5.0, i=i, t=t) for t in range(5) for i in range(2)]
    state = update_many(init_estimator(cfg), steady, 1.0)
    one = update_many(state, [_obs([1.0], 0.1, i=0, t=5), _obs([1.0], 5.0, i=1, t=5)], 1.0)
    found = detect_attacks(one, 0.5, 5)
    assert found.pairs == {(0, 0)} and found.nodes == frozenset()
    both = update_many(state, [_obs([1.0], 0.1, i=0, t=5), _obs([1.0], 0.1, i=1, t=5)], 1.0)
    assert detect_attacks(both, 0.5, 5).nodes == {0}


def test_unrecorded_updates_skip_history(make_config):
    state = init_estimator(make_config())
    state = update(state, _obs([1.0], 3.0), 0.9, record_efficiency=False)
    assert state.counts[0, 0] == 0
    assert not np.allclose(state.mean[0, 0], 1.0)


def test_covariance_trace(make_config):
    state = init_estimator(make_config(kinds=("a", "b")))
    assert covariance_trace(state) == pytest.approx(2 * 2 * 2 * 100.0)


def test_dither_zero_magnitude_and_feasibility(make_config):
    cfg = make_config(num_slices=3, num_nodes=2, kinds=("a", "b"), capacity=30, sla=20)
    rng = np.random.default_rng(0)
    x = np.full(cfg.shape, 10.0)
    assert np.array_equal(exploration_dither(x, 0.0, cfg, rng), x)
    for _ in range(200):
        out = exploration_dither(x, 5.0, cfg, rng)
        assert validate_allocation(out, cfg).feasible


def test_dither_is_zero_mean(make_config):
    cfg = make_config(num_slices=2, num_nodes=2, capacity=100, sla=100)
    rng = np.random.default_rng(1)
    x = np.full(cfg.shape, 10.0)
    draws = np.stack([exploration_dither(x, 2.0, cfg, rng) for _ in range(1000)])
    assert np.all(np.abs(draws.mean(axis=0) - x) <= 0.2)
