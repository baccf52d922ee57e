import numpy as np
import pytest
from sklearn.base import clone

from roleflow.rl import GrpoConfig
from roleflow.toy import (
    MALFORMED,
    ToyRolePolicy,
    log_softmax,
    make_toy_environment,
    objective_and_grad,
    role_names,
    synthetic_trajectory,
    train_toy_policy,
)
from roleflow.reward import score_trajectory


def random_problem(seed, config):
    rng = np.random.default_rng(seed)
    n_states, n_actions, M, L = 6, 6, 8, 2
    logits = rng.normal(scale=0.7, size=(n_states, n_actions))
    states = rng.integers(0, n_states, size=(M, L))
    actions = rng.integers(0, n_actions, size=(M, L))
    adv = rng.normal(size=M)
    lp = log_softmax(logits)[states, actions]
    logp_prev = lp + rng.normal(scale=0.1, size=(M, L))
    logp_base = lp + rng.normal(scale=0.3, size=(M, L))
    return logits, states, actions, adv, logp_prev, logp_base


def max_rel_grad_error(seed, config, h=1e-5):
    logits, *rest = random_problem(seed, config)
    _, grad = objective_and_grad(logits, *rest, config)
    fd = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        fd[idx] = (objective_and_grad(up, *rest, config)[0] - objective_and_grad(dn, *rest, config)[0]) / (2 * h)
    scale = np.maximum(np.abs(fd), 1e-6)
    return float(np.max(np.abs(grad - fd) / scale))


@pytest.mark.parametrize("reduction", ["per_trajectory", "pooled"])
def test_gradient_matches_finite_differences(reduction):
    cfg = GrpoConfig(kl_coeff=0.05, kl_reduction=reduction)
    for seed in range(5):
        assert max_rel_grad_error(seed, cfg) < 1e-4


def test_environment_is_seeded():
    X1, y1 = make_toy_environment(4)
    X2, y2 = make_toy_environment(4)
    assert np.array_equal(y1, y2)
    assert y1.max() < 5


def test_synthetic_trajectory_rewards():
    names = role_names(6)
    traj, refs = synthetic_trajectory(0, (1, 2), (1, 2), names)
    assert score_trajectory(traj, refs).r_total == 1.0
    traj, refs = synthetic_trajectory(0, (1, 3), (1, 2), names)
    assert score_trajectory(traj, refs).r_total == pytest.approx(0.5)
    traj, refs = synthetic_trajectory(0, (names.index(MALFORMED), 2), (1, 2), names)
    assert score_trajectory(traj, refs).r_total < 0


def test_zero_learning_rate_keeps_policy_frozen():
    X, y = make_toy_environment(0)
    est = ToyRolePolicy(n_iterations=200, learning_rate=0.0, random_state=0).fit(X, y)
    assert np.all(est.logits_ == 0)
    curve = np.array(est.learning_curve_)
    # a uniform policy: the two halves agree within sampling noise
    assert abs(curve[:100].mean() - curve[100:].mean()) < 0.1


def test_converges_at_tabular_step_size():
    curve = train_toy_policy(seed=0, iterations=300, learning_rate=1.0)
    assert np.mean(curve[-20:]) >= 0.9


def test_estimator_api():
    X, y = make_toy_environment(1)
    est = ToyRolePolicy(n_iterations=150, learning_rate=1.0, random_state=1)
    assert clone(est).get_params() == est.get_params()
    est.fit(X, y)
    assert est.predict(X).shape == y.shape
    np.testing.assert_allclose(est.predict_proba(X).sum(axis=-1), 1.0)
    assert est.score(X) == pytest.approx(1.0)


def test_fit_validates_inputs():
    with pytest.raises(ValueError):
        ToyRolePolicy().fit(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ToyRolePolicy(n_roles=3).fit([[0]], [[5, 1]])


def test_seeded_training_is_reproducible():
    a = train_toy_policy(seed=2, iterations=30, learning_rate=1.0)
    b = train_toy_policy(seed=2, iterations=30, learning_rate=1.0)
    assert a == b
