import numpy as np
import pytest

from mile.baselines import init_gt_local, step_gt_local, step_local_gd
from mile.core import RunConfig, run
from mile.problems import HeteroQuadratic
from mile.topology import TopologySpec, build_metropolis_weights, complete, damped_matrix, ring


def _quad(h=3.0, seed=0):
    return HeteroQuadratic.generate(8, 4, h, seed=seed)


def test_naive_with_tau_one_converges():
    p = _quad()
    L = p.smoothness_constant()
    res = run(p, ring(8), RunConfig(alpha=0.3 / L, tau=1, rounds=3000, algorithm="naive_extra_local"))
    assert not res.diverged
    assert np.max(np.abs(res.final_state.x_curr - p.minimizer())) < 1e-8


def test_naive_diverges_on_heterogeneous_instance():
    p = HeteroQuadratic.generate(10, 5, 5.0, seed=0)
    res = run(p, ring(10), RunConfig(alpha=0.02, tau=10, rounds=200, algorithm="naive_extra_local"))
    assert res.diverged and res.diverged_at < 200 * 10


def test_naive_stationary_without_heterogeneity():
    c = np.tile([1.0, 2.0], (6, 1))
    res = run(HeteroQuadratic(c), ring(6), RunConfig(alpha=0.1, tau=10, rounds=50, algorithm="naive_extra_local"),
              c.copy())
    np.testing.assert_array_equal(res.final_state.x_curr, c)


def test_local_gd_single_agent_is_gradient_descent():
    p = HeteroQuadratic(np.array([[2.0, -1.0]]))
    res = run(p, TopologySpec(1, frozenset(), "complete"), RunConfig(alpha=0.1, tau=3, rounds=4, algorithm="local_gd"),
              np.zeros((1, 2)))
    x = np.zeros(2)
    for _ in range(15):
        x = x - 0.1 * (x - p.centers[0])
    np.testing.assert_allclose(res.final_state.x_curr[0], x, rtol=1e-14)


def test_local_gd_has_drift_bias():
    p = _quad(3.0)
    res = run(p, ring(8), RunConfig(alpha=0.1, tau=5, rounds=3000, algorithm="local_gd"))
    X = res.final_state.x_curr
    residual = np.linalg.norm(p.global_gradient(X.mean(axis=0)))
    dist = np.max(np.linalg.norm(X - p.minimizer(), axis=1))
    # fixed point away from the minimizer: a measurable drift bias
    assert dist > 1e-2
    assert res.final.consensus_err > 1e-4
    assert residual >= 0.0


def test_local_gd_tau_one_average_dynamics():
    res = run(_quad(), ring(8), RunConfig(alpha=0.1, tau=1, rounds=50, algorithm="local_gd"))
    assert res.avg_dynamics_residual < 1e-12


def test_local_gd_step_mixes_only_on_schedule():
    p = _quad()
    W = damped_matrix(build_metropolis_weights(ring(8)), 0.5)
    cfg = RunConfig(alpha=0.1, tau=2, algorithm="local_gd")
    from mile.baselines import LocalState
    s = LocalState(np.ones((8, 4)), None, 1)
    s2 = step_local_gd(s, p, W, cfg, np.random.default_rng(0))
    np.testing.assert_allclose(s2.x_curr, s.x_curr - 0.1 * p.gradients(s.x_curr))


def test_gt_local_converges_to_minimizer():
    p = _quad(3.0)
    L = p.smoothness_constant()
    res = run(p, complete(8), RunConfig(alpha=0.05 / L, tau=5, rounds=2000, algorithm="gt_local"))
    assert not res.diverged
    assert np.max(np.abs(res.final_state.x_curr - p.minimizer())) < 1e-5
    assert res.tracking_residual < 1e-10
    assert res.avg_dynamics_residual < 1e-10


def test_gt_local_disagreement_shrinks_on_ring():
    p = _quad(3.0)
    L = p.smoothness_constant()
    short = run(p, ring(8), RunConfig(alpha=0.05 / L, tau=5, rounds=500, algorithm="gt_local"))
    long = run(p, ring(8), RunConfig(alpha=0.05 / L, tau=5, rounds=3000, algorithm="gt_local"))
    assert long.final.consensus_err < 1e-2 * short.final.consensus_err
    np.testing.assert_allclose(long.final_state.x_curr.mean(axis=0), p.minimizer(), atol=1e-12)


def test_gt_local_tracker_equals_common_gradient_for_identical_agents():
    c = np.tile([1.0, -1.0, 0.5], (5, 1))
    p = HeteroQuadratic(c)
    W = damped_matrix(build_metropolis_weights(ring(5)), 0.2)
    cfg = RunConfig(alpha=0.1, tau=3, algorithm="gt_local")
    rng = np.random.default_rng(0)
    s = init_gt_local(p, np.zeros((5, 3)), cfg)
    for _ in range(7):
        s = step_gt_local(s, p, W, cfg, rng)
        np.testing.assert_allclose(s.tracker, np.tile(s.g_prev[0], (5, 1)), atol=1e-14)
        np.testing.assert_allclose(s.correction, 0.0, atol=1e-14)


def test_gt_local_tracking_preserved_with_noise():
    res = run(_quad(), ring(8), RunConfig(alpha=0.02, tau=4, rounds=50, sigma=1.0, algorithm="gt_local"))
    assert res.tracking_residual < 1e-10


@pytest.mark.parametrize("alg", ["mile", "naive_extra_local", "local_gd", "gt_local"])
def test_identical_schedule_and_schema(alg):
    res = run(_quad(1.0), ring(8), RunConfig(alpha=0.01, tau=3, rounds=4, algorithm=alg))
    assert res.communication_times() == [0, 3, 6, 9, 12]
    assert all(r.communicated == (r.t % 3 == 0) for r in res.trace)
    assert res.avg_dynamics_residual < 1e-10
