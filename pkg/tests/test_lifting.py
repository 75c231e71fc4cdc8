import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mile import lifting
from mile.core import RunConfig, run
from mile.errors import DimensionMismatch, ModeMismatch, RhoOutOfRange, StepsizeTooLarge
from mile.lifting import (
    LiftedPeriodicSystem,
    closed_form_sequence,
    compute_constants,
    consensus_identity_error,
    inverse_spectral_transform,
    lifted_matrix,
    lifted_matrix_power,
    simulate_recursion,
    spectral_transform,
    stability_report,
    stepsize_bounds,
    theorem_bound,
)
from mile.problems import HeteroQuadratic
from mile.topology import build_metropolis_weights, default_xi, erdos_renyi, path, ring


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def _admissible_rho(draw_u, tau):
    low = (tau - 1) / (tau + 3)
    return low + 0.01 + draw_u * (0.99 - low - 0.01)


@st.composite
def lemma_inputs(draw):
    tau = draw(st.integers(1, 8))
    rho = _admissible_rho(draw(st.floats(0, 1)), tau)
    seed = draw(st.integers(0, 2 ** 32 - 1))
    return tau, rho, seed


# closed form of the periodic recursion

def test_zero_input_gives_zero_sequence():
    np.testing.assert_array_equal(closed_form_sequence(0.7, 3, 0.0, 0.0, np.zeros(30)), 0.0)


def test_tau_one_quarter_rho_angles():
    sys_ = LiftedPeriodicSystem.build(0.25, 1)
    assert sys_.cos_theta == pytest.approx(0.5, abs=1e-15)
    assert sys_.theta == pytest.approx(math.pi / 3, abs=1e-15)
    F = lifted_matrix(0.25, 1)
    np.testing.assert_allclose(F, [[0.5, -0.25], [1.0, 0.0]])
    mu = np.linalg.eigvals(F)
    np.testing.assert_allclose(np.abs(mu), 0.5, atol=1e-15)
    assert abs(np.angle(mu[0])) == pytest.approx(math.pi / 3, abs=1e-14)


def test_closed_form_matches_recursion_200_tuples():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        tau = int(rng.integers(1, 9))
        rho = _admissible_rho(rng.uniform(), tau)
        b = rng.standard_normal(10 * tau)
        a0, a1 = rng.standard_normal(2)
        worst = max(worst, _rel(closed_form_sequence(rho, tau, a0, a1, b), simulate_recursion(rho, tau, a0, a1, b)))
    assert worst < 1e-9


@given(lemma_inputs())
def test_closed_form_property(inp):
    tau, rho, seed = inp
    rng = np.random.default_rng(seed)
    b = rng.standard_normal(10 * tau)
    a0, a1 = rng.standard_normal(2)
    assert _rel(closed_form_sequence(rho, tau, a0, a1, b), simulate_recursion(rho, tau, a0, a1, b)) < 1e-9


def test_closed_form_vector_inputs():
    rng = np.random.default_rng(1)
    b = rng.standard_normal((40, 3))
    a0, a1 = rng.standard_normal(3), rng.standard_normal(3)
    assert _rel(closed_form_sequence(0.8, 4, a0, a1, b), simulate_recursion(0.8, 4, a0, a1, b)) < 1e-9


def test_closed_form_rejects_rho():
    with pytest.raises(RhoOutOfRange):
        closed_form_sequence(0.5, 5, 0, 0, np.zeros(10))  # low end (5-1)/(5+3) = 0.5 is excluded
    with pytest.raises(RhoOutOfRange):
        closed_form_sequence(1.0, 2, 0, 0, np.zeros(10))


def test_degenerate_branch_matches_recursion():
    # near rho -> 1 the discriminant vanishes; the Chebyshev form avoids dividing by sin(theta)
    rho = 1 - 1e-12
    sys_ = LiftedPeriodicSystem.build(rho, 1)
    assert sys_.degenerate
    b = np.random.default_rng(2).standard_normal(30)
    assert _rel(closed_form_sequence(rho, 1, 0.3, -0.2, b), simulate_recursion(rho, 1, 0.3, -0.2, b)) < 1e-9


# lifted matrix powers

def test_power_zero_and_one():
    np.testing.assert_allclose(lifted_matrix_power(0.6, 4, 0), np.eye(2), atol=1e-15)
    np.testing.assert_allclose(lifted_matrix_power(0.6, 4, 1), lifted_matrix(0.6, 4), rtol=1e-12, atol=1e-12)


def test_power_twenty():
    F = lifted_matrix(0.6, 4)
    assert _rel(lifted_matrix_power(0.6, 4, 20), np.linalg.matrix_power(F, 20)) < 1e-9


@given(lemma_inputs(), st.integers(0, 50))
def test_power_property(inp, s):
    tau, rho, _ = inp
    F = lifted_matrix(rho, tau)
    assert _rel(lifted_matrix_power(rho, tau, s), np.linalg.matrix_power(F, s)) < 1e-9
    assert abs(max(abs(np.linalg.eigvals(F))) - math.sqrt(rho)) < 1e-10


def test_power_rejects_negative():
    with pytest.raises(ValueError):
        lifted_matrix_power(0.6, 4, -1)


# stability

def test_stability_boundary_xi_rejected():
    lam = build_metropolis_weights(ring(10)).eigenvalues
    for tau in (1, 4, 10):
        rep = stability_report(2 / (tau + 3), tau, lam)
        assert not rep.xi_admissible and not rep.passed


def test_stability_xi_one_fails_on_ring():
    lam = build_metropolis_weights(ring(10)).eigenvalues
    rep = stability_report(1.0, 10, lam)
    assert not rep.passed
    assert rep.spectral_radius > 1


def test_stability_admissible_on_ring():
    lam = build_metropolis_weights(ring(10)).eigenvalues
    rep = stability_report(default_xi(10), 10, lam)
    assert rep.passed
    for m in rep.modes:
        assert m.in_interval and m.stable
        assert max(m.mu_abs) == pytest.approx(m.sqrt_rho, abs=1e-12)
        assert m.vieta_product == pytest.approx(m.rho, abs=1e-12)


@given(st.integers(1, 12), st.floats(0.01, 0.99), st.integers(3, 15), st.integers(0, 500),
       st.sampled_from(["ring", "path", "er"]))
def test_stability_certified_at_admissible_xi(tau, frac, N, seed, kind):
    topo = {"ring": lambda: ring(N), "path": lambda: path(N)}.get(kind)
    if topo is None:
        try:
            graph = erdos_renyi(N, 0.5, seed=seed)
        except Exception:
            return
    else:
        graph = topo()
    lam = build_metropolis_weights(graph).eigenvalues
    rep = stability_report(frac * 2 / (tau + 3), tau, lam)
    assert rep.passed
    for m in rep.modes:
        assert max(m.mu_abs) == pytest.approx(math.sqrt(m.rho), abs=1e-9)
        assert max(m.mu_abs) < 1


# spectral coordinates

def test_spectral_round_trip_and_identities(rng):
    P = build_metropolis_weights(ring(9)).P
    X = rng.standard_normal((9, 4))
    c = spectral_transform(X, P)
    np.testing.assert_allclose(inverse_spectral_transform(c, P), X, atol=1e-12)
    assert c.disagreement() == pytest.approx(np.sum((X - X.mean(0)) ** 2), rel=1e-9)
    np.testing.assert_allclose(c.Y[0], 3 * X.mean(0), atol=1e-12)
    assert max(consensus_identity_error(X, P)) < 1e-9


def test_consensus_state_has_no_disagreement():
    P = build_metropolis_weights(path(5)).P
    X = np.tile([1.5, -2.0], (5, 1))
    Y = spectral_transform(X, P).Y
    np.testing.assert_allclose(Y[1:], 0.0, atol=1e-14)
    np.testing.assert_allclose(Y[0], math.sqrt(5) * X[0], atol=1e-14)


def test_two_agent_hand_computation():
    P = build_metropolis_weights(path(2)).P
    x = np.array([0.3, -1.2, 2.0])
    Y = spectral_transform(np.vstack([x, -x]), P).Y
    sign = np.sign(P[0, 1])  # eigenvector orientation is arbitrary
    np.testing.assert_allclose(Y[1], sign * math.sqrt(2) * x, atol=1e-14)
    np.testing.assert_allclose(Y[0], 0.0, atol=1e-14)


def test_spectral_dimension_mismatch():
    P = np.eye(3)
    with pytest.raises(DimensionMismatch):
        spectral_transform(np.zeros((4, 2)), P)
    with pytest.raises(DimensionMismatch):
        inverse_spectral_transform(np.zeros((4, 2)), P)


# constants

def _ring_setup(N=10, tau=10):
    W = build_metropolis_weights(ring(N))
    X0 = np.random.default_rng(0).standard_normal((N, 3))
    Y = spectral_transform(X0, W.P).Y
    return W, Y


def test_b2_dual_evaluation_tau_one():
    # an independent evaluation of the same expression for tau = 1 on a two-mode spectrum
    xi, lam2 = 0.3, 0.2
    rho = 1 - xi + xi * lam2
    d = math.sqrt(4 * rho - 4 * rho ** 2)
    A1 = 2 / d
    A3 = max((2 * math.sqrt(rho) + 2) / d, 2 * math.sqrt(rho) * (1 + math.sqrt(rho)) / d)
    A4 = max(A1, A3)
    expected = 3 + 6 * rho ** 2 * A4 ** 2 / (2 * (1 - math.sqrt(rho)) ** 2)
    got = stepsize_bounds([1.0, lam2], xi, 1, 1.0)
    assert got["B2"] == pytest.approx(expected, rel=1e-13)
    assert got["alpha_exact"] == pytest.approx(1 / math.sqrt(5 * expected), rel=1e-13)
    assert got["alpha_stochastic"] == pytest.approx(1 / math.sqrt(13 * expected), rel=1e-13)


def test_constants_chains_at_default_stepsizes():
    W, Y = _ring_setup()
    xi = default_xi(10)
    b = stepsize_bounds(W.eigenvalues, xi, 10, 2.0)
    ce = compute_constants(W.eigenvalues, xi, 10, b["alpha_exact"], 2.0, Y, Y, mean_grad0_sq=0.5, mode="exact")
    assert all(ce.checks.values()), ce.checks
    assert ce.B3 >= (ce.alpha * ce.L) ** 2 * ce.B2 * (1 - 1e-12)
    cs = compute_constants(W.eigenvalues, xi, 10, b["alpha_stochastic"], 2.0, Y, Y, mean_grad0_sq=0.5,
                           mode="stochastic")
    assert all(cs.checks.values()), cs.checks
    for c in (ce, cs):
        for k in ("A1", "A2", "A3", "A4", "A5", "B1", "B2", "B3", "C1", "C2"):
            v = getattr(c, k)
            assert math.isfinite(v) and v > 0, k


def test_stepsize_too_large_is_mode_aware():
    W, Y = _ring_setup()
    xi = default_xi(10)
    b = stepsize_bounds(W.eigenvalues, xi, 10, 1.0)
    a = b["alpha_exact"]  # admissible for exact, but B4 < 0 there
    compute_constants(W.eigenvalues, xi, 10, a, 1.0, Y, Y, mode="exact")
    with pytest.raises(StepsizeTooLarge):
        compute_constants(W.eigenvalues, xi, 10, a, 1.0, Y, Y, mode="stochastic")
    with pytest.raises(StepsizeTooLarge):
        compute_constants(W.eigenvalues, xi, 10, 10 * a, 1.0, Y, Y, mode="exact")


def test_rho_near_one_warns_and_blows_up():
    lam = [1.0, 1 - 1e-10]
    Y = np.ones((2, 1))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        c = compute_constants(lam, 0.1, 1, 1e-30, 1.0, Y, Y)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)
    assert c.B1 > 1e10 and c.B2 > 1e20
    assert c.alpha_exact < 1e-10


def test_rho_out_of_range_rejected():
    lam = build_metropolis_weights(ring(10)).eigenvalues
    with pytest.raises(RhoOutOfRange):
        stepsize_bounds(lam, 1.0, 10, 1.0)


# theorem bounds

def _bound_run(rounds, tau=2, sigma=0.0):
    p = HeteroQuadratic.generate(4, 2, 1.0, seed=0)
    W = build_metropolis_weights(ring(4))
    xi = default_xi(tau)
    L = p.smoothness_constant()
    b = stepsize_bounds(W.eigenvalues, xi, tau, L)
    alpha = b["alpha_exact"] if sigma == 0 else b["alpha_stochastic"]
    res = run(p, W, RunConfig(alpha=alpha, tau=tau, rounds=rounds, sigma=sigma))
    mode = "exact" if sigma == 0 else "stochastic"
    c = compute_constants(W.eigenvalues, xi, tau, alpha, L, spectral_transform(res.x0, W.P).Y,
                          spectral_transform(res.x1, W.P).Y, mean_grad0_sq=res.mean_grad0_sq, mode=mode)
    xbar1 = res.x1.mean(0)
    f_bar1 = float(np.mean(p.values(np.broadcast_to(xbar1, res.x1.shape))))
    return res, c, f_bar1, p.lower_bound()


def test_theorem_one_rhs_halves_when_k_doubles():
    r1, c1, f1, fs = _bound_run(200)
    r2, c2, f2, _ = _bound_run(400)
    b1 = theorem_bound(r1.trace, c1, "exact_t1", f_bar1=f1, f_star=fs, final=r1.final)
    b2 = theorem_bound(r2.trace, c2, "exact_t1", f_bar1=f2, f_star=fs, final=r2.final)
    assert b1.satisfied and b2.satisfied
    assert b1.K == 200 and b2.K == 400
    assert 0.45 <= b2.rhs / b1.rhs <= 0.55


def test_zero_heterogeneity_stationary_start_lhs_zero():
    c = np.tile([0.5, -0.5], (4, 1))
    p = HeteroQuadratic(c)
    W = build_metropolis_weights(ring(4))
    xi = default_xi(2)
    b = stepsize_bounds(W.eigenvalues, xi, 2, 1.0)
    res = run(p, W, RunConfig(alpha=b["alpha_exact"], tau=2, rounds=5), c.copy())
    Y = spectral_transform(res.x0, W.P).Y
    const = compute_constants(W.eigenvalues, xi, 2, b["alpha_exact"], 1.0, Y, Y, mode="exact")
    for mode in ("exact_t1", "consensus_t2"):
        rep = theorem_bound(res.trace, const, mode, f_bar1=0.0, f_star=0.0, final=res.final)
        assert rep.lhs == 0.0 and rep.satisfied


def test_mode_mismatch():
    res, c, f1, fs = _bound_run(20, sigma=0.5)
    with pytest.raises(ModeMismatch):
        theorem_bound(res.trace, c, "exact_t1", f_bar1=f1, f_star=fs, sigma=0.5, final=res.final)
    rep = theorem_bound(res.trace, c, "stoch_t3", f_bar1=f1, f_star=fs, sigma=0.5, final=res.final)
    assert rep.terms["noise_linear"] > 0 and rep.satisfied


def test_mode_mismatch_on_large_stepsize():
    _, c, f1, fs = _bound_run(20)
    res = run(HeteroQuadratic.generate(4, 2, 1.0, seed=0), ring(4), RunConfig(alpha=0.1, tau=2, rounds=20))
    big = lifting.ConvergenceConstants(**{**c.__dict__, "alpha": 0.1})
    with pytest.raises(ModeMismatch):
        theorem_bound(res.trace, big, "exact_t1", f_bar1=f1, f_star=fs, final=res.final)
