"""Built-in oracle suites: closed form vs recursion, lifted powers, spectral identities, gradients."""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass
from unittest import mock

import numpy as np

from .. import lifting
from ..core import RunConfig, run
from ..problems import HeteroQuadratic, NonconvexLogistic, SoftmaxRegression
from ..topology import build_metropolis_weights, erdos_renyi, path, ring

MUTATIONS = ("f22_sign",)


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: worst {self.worst:.3g} (tol {self.tolerance:g}) in {self.seconds:.2f}s" + (
            f" - {self.detail}" if self.detail else "")


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def lemma_suite(rng: np.random.Generator, n: int = 200) -> float:
    worst = 0.0
    for _ in range(n):
        tau = int(rng.integers(1, 9))
        rho = rng.uniform((tau - 1) / (tau + 3) + 0.01, 0.99)
        b = rng.standard_normal(10 * tau)
        a0, a1 = rng.standard_normal(2)
        cf = lifting.closed_form_sequence(rho, tau, a0, a1, b)
        worst = max(worst, _rel(cf, lifting.simulate_recursion(rho, tau, a0, a1, b)))
    return worst


def power_suite(rng: np.random.Generator, n: int = 100) -> tuple[float, float]:
    worst, vieta = 0.0, 0.0
    for _ in range(n):
        tau = int(rng.integers(1, 9))
        rho = rng.uniform((tau - 1) / (tau + 3) + 0.01, 0.99)
        F = lifting.lifted_matrix(rho, tau)
        M = np.eye(2)
        for s in range(51):
            worst = max(worst, _rel(lifting.lifted_matrix_power(rho, tau, s), M))
            M = M @ F
        vieta = max(vieta, abs(max(abs(np.linalg.eigvals(F))) - math.sqrt(rho)))
    return worst, vieta


def identity_suite(rng: np.random.Generator) -> float:
    worst = 0.0
    for topo in (ring(10), path(7), erdos_renyi(12, 0.4, seed=int(rng.integers(1 << 31)))):
        P = build_metropolis_weights(topo).P
        for _ in range(20):
            X = rng.standard_normal((topo.n_agents, 5)) + rng.standard_normal(5)
            worst = max(worst, *lifting.consensus_identity_error(X, P))
    return worst


def gradient_suite(rng: np.random.Generator, n: int = 20) -> float:
    problems = [
        HeteroQuadratic.generate(4, 5, 1.0, seed=1, curvature="random"),
        NonconvexLogistic.generate(4, 5, 1.0, seed=2),
        SoftmaxRegression.generate(4, 1.0, seed=3),
    ]
    worst = 0.0
    for p in problems:
        for _ in range(n):
            X = rng.standard_normal((p.n_agents, p.n_dim))
            G = p.gradients(X)
            h = 1e-6 * (1 + np.linalg.norm(X, axis=1, keepdims=True))
            fd = np.zeros_like(X)
            for k in range(p.n_dim):
                E = np.zeros_like(X)
                E[:, k] = h[:, 0]
                fd[:, k] = (p.values(X + E) - p.values(X - E)) / (2 * h[:, 0])
            worst = max(worst, float(np.max(np.linalg.norm(fd - G, axis=1) / np.maximum(np.linalg.norm(G, axis=1), 1))))
    return worst


def dynamics_suite() -> float:
    p = HeteroQuadratic.generate(6, 3, 2.0, seed=4)
    res = run(p, ring(6), RunConfig(alpha=0.05, tau=4, rounds=30, sigma=0.5, seed=5), diagnostics="spectral")
    return max(res.avg_dynamics_residual, res.spectral_error or 0.0)


def _mutation(name: str | None):
    if name is None:
        return contextlib.nullcontext()
    if name == "f22_sign":
        original = lifting._f22
        return mock.patch.object(lifting, "_f22", lambda s, sys_: -original(s, sys_))
    raise ValueError(f"unknown mutation {name!r}; choose from {MUTATIONS}")


def run_selftest(seed: int = 0, mutate: str | None = None) -> list[SuiteResult]:
    """Run every suite; ``mutate`` injects a known fault to prove the oracles bite."""
    rng = np.random.default_rng(seed)
    results = []
    with _mutation(mutate):
        t0 = time.perf_counter()
        w = lemma_suite(rng)
        results.append(SuiteResult("closed form vs direct recursion", w < 1e-9, w, 1e-9, time.perf_counter() - t0))
        t0 = time.perf_counter()
        w, v = power_suite(rng)
        dt = time.perf_counter() - t0
        results.append(SuiteResult("lifted power vs matrix multiplication", w < 1e-9, w, 1e-9, dt))
        results.append(SuiteResult("spectral radius equals sqrt(rho)", v < 1e-10, v, 1e-10, dt))
        t0 = time.perf_counter()
        w = identity_suite(rng)
        results.append(SuiteResult("consensus identity in mode coordinates", w < 1e-9, w, 1e-9,
                                   time.perf_counter() - t0))
        t0 = time.perf_counter()
        w = gradient_suite(rng)
        results.append(SuiteResult("gradients vs central differences", w < 1e-6, w, 1e-6, time.perf_counter() - t0))
        t0 = time.perf_counter()
        w = dynamics_suite()
        results.append(SuiteResult("exact average dynamics", w < 1e-10, w, 1e-10, time.perf_counter() - t0))
    return results
