"""MILE iteration, run loop and trace emission.

Each agent keeps its current and previous iterate.  At a communication step
(``t mod tau == 0``) it sends the single vector

    m_i(t) = 2 x_i(t) - x_i(t-1) - alpha g_i(t) + alpha g_i(t-1)

and mixes the received messages with ``W_tilde = (1 - xi) I + xi W``; at every
other step it simply applies ``x_i(t+1) = m_i(t)``.  Because ``W_tilde`` is
doubly stochastic this telescopes to the exact average dynamics
``xbar(t+1) = xbar(t) - alpha gbar(t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .errors import ConfigInvalid, Diverged, NonFiniteInput
from .lifting import consensus_identity_error
from .problems import HeteroQuadratic, NoiseModel, Problem, stochastic_gradients
from .topology import (
    EffectiveMatrix,
    MixingMatrix,
    TopologySpec,
    build_metropolis_weights,
    damped_matrix,
    default_xi,
    effective_matrix,
    is_communication_step,
    path,
)

ALGORITHMS = ("mile", "naive_extra_local", "local_gd", "gt_local")
INIT_KINDS = ("normal", "zeros")
DIVERGENCE_SENTINEL = 1e12

# memory roles for per-agent state fields; "derived" fields are recomputable
# from stored iterates in exact mode and so do not count toward memory
ITERATE = {"memory": "iterate"}
AUXILIARY = {"memory": "auxiliary"}
DERIVED = {"memory": "derived"}


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a single run.

    ``xi=None`` resolves to ``1/(tau+3)``; ``naive_extra_local`` always mixes
    with the raw ``W`` (``xi = 1``).  Total iterations ``T = tau + tau * rounds``.
    """

    alpha: float
    tau: int = 1
    xi: float | None = None
    rounds: int = 1
    sigma: float = 0.0
    noise: str = "gaussian_iid"
    seed: int = 0
    algorithm: str = "mile"
    init: str = "normal"
    redraw_prev_gradient: bool = False

    def validate(self) -> RunConfig:
        if self.algorithm not in ALGORITHMS:
            raise ConfigInvalid(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not (isinstance(self.alpha, (int, float)) and math.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigInvalid(f"alpha must be a positive finite number, got {self.alpha!r}")
        if not (isinstance(self.tau, int) and self.tau >= 1):
            raise ConfigInvalid(f"tau must be a positive integer, got {self.tau!r}")
        if not (isinstance(self.rounds, int) and self.rounds >= 1):
            raise ConfigInvalid(f"rounds must be a positive integer, got {self.rounds!r}")
        if not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ConfigInvalid(f"sigma must be non-negative, got {self.sigma!r}")
        if self.init not in INIT_KINDS:
            raise ConfigInvalid(f"init must be one of {INIT_KINDS}, got {self.init!r}")
        NoiseModel(self.sigma, self.noise)
        xi = self.resolved_xi
        if self.algorithm == "mile":
            high = 2 / (self.tau + 3)
            if not (0 < xi < high):
                raise ConfigInvalid(f"xi={xi!r} outside (0, {high}) for algorithm=mile")
        elif self.algorithm == "naive_extra_local":
            if self.xi is not None and self.xi != 1.0:
                raise ConfigInvalid("naive_extra_local mixes with W itself; xi must be unset or 1")
        elif not (0 < xi <= 1):
            raise ConfigInvalid(f"xi must lie in (0, 1], got {xi!r}")
        return self

    @property
    def resolved_xi(self) -> float:
        if self.algorithm == "naive_extra_local":
            return 1.0
        return default_xi(self.tau) if self.xi is None else float(self.xi)

    @property
    def total_iterations(self) -> int:
        return self.tau + self.tau * self.rounds

    @property
    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.sigma, self.noise)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["xi_resolved"] = self.resolved_xi
        d["total_iterations"] = self.total_iterations
        return d


@dataclass(frozen=True)
class NetworkState:
    """MILE state after ``t`` iterations; ``g_prev`` is the gradient draw made at ``x_prev``."""

    x_curr: np.ndarray = field(metadata=ITERATE)
    x_prev: np.ndarray = field(metadata=ITERATE)
    g_prev: np.ndarray = field(metadata=DERIVED)
    t: int = 0


@dataclass(frozen=True)
class TraceRecord:
    t: int
    communicated: bool
    f_avg: float
    grad_norm_avg: float
    consensus_err: float
    avg_grad_of_states: float

    FIELDS = ("t", "communicated", "f_avg", "grad_norm_avg", "consensus_err", "avg_grad_of_states")



class CommCounter:
    """Instrumentation of mixing events: which step, how many arrays, how many cross-agent reads."""

    def __init__(self) -> None:
        self.events: list[tuple[int, int, int]] = []
        self._t: int | None = None
        self._vectors = 0
        self._reads = 0

    def begin(self, t: int) -> None:
        self._t, self._vectors, self._reads = t, 0, 0

    def mix(self, Wt: np.ndarray, A: np.ndarray) -> np.ndarray:
        off = Wt - np.diag(np.diag(Wt))
        self._vectors += 1
        self._reads += int(np.count_nonzero(off))
        return Wt @ A

    def end(self) -> None:
        if self._vectors:
            self.events.append((self._t, self._vectors, self._reads))

    def vectors_per_round(self) -> int:
        counts = {v for _, v, _ in self.events}
        if len(counts) > 1:
            raise RuntimeError(f"inconsistent vectors per communication: {sorted(counts)}")
        return counts.pop() if counts else 0


def consensus_err(X: np.ndarray) -> float:
    """``(1/N) sum_i ||x_i - xbar||^2``."""
    X = np.asarray(X, dtype=float)
    return float(np.sum((X - X.mean(axis=0)) ** 2) / X.shape[0])


def make_record(problem: Problem, X: np.ndarray, t: int, communicated: bool) -> TraceRecord:
    N = X.shape[0]
    xbar = X.mean(axis=0)
    tiled = np.broadcast_to(xbar, X.shape)
    f_avg = float(np.mean(problem.values(tiled)))
    grad_bar = problem.gradients(tiled).mean(axis=0)
    g_states = problem.gradients(X).mean(axis=0)
    return TraceRecord(
        int(t), bool(communicated), f_avg, float(grad_bar @ grad_bar), consensus_err(X) if N > 1 else 0.0,
        float(g_states @ g_states),
    )


# ---------------------------------------------------------------------------
# MILE


def _check_state_input(X: np.ndarray, problem: Problem) -> np.ndarray:
    X = np.array(X, dtype=float)
    if X.shape != (problem.n_agents, problem.n_dim):
        raise ConfigInvalid(f"initial state shape {X.shape} != ({problem.n_agents}, {problem.n_dim})")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("initial state contains non-finite entries")
    return X


def initialize(problem: Problem, x_minus1: np.ndarray, config: RunConfig,
               rng: np.random.Generator | None = None) -> NetworkState:
    """``x(0) = x(-1) - alpha g(-1)``; the draw ``g(-1)`` is cached for the first step."""
    config.validate()
    X = _check_state_input(x_minus1, problem)
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    g = stochastic_gradients(problem, X, config.noise_model, rng)
    return NetworkState(X - config.alpha * g, X, g, 0)


def _check_divergence(X: np.ndarray, t: int) -> None:
    m = float(np.max(np.abs(X))) if np.all(np.isfinite(X)) else math.inf
    if m > DIVERGENCE_SENTINEL:
        raise Diverged(t, m)


def step(state: NetworkState, problem: Problem, mixing: EffectiveMatrix, config: RunConfig,
         rng: np.random.Generator, counter: CommCounter | None = None) -> NetworkState:
    """One MILE iteration ``t -> t+1``.

    Raises:
        Diverged: some entry of ``x(t+1)`` exceeds the sentinel.
    """
    a = config.alpha
    g = stochastic_gradients(problem, state.x_curr, config.noise_model, rng)
    g_prev = state.g_prev
    if config.redraw_prev_gradient and config.sigma > 0:
        g_prev = stochastic_gradients(problem, state.x_prev, config.noise_model, rng)
    msg = 2 * state.x_curr - state.x_prev - a * g + a * g_prev
    if is_communication_step(state.t, config.tau):
        counter = counter or CommCounter()
        counter.begin(state.t)
        x_new = counter.mix(mixing.W_tilde, msg)
        counter.end()
    else:
        x_new = msg
    _check_divergence(x_new, state.t + 1)
    return NetworkState(x_new, state.x_curr, g, state.t + 1)


# ---------------------------------------------------------------------------
# generic run loop


@dataclass(frozen=True)
class AlgorithmSpec:
    name: str
    init: Callable
    step: Callable
    state_type: type
    # gradient used at step t, read from the post-step state (for the average-dynamics residual)
    gradient_used: Callable


def _mile_spec() -> AlgorithmSpec:
    return AlgorithmSpec("mile", initialize, step, NetworkState, lambda s: s.g_prev)


def algorithm_registry() -> dict[str, AlgorithmSpec]:
    from . import baselines

    reg = {"mile": _mile_spec()}
    reg.update(baselines.registry())
    return reg


def resolve_mixing(W: MixingMatrix, config: RunConfig) -> EffectiveMatrix:
    if config.algorithm == "mile":
        return effective_matrix(W, config.resolved_xi, config.tau)
    return damped_matrix(W, config.resolved_xi, config.tau)


def default_initial_state(problem: Problem, config: RunConfig) -> np.ndarray:
    shape = (problem.n_agents, problem.n_dim)
    if config.init == "zeros":
        return np.zeros(shape)
    # separate stream from the gradient noise so sigma does not change x(-1)
    return np.random.default_rng([config.seed, 1]).standard_normal(shape)


@dataclass
class RunResult:
    """Trace rows ``t = 0..T-1`` (metrics of ``X(t)``) plus the final state ``X(T)``."""

    config: RunConfig
    trace: list[TraceRecord]
    final: TraceRecord | None
    final_state: object
    diverged: bool
    diverged_at: int | None
    x0: np.ndarray
    x1: np.ndarray | None
    mean_grad0_sq: float
    avg_dynamics_residual: float
    tracking_residual: float | None
    spectral_error: float | None
    counter: CommCounter
    xi: float
    notes: list[str] = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.config.total_iterations

    def communication_times(self) -> list[int]:
        return [r.t for r in self.trace if r.communicated]


def run(problem: Problem, topology: TopologySpec | MixingMatrix, config: RunConfig,
        x_minus1: np.ndarray | None = None, *, diagnostics: str = "basic") -> RunResult:
    """Execute ``T = tau + tau * rounds`` iterations of the configured algorithm.

    Divergence does not raise: the partial trace is returned with
    ``diverged=True`` and ``diverged_at`` set.  ``diagnostics="spectral"``
    additionally checks the mode-coordinate identities at every round
    boundary and records the worst relative error.
    """
    config.validate()
    if diagnostics not in ("basic", "spectral"):
        raise ConfigInvalid(f"diagnostics must be 'basic' or 'spectral', got {diagnostics!r}")
    W = topology if isinstance(topology, MixingMatrix) else build_metropolis_weights(topology)
    if W.n_agents != problem.n_agents:
        raise ConfigInvalid(f"topology has {W.n_agents} agents, problem has {problem.n_agents}")
    mixing = resolve_mixing(W, config)
    spec = algorithm_registry()[config.algorithm]
    rng = np.random.default_rng(config.seed)
    if x_minus1 is None:
        x_minus1 = default_initial_state(problem, config)

    state = spec.init(problem, x_minus1, config, rng)
    counter = CommCounter()
    T = config.total_iterations
    tau = config.tau
    trace: list[TraceRecord] = []
    x0 = state.x_curr.copy()
    x1 = None
    g0 = problem.gradients(x0).mean(axis=0)
    worst_avg = 0.0
    worst_track = 0.0 if hasattr(state, "correction") else None
    worst_spec = 0.0 if diagnostics == "spectral" else None
    diverged_at = None
    P = W.P

    for t in range(T):
        X = state.x_curr
        trace.append(make_record(problem, X, t, is_communication_step(t, tau)))
        if worst_spec is not None and (t % tau == 0 or t <= 1):
            worst_spec = max(worst_spec, *consensus_identity_error(X, P))
        xbar = X.mean(axis=0)
        try:
            state = spec.step(state, problem, mixing, config, rng, counter)
        except Diverged as exc:
            diverged_at = exc.t
            break
        if t == 0:
            x1 = state.x_curr.copy()
        gbar = spec.gradient_used(state).mean(axis=0)
        resid = np.linalg.norm(state.x_curr.mean(axis=0) - xbar + config.alpha * gbar)
        worst_avg = max(worst_avg, float(resid / (1 + np.linalg.norm(xbar))))
        if worst_track is not None:
            worst_track = max(worst_track, float(np.max(np.abs(state.correction.mean(axis=0)))))

    final = None
    if diverged_at is None:
        final = make_record(problem, state.x_curr, T, False)
        if worst_spec is not None:
            worst_spec = max(worst_spec, *consensus_identity_error(state.x_curr, P))
    return RunResult(
        config, trace, final, state, diverged_at is not None, diverged_at, x0, x1, float(g0 @ g0),
        worst_avg, worst_track, worst_spec, counter, mixing.xi,
    )


# ---------------------------------------------------------------------------
# resource accounting


@dataclass(frozen=True)
class ResourceReport:
    algorithm: str
    comm: int
    mem: int
    stored_fields: tuple[str, ...]
    exchanged_per_round: int

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "comm": self.comm, "mem": self.mem,
                "stored_fields": list(self.stored_fields)}


def stored_vectors(state_type: type) -> tuple[str, ...]:
    """Per-agent vectors a state type keeps between iterations (derived caches excluded)."""
    return tuple(f.name for f in fields(state_type) if f.metadata.get("memory") in ("iterate", "auxiliary"))


def message_size_accounting(config: RunConfig | str) -> ResourceReport:
    """Count exchanged and stored vectors by running one instrumented round.

    A two-agent path with a scalar quadratic is stepped through two full
    periods; the number of arrays passed through the mixing operator at each
    communication step gives the per-edge-direction message count, and the
    state type's field tags give the stored-vector count.
    """
    name = config if isinstance(config, str) else config.algorithm
    tau = 2 if isinstance(config, str) else config.tau
    cfg = RunConfig(alpha=0.1, tau=tau, rounds=1, algorithm=name)
    problem = HeteroQuadratic(np.array([[1.0], [-1.0]]))
    W = build_metropolis_weights(path(2))
    spec = algorithm_registry()[name]
    mixing = resolve_mixing(W, cfg)
    rng = np.random.default_rng(0)
    state = spec.init(problem, np.array([[0.5], [0.0]]), cfg, rng)
    counter = CommCounter()
    for _ in range(cfg.total_iterations):
        state = spec.step(state, problem, mixing, cfg, rng, counter)
    stored = stored_vectors(spec.state_type)
    return ResourceReport(name, counter.vectors_per_round(), len(stored), stored, counter.vectors_per_round())
