"""Comparison algorithms on MILE's schedule and trace format.

* ``naive_extra_local``: the MILE recursion mixed with ``W`` itself (``xi = 1``).
* ``local_gd``: local gradient steps with periodic averaging by ``W_tilde``.
* ``gt_local``: gradient tracking with local steps.  Each agent keeps its
  iterate, a round-start anchor and a correction ``c_i`` (``sum_i c_i = 0``);
  it descends along the tracker ``g_i + c_i`` and at communication mixes both
  its iterate and its round-averaged direction, correcting ``c_i`` with the
  disagreement of the latter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    AUXILIARY,
    ITERATE,
    AlgorithmSpec,
    CommCounter,
    NetworkState,
    RunConfig,
    _check_divergence,
    _check_state_input,
    initialize,
    step,
)
from .problems import Problem, stochastic_gradients
from .topology import EffectiveMatrix, is_communication_step


def step_naive_extra_local(state: NetworkState, problem: Problem, W: EffectiveMatrix, config: RunConfig,
                           rng: np.random.Generator, counter: CommCounter | None = None) -> NetworkState:
    """MILE's update with ``W(t) = W`` at communication steps; no ``xi`` damping, no range check."""
    return step(state, problem, W, config, rng, counter)


@dataclass(frozen=True)
class LocalState:
    x_curr: np.ndarray = field(metadata=ITERATE)
    g_prev: np.ndarray | None = None
    t: int = 0


def init_local_gd(problem: Problem, x_minus1: np.ndarray, config: RunConfig,
                  rng: np.random.Generator | None = None) -> LocalState:
    return LocalState(_check_state_input(x_minus1, problem), None, 0)


def step_local_gd(state: LocalState, problem: Problem, W: EffectiveMatrix, config: RunConfig,
                  rng: np.random.Generator, counter: CommCounter | None = None) -> LocalState:
    """``x_i <- x_i - alpha g_i``, followed by ``X <- W_tilde X`` at communication steps."""
    g = stochastic_gradients(problem, state.x_curr, config.noise_model, rng)
    x_new = state.x_curr - config.alpha * g
    if is_communication_step(state.t, config.tau):
        counter = counter or CommCounter()
        counter.begin(state.t)
        x_new = counter.mix(W.W_tilde, x_new)
        counter.end()
    _check_divergence(x_new, state.t + 1)
    return LocalState(x_new, g, state.t + 1)


@dataclass(frozen=True)
class TrackedState:
    """``tracker`` is the search direction ``g_i + correction_i`` of the last step."""

    x_curr: np.ndarray = field(metadata=ITERATE)
    anchor: np.ndarray = field(metadata=ITERATE)
    correction: np.ndarray = field(metadata=AUXILIARY)
    tracker: np.ndarray | None = None
    g_prev: np.ndarray | None = None
    t: int = 0


def init_gt_local(problem: Problem, x_minus1: np.ndarray, config: RunConfig,
                  rng: np.random.Generator | None = None) -> TrackedState:
    X = _check_state_input(x_minus1, problem)
    return TrackedState(X, X.copy(), np.zeros_like(X), None, None, 0)


def step_gt_local(state: TrackedState, problem: Problem, W: EffectiveMatrix, config: RunConfig,
                  rng: np.random.Generator, counter: CommCounter | None = None) -> TrackedState:
    """One iteration of gradient tracking with local steps.

    Every step moves along ``g_i + c_i``.  At a communication step the agent
    also forms its average direction over the steps since the anchor,
    ``delta_i = (anchor_i - x_i(t+1)) / (alpha * steps)``, sends ``x_i(t+1)``
    and ``delta_i``, and updates ``c_i <- c_i - delta_i + (W_tilde delta)_i``,
    which keeps ``mean_i c_i = 0`` so the tracker mean equals the mean gradient.
    """
    a = config.alpha
    g = stochastic_gradients(problem, state.x_curr, config.noise_model, rng)
    direction = g + state.correction
    x_new = state.x_curr - a * direction
    anchor, corr = state.anchor, state.correction
    if is_communication_step(state.t, config.tau):
        steps = 1 if state.t == 0 else config.tau
        delta = (state.anchor - x_new) / (a * steps)
        counter = counter or CommCounter()
        counter.begin(state.t)
        x_new = counter.mix(W.W_tilde, x_new)
        mixed_delta = counter.mix(W.W_tilde, delta)
        counter.end()
        corr = corr - delta + mixed_delta
        anchor = x_new
    _check_divergence(x_new, state.t + 1)
    return TrackedState(x_new, anchor, corr, direction, g, state.t + 1)


def registry() -> dict[str, AlgorithmSpec]:
    return {
        "naive_extra_local": AlgorithmSpec("naive_extra_local", initialize, step_naive_extra_local, NetworkState,
                                           lambda s: s.g_prev),
        "local_gd": AlgorithmSpec("local_gd", init_local_gd, step_local_gd, LocalState, lambda s: s.g_prev),
        "gt_local": AlgorithmSpec("gt_local", init_gt_local, step_gt_local, TrackedState, lambda s: s.tracker),
    }
