"""Building runs from an experiment config, executing them and writing artifacts."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..core import RunConfig, RunResult, default_initial_state, message_size_accounting, run
from ..errors import ConfigInvalid, MileError, StepsizeTooLarge, TooFewPoints
from ..lifting import compute_constants, spectral_transform, stability_report, stepsize_bounds
from ..metrics import fit_rate, running_average_metrics
from ..problems import Problem, make_problem
from ..topology import MixingMatrix, build_metropolis_weights, default_xi, make_topology
from .config import ExperimentConfig, RunEntry
from .io import SIDECAR_SCHEMA, write_json, write_trace_csv

log = logging.getLogger(__name__)


def build_mixing(spec: dict) -> MixingMatrix:
    params = {k: v for k, v in spec.items() if k not in ("kind", "n_agents", "lazy")}
    if spec["kind"] == "custom" and isinstance(params.get("edges"), str):
        params["edge_file"] = params.pop("edges")
    topo = make_topology(spec["kind"], spec.get("n_agents"), **params)
    return build_metropolis_weights(topo, lazy=bool(spec.get("lazy", False)))


def build_problem(spec: dict, n_agents: int) -> Problem:
    params = {k: v for k, v in spec.items() if k not in ("kind", "n_dim")}
    return make_problem(spec["kind"], n_agents, spec.get("n_dim"), **params)


def initial_state(exp: ExperimentConfig, problem: Problem, cfg: RunConfig) -> np.ndarray:
    if exp.init.get("kind") == "file":
        X = np.loadtxt(exp.init["path"], ndmin=2)
        if X.shape != (problem.n_agents, problem.n_dim):
            raise ConfigInvalid(f"init file has shape {X.shape}, expected ({problem.n_agents}, {problem.n_dim})")
        return X
    return default_initial_state(problem, cfg)


def resolve_alpha(entry: RunEntry, W: MixingMatrix, problem: Problem) -> tuple[float, dict | None]:
    """Numeric stepsize for a run; ``"exact"`` and ``"stochastic"`` use MILE's admissible bounds.

    Baselines resolve the symbolic stepsizes with MILE's default ``xi`` so all
    algorithms in a comparison share the same ``alpha``.
    """
    cfg = entry.config
    if not isinstance(entry.alpha_spec, str):
        return float(entry.alpha_spec), None
    xi = cfg.resolved_xi if cfg.algorithm == "mile" else default_xi(cfg.tau)
    bounds = stepsize_bounds(W.eigenvalues, xi, cfg.tau, problem.smoothness_constant())
    if entry.alpha_spec == "exact":
        alpha = bounds["alpha_exact"]
        if entry.alpha_cap is not None:
            alpha = min(alpha, entry.alpha_cap)
    else:
        alpha = bounds["alpha_stochastic"]
    return float(alpha), bounds


@dataclass(frozen=True)
class PreparedRun:
    entry: RunEntry
    config: RunConfig
    bounds: dict | None


def prepare(exp: ExperimentConfig) -> tuple[MixingMatrix, Problem, list[PreparedRun]]:
    """Build shared objects and resolve every run before anything executes (fail fast)."""
    W = build_mixing(exp.topology)
    problem = build_problem(exp.problem, W.n_agents)
    prepared = []
    for e in exp.runs:
        alpha, bounds = resolve_alpha(e, W, problem)
        cfg = replace(e.config, alpha=alpha).validate()
        prepared.append(PreparedRun(e, cfg, bounds))
    return W, problem, prepared


def _f_at_mean(problem: Problem, X: np.ndarray) -> float:
    return float(np.mean(problem.values(np.broadcast_to(X.mean(axis=0), X.shape))))


def sidecar(exp: ExperimentConfig, prep: PreparedRun, W: MixingMatrix, problem: Problem, res: RunResult) -> dict:
    cfg = res.config
    L = problem.smoothness_constant()
    data = {
        "schema": SIDECAR_SCHEMA,
        "name": prep.entry.name,
        "algorithm": cfg.algorithm,
        "config": cfg.to_dict(),
        "alpha_spec": prep.entry.alpha_spec,
        "alpha": cfg.alpha,
        "xi": res.xi,
        "expect_diverge": prep.entry.expect_diverge,
        "diagnostics": exp.diagnostics,
        "experiment": {"topology": exp.topology, "problem": exp.problem, "init": exp.init,
                       "seed": exp.seed, "seed_policy": exp.seed_policy},
        "topology": W.summary(),
        "problem": problem.describe(),
        "L": L,
        "f_star": problem.lower_bound(),
        "stepsize_bounds": prep.bounds,
        "X0": res.x0,
        "X1": res.x1,
        "x0_fro_sq": float(np.sum(res.x0 ** 2)),
        "x1_fro_sq": None if res.x1 is None else float(np.sum(res.x1 ** 2)),
        "f_bar1": None if res.x1 is None else _f_at_mean(problem, res.x1),
        "mean_grad0_sq": res.mean_grad0_sq,
        "diverged": res.diverged,
        "diverged_at": res.diverged_at,
        "rows": len(res.trace),
        "final": None if res.final is None else res.final.__dict__,
        "final_state": None if res.final is None else getattr(res.final_state, "x_curr", None),
        "invariants": {
            "avg_dynamics_residual": res.avg_dynamics_residual,
            "tracking_residual": res.tracking_residual,
            "spectral_error": res.spectral_error,
            "cross_agent_reads_off_schedule": sum(r for t, _, r in res.counter.events if t % cfg.tau != 0),
            "communication_events": len(res.counter.events),
        },
        "resources": message_size_accounting(cfg).to_dict(),
    }
    if cfg.algorithm == "mile":
        data["stability"] = stability_report(res.xi, cfg.tau, W.eigenvalues).to_dict()
        if res.x1 is not None:
            mode = "exact" if cfg.sigma == 0 else "stochastic"
            try:
                c = compute_constants(W.eigenvalues, res.xi, cfg.tau, cfg.alpha, L, spectral_transform(res.x0, W.P).Y,
                                      spectral_transform(res.x1, W.P).Y, mean_grad0_sq=res.mean_grad0_sq, mode=mode)
                data["constants"] = c.to_dict()
            except StepsizeTooLarge as exc:
                data["constants"] = {"error": str(exc)}
    if not res.diverged:
        agg = running_average_metrics(res.trace, cfg.tau, res.final)
        data["aggregates"] = agg.to_dict()
        try:
            data["rate_fit"] = fit_rate(agg.T, agg.grad_norm_avg).to_dict()
        except (TooFewPoints, MileError) as exc:
            data["rate_fit"] = {"error": str(exc)}
    return data


def execute(exp: ExperimentConfig, index: int, out_dir: str | Path) -> dict:
    """Run ``exp.runs[index]`` and write ``<name>.csv`` plus ``<name>.json`` into ``out_dir``."""
    W, problem, prepared = prepare(exp)
    prep = prepared[index]
    X = initial_state(exp, problem, prep.config)
    res = run(problem, W, prep.config, X, diagnostics=exp.diagnostics)
    out = Path(out_dir)
    write_trace_csv(out / f"{prep.entry.name}.csv", res.trace)
    write_json(out / f"{prep.entry.name}.json", sidecar(exp, prep, W, problem, res))
    ok = res.diverged == prep.entry.expect_diverge
    log.info("%s: %s", prep.entry.name, "diverged" if res.diverged else "converged")
    return {"name": prep.entry.name, "diverged": res.diverged, "diverged_at": res.diverged_at,
            "expect_diverge": prep.entry.expect_diverge, "ok": ok, "rows": len(res.trace),
            "alpha": prep.config.alpha}


def run_experiment(exp: ExperimentConfig, out_dir: str | Path, workers: int = 1) -> list[dict]:
    prepare(exp)  # validate everything before the first run starts
    n = len(exp.runs)
    if workers <= 1 or n == 1:
        return [execute(exp, i, out_dir) for i in range(n)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(execute, exp, i, out_dir) for i in range(n)]
        return [f.result() for f in futures]
