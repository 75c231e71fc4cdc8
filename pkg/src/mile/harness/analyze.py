"""Bound evaluation for a stored trace: constants, stability and theorem comparisons."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..core import TraceRecord
from ..errors import MileError, ModeMismatch, SchemaMismatch
from ..lifting import (
    BoundInputs,
    compute_constants,
    consensus_intermediate_bound,
    noise_floor,
    spectral_transform,
    stability_report,
    theorem_bound,
)
from ..metrics import plateau, running_average_metrics
from .config import ExperimentConfig
from .experiment import build_mixing, build_problem, prepare
from .io import read_sidecar, read_trace_csv

MATCH_KEYS = ("algorithm", "tau", "rounds", "sigma", "noise", "seed", "alpha")


def _check_correspondence(side: dict, exp: ExperimentConfig, trace: list[TraceRecord]) -> dict:
    _, _, prepared = prepare(exp)
    match = [p for p in prepared if p.entry.name == side.get("name")]
    if not match:
        raise SchemaMismatch(f"run {side.get('name')!r} is not defined in the config")
    cfg = match[0].config.to_dict()
    for k in MATCH_KEYS:
        if cfg[k] != side["config"].get(k):
            raise SchemaMismatch(f"trace/config disagree on {k}: {side['config'].get(k)!r} vs {cfg[k]!r}")
    if side["experiment"]["topology"] != exp.topology or side["experiment"]["problem"] != exp.problem:
        raise SchemaMismatch("trace was produced with a different topology or problem")
    if len(trace) != side["rows"]:
        raise SchemaMismatch(f"trace has {len(trace)} rows, sidecar records {side['rows']}")
    return cfg


def analyze(trace_path: str | Path, exp: ExperimentConfig) -> dict:
    """Build the bound report for one trace.

    Sets ``report["refused"]`` (and evaluates no bound) when the run is not a
    conforming MILE run: a baseline, a diverged run, or a stepsize above the
    relevant admissible bound.

    Raises:
        SchemaMismatch: trace, sidecar and config do not correspond.
    """
    trace = read_trace_csv(trace_path)
    side = read_sidecar(trace_path)
    cfg = _check_correspondence(side, exp, trace)
    W = build_mixing(exp.topology)
    problem = build_problem(exp.problem, W.n_agents)
    tau, xi, sigma, alpha = cfg["tau"], side["xi"], cfg["sigma"], cfg["alpha"]
    L = problem.smoothness_constant()
    report = {
        "name": side["name"],
        "algorithm": cfg["algorithm"],
        "spectrum": list(W.eigenvalues),
        "rho": list(1 - xi + xi * np.asarray(W.eigenvalues)),
        "L": L,
        "alpha": alpha,
        "sigma": sigma,
        "bounds": [],
        "violations": [],
    }
    if cfg["algorithm"] != "mile":
        report["refused"] = f"bounds apply to MILE only, not {cfg['algorithm']}"
        return report
    report["stability"] = stability_report(xi, tau, W.eigenvalues).to_dict()
    if side["diverged"] or side["final"] is None:
        report["refused"] = "run diverged; no bound applies"
        return report

    X0, X1 = np.asarray(side["X0"], dtype=float), np.asarray(side["X1"], dtype=float)
    f_bar1 = float(np.mean(problem.values(np.broadcast_to(X1.mean(axis=0), X1.shape))))
    mode = "exact" if sigma == 0 else "stochastic"
    try:
        const = compute_constants(W.eigenvalues, xi, tau, alpha, L, spectral_transform(X0, W.P).Y,
                                  spectral_transform(X1, W.P).Y, mean_grad0_sq=side["mean_grad0_sq"], mode=mode)
    except MileError as exc:  # StepsizeTooLarge, RhoOutOfRange: the comparison would be vacuous
        report["refused"] = f"{type(exc).__name__}: {exc}"
        return report
    report["constants"] = const.to_dict()
    report["stepsize_bounds"] = {"alpha_exact": const.alpha_exact, "alpha_stochastic": const.alpha_stochastic}
    final = TraceRecord(**side["final"])
    modes = ("exact_t1", "consensus_t2") if sigma == 0 else ("stoch_t3", "stoch_consensus_t4")
    f_star = problem.lower_bound()
    for m in modes:
        try:
            b = theorem_bound(trace, const, m, f_bar1=f_bar1, f_star=f_star, sigma=sigma, final=final)
        except ModeMismatch as exc:
            report["refused"] = f"ModeMismatch: {exc}"
            report["bounds"] = []
            return report
        report["bounds"].append(b.to_dict())
        if not b.satisfied:
            report["violations"].append(m)
    if sigma == 0:
        t2 = next(b for b in report["bounds"] if b["mode"] == "consensus_t2")
        inter = consensus_intermediate_bound(const, t2["T"], f_bar1, f_star)
        report["diagnostics"] = {"consensus_t2_intermediate": {"lhs": t2["lhs"], "rhs": inter,
                                                               "satisfied": t2["lhs"] <= inter}}
    if sigma > 0:
        agg = running_average_metrics(trace, tau, final)
        K = len(agg.T) - 1
        q = BoundInputs(K, tau, alpha, L, const.rho, sigma, f_bar1, f_star, const.x0_fro_sq, const.x1_fro_sq,
                        const.mean_grad0_sq, const.B2)
        report["noise_floor"] = {"stoch_t3": noise_floor("stoch_t3", q),
                                 "stoch_consensus_t4": noise_floor("stoch_consensus_t4", q)}
        report["plateau"] = {"grad_norm_avg": plateau(agg), "consensus_err": plateau(agg, "consensus_err")}
    return report
