"""Experiment configuration: TOML parsing, sweep expansion and fail-fast validation.

Schema::

    seed = 0                         # base seed
    seed_policy = "per-run-offset"   # or "fixed"
    diagnostics = "basic"            # or "spectral"
    out = "runs"                     # optional output directory

    [topology]                       # kind = ring | path | complete | erdos_renyi | custom
    kind = "ring"
    n_agents = 10
    # p = 0.3, seed = 1             (erdos_renyi)
    # edges = "edges.txt"           (custom; one "i j" pair per line)
    # lazy = false                  # use (W + I) / 2

    [problem]                        # hetero_quadratic | nonconvex_logistic | softmax_regression
    kind = "nonconvex_logistic"
    n_dim = 20
    heterogeneity = 2.0
    seed = 0

    [init]                           # x(-1): normal (seeded) | zeros | file
    kind = "normal"
    # path = "x0.txt"

    [[runs]]
    name = "mile_tau10"              # optional, generated if missing
    algorithm = "mile"
    tau = 10                         # a list here (or in [sweep]) expands to one run per value
    rounds = 100
    alpha = "exact"                  # "exact" | "stochastic" | number
    # alpha_cap = 0.01               # upper cap applied to "exact"
    # xi = 0.07
    sigma = 0.0
    expect_diverge = false

    [sweep]                          # optional; applied to every [[runs]] entry
    tau = [1, 5, 10]
"""

from __future__ import annotations

import itertools
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on 3.10
    import tomli as tomllib

from ..core import ALGORITHMS, RunConfig
from ..errors import ConfigInvalid, ConfigParse
from ..problems import NOISE_DISTRIBUTIONS, PROBLEM_KINDS
from ..topology import KINDS

SEED_POLICIES = ("fixed", "per-run-offset")
DIAGNOSTICS = ("basic", "spectral")
RUN_KEYS = {"name", "algorithm", "tau", "rounds", "alpha", "alpha_cap", "xi", "sigma", "noise",
            "expect_diverge", "redraw_prev_gradient", "seed"}
TOP_KEYS = {"seed", "seed_policy", "diagnostics", "out", "topology", "problem", "init", "runs", "sweep"}


@dataclass(frozen=True)
class RunEntry:
    name: str
    alpha_spec: str | float
    alpha_cap: float | None
    config: RunConfig
    expect_diverge: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    topology: dict
    problem: dict
    init: dict
    runs: tuple[RunEntry, ...]
    seed: int = 0
    seed_policy: str = "per-run-offset"
    diagnostics: str = "basic"
    out: str | None = None
    source: str | None = None
    raw: dict = field(default_factory=dict, repr=False)


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Ctx:
    def __init__(self, text: str, path: str | None):
        self.text, self.path = text, path

    def fail(self, message: str, key: str) -> ConfigParse:
        return ConfigParse(message, self.path, key, _line_of(self.text, key.split(".")[-1]))


def _require_table(ctx: _Ctx, data: dict, key: str) -> dict:
    val = data.get(key)
    if not isinstance(val, dict):
        raise ctx.fail(f"missing or invalid table [{key}]", key)
    return dict(val)



def _expand(entry: dict, sweep: dict) -> list[dict]:
    merged = {**entry, **{k: v for k, v in sweep.items()}}
    keys = [k for k, v in merged.items() if isinstance(v, list)]
    if not keys:
        return [merged]
    out = []
    for combo in itertools.product(*(merged[k] for k in keys)):
        d = dict(merged)
        d.update(zip(keys, combo))
        d["_swept"] = tuple(zip(keys, combo))
        out.append(d)
    return out


def _run_name(d: dict, index: int) -> str:
    base = d.get("name") or f"run{index:03d}_{d.get('algorithm', 'mile')}"
    for k, v in d.get("_swept", ()):
        base += f"_{k}{v}"
    return re.sub(r"[^A-Za-z0-9_.\-]+", "-", base)


def _check_number(ctx: _Ctx, d: dict, key: str, kind=(int, float), positive=False, allow_none=True):
    v = d.get(key)
    if v is None:
        if allow_none:
            return None
        raise ctx.fail("required field missing", f"runs.{key}")
    if isinstance(v, bool) or not isinstance(v, kind):
        raise ctx.fail(f"expected {'integer' if kind is int else 'number'}, got {v!r}", f"runs.{key}")
    if positive and not v > 0:
        raise ctx.fail(f"must be positive, got {v!r}", f"runs.{key}")
    return v


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    """Parse and validate an experiment config.

    Raises:
        ConfigParse: TOML syntax error or a field failing validation; the
            message carries the file, line (when locatable) and field name.
    """
    ctx = _Ctx(text, path)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigParse(f"TOML syntax error: {exc}", path, None, int(m.group(1)) if m else None) from exc

    unknown = set(data) - TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ctx.fail(f"unknown top-level key (allowed: {sorted(TOP_KEYS)})", key)

    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ctx.fail(f"seed must be a non-negative integer, got {seed!r}", "seed")
    policy = data.get("seed_policy", "per-run-offset")
    if policy not in SEED_POLICIES:
        raise ctx.fail(f"seed_policy must be one of {SEED_POLICIES}", "seed_policy")
    diagnostics = data.get("diagnostics", "basic")
    if diagnostics not in DIAGNOSTICS:
        raise ctx.fail(f"diagnostics must be one of {DIAGNOSTICS}", "diagnostics")

    topology = _require_table(ctx, data, "topology")
    if topology.get("kind") not in KINDS:
        raise ctx.fail(f"topology.kind must be one of {KINDS}", "topology.kind")
    if topology["kind"] == "custom":
        if "edges" not in topology:
            raise ctx.fail("custom topology needs an 'edges' file", "topology.edges")
        if path is not None and not Path(topology["edges"]).is_absolute():
            topology["edges"] = str(Path(path).parent / topology["edges"])
    elif not isinstance(topology.get("n_agents"), int) or topology["n_agents"] < 1:
        raise ctx.fail("n_agents must be a positive integer", "topology.n_agents")

    problem = _require_table(ctx, data, "problem")
    if problem.get("kind") not in PROBLEM_KINDS:
        raise ctx.fail(f"problem.kind must be one of {sorted(PROBLEM_KINDS)}", "problem.kind")
    if "csv" in problem and path is not None and not Path(problem["csv"]).is_absolute():
        problem["csv"] = str(Path(path).parent / problem["csv"])

    init = dict(data.get("init", {"kind": "normal"}))
    if init.get("kind", "normal") not in ("normal", "zeros", "file"):
        raise ctx.fail("init.kind must be normal, zeros or file", "init.kind")
    init.setdefault("kind", "normal")
    if init["kind"] == "file":
        if "path" not in init:
            raise ctx.fail("init.kind = 'file' needs a path", "init.path")
        if path is not None and not Path(init["path"]).is_absolute():
            init["path"] = str(Path(path).parent / init["path"])

    runs_raw = data.get("runs")
    if not isinstance(runs_raw, list) or not runs_raw:
        raise ctx.fail("at least one [[runs]] entry is required", "runs")
    sweep = data.get("sweep", {})
    if not isinstance(sweep, dict):
        raise ctx.fail("[sweep] must be a table", "sweep")
    for k in sweep:
        if k not in RUN_KEYS - {"name"}:
            raise ctx.fail(f"cannot sweep over {k!r}", f"sweep.{k}")

    entries: list[RunEntry] = []
    index = 0
    for raw in runs_raw:
        bad = set(raw) - RUN_KEYS
        if bad:
            raise ctx.fail(f"unknown run field (allowed: {sorted(RUN_KEYS)})", f"runs.{sorted(bad)[0]}")
        for d in _expand(raw, sweep):
            algorithm = d.get("algorithm", "mile")
            if algorithm not in ALGORITHMS:
                raise ctx.fail(f"algorithm must be one of {ALGORITHMS}", "runs.algorithm")
            tau = _check_number(ctx, d, "tau", int, positive=True) or 1
            rounds = _check_number(ctx, d, "rounds", int, positive=True, allow_none=False)
            alpha = d.get("alpha", "exact")
            if isinstance(alpha, str):
                if alpha not in ("exact", "stochastic"):
                    raise ctx.fail("alpha must be 'exact', 'stochastic' or a positive number", "runs.alpha")
            else:
                _check_number(ctx, d, "alpha", positive=True)
            cap = _check_number(ctx, d, "alpha_cap", positive=True)
            xi = _check_number(ctx, d, "xi", positive=True)
            sigma = _check_number(ctx, d, "sigma") or 0.0
            if sigma < 0:
                raise ctx.fail("sigma must be non-negative", "runs.sigma")
            noise = d.get("noise", "gaussian_iid")
            if noise not in NOISE_DISTRIBUTIONS:
                raise ctx.fail(f"noise must be one of {NOISE_DISTRIBUTIONS}", "runs.noise")
            run_seed = d.get("seed")
            if run_seed is None:
                run_seed = seed + index if policy == "per-run-offset" else seed
            cfg = RunConfig(
                alpha=float(alpha) if not isinstance(alpha, str) else 1.0,  # placeholder until resolved
                tau=int(tau), xi=None if xi is None else float(xi), rounds=int(rounds), sigma=float(sigma),
                noise=noise, seed=int(run_seed), algorithm=algorithm,
                init="zeros" if init["kind"] == "zeros" else "normal",
                redraw_prev_gradient=bool(d.get("redraw_prev_gradient", False)),
            )
            try:
                cfg.validate()
            except ConfigInvalid as exc:
                raise ctx.fail(str(exc), "runs.xi" if "xi" in str(exc) else "runs") from exc
            entries.append(RunEntry(_run_name(d, index), alpha, cap, cfg, bool(d.get("expect_diverge", False))))
            index += 1

    names = [e.name for e in entries]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ctx.fail(f"duplicate run names {dupes}", "runs.name")
    return ExperimentConfig(topology, problem, init, tuple(entries), seed, policy, diagnostics,
                            data.get("out"), path, data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc}", str(path)) from exc
    return parse_config(text, str(path))


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Re-derive every run seed from a new base seed (``--seed`` override)."""
    runs = []
    for i, e in enumerate(cfg.runs):
        s = seed + i if cfg.seed_policy == "per-run-offset" else seed
        runs.append(replace(e, config=replace(e.config, seed=s)))
    return replace(cfg, runs=tuple(runs), seed=seed)
