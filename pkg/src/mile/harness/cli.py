"""Command-line entry point.

Exit codes: 0 success, 1 usage error or refusal, 2 unexpected divergence,
3 selftest failure, 4 theorem-bound violation.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..core import message_size_accounting
from ..errors import MileError
from ..lifting import stability_report
from ..topology import default_xi, validate_mixing_matrix
from .analyze import analyze
from .config import load_config, with_seed
from .experiment import build_mixing, run_experiment
from .io import to_json, write_json
from .selftest import MUTATIONS, run_selftest

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_SELFTEST, EXIT_BOUND = 0, 1, 2, 3, 4

log = logging.getLogger("mile")


def _load(args):
    exp = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        exp = with_seed(exp, args.seed)
    if getattr(args, "diagnostics", None):
        exp = replace(exp, diagnostics=args.diagnostics)
    return exp


def cmd_run(args) -> int:
    exp = _load(args)
    out = Path(args.out or exp.out or "runs")
    summaries = run_experiment(exp, out, workers=args.workers)
    for s in summaries:
        state = "diverged at t=%s" % s["diverged_at"] if s["diverged"] else "converged"
        flag = "ok" if s["ok"] else "UNEXPECTED"
        print(f"{s['name']}: {state} ({s['rows']} rows, alpha={s['alpha']:.6g}) [{flag}]")
    return EXIT_OK if all(s["ok"] for s in summaries) else EXIT_DIVERGED


def cmd_selftest(args) -> int:
    results = run_selftest(seed=args.seed or 0, mutate=args.mutate)
    for r in results:
        print(r.line())
    passed = all(r.passed for r in results)
    print("selftest:", "PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_SELFTEST


def cmd_analyze(args) -> int:
    exp = _load(args)
    report = analyze(args.trace, exp)
    if args.out:
        write_json(args.out, report)
    else:
        sys.stdout.write(to_json(report))
    if "refused" in report:
        print(f"analyze refused: {report['refused']}", file=sys.stderr)
        return EXIT_USAGE
    for b in report["bounds"]:
        verdict = "holds" if b["satisfied"] else "VIOLATED"
        print(f"{b['mode']}: lhs={b['lhs']:.6g} rhs={b['rhs']:.6g} {verdict}", file=sys.stderr)
    return EXIT_BOUND if report["violations"] else EXIT_OK


def cmd_topology_check(args) -> int:
    exp = _load(args)
    W = build_mixing(exp.topology)
    spectral = validate_mixing_matrix(W.W, W.topology)
    taus = sorted({r.config.tau for r in exp.runs})
    out = {"mixing": W.summary(), "assumptions": spectral.to_dict(), "stability": {}, "resources": {}}
    ok = spectral.passed
    for e in exp.runs:
        cfg = e.config
        if cfg.algorithm == "mile":
            rep = stability_report(cfg.resolved_xi, cfg.tau, W.eigenvalues)
            out["stability"][e.name] = rep.to_dict()
            ok = ok and rep.passed
        out["resources"][cfg.algorithm] = message_size_accounting(cfg).to_dict()
    for tau in taus:
        out["stability"].setdefault(f"default_xi_tau{tau}", stability_report(default_xi(tau), tau, W.eigenvalues)
                                    .to_dict())
    sys.stdout.write(to_json(out))
    return EXIT_OK if ok else EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mile", description="Decentralized optimization with local updates.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        p.add_argument("--config", required=needs_config, help="experiment TOML file")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--diagnostics", choices=("basic", "spectral"), default=None)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help="execute every run in the config" if name == "run" else
                           "execute a config whose runs expand over parameter lists")
        common(p)
        p.add_argument("--out", default=None, help="output directory (default: config 'out' or ./runs)")
        p.add_argument("--workers", type=int, default=1, help="concurrent runs")
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutate", choices=MUTATIONS, default=None, help="inject a known fault")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("analyze", help="evaluate the theorem bounds on a stored trace")
    common(p)
    p.add_argument("--trace", required=True, help="trace CSV (its JSON sidecar must sit alongside)")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("topology-check", help="validate the mixing matrix and stability of the configured runs")
    common(p)
    p.set_defaults(func=cmd_topology_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
