import json
import time

import numpy as np
import pytest

from mile.core import RunConfig, run
from mile.errors import ConfigParse, SchemaMismatch
from mile.harness.cli import main
from mile.harness.config import load_config, parse_config, with_seed
from mile.harness.io import read_trace_csv, to_json, trace_to_csv
from mile.harness.selftest import run_selftest
from mile.problems import HeteroQuadratic
from mile.topology import ring

BASE = """\
seed = 0
[topology]
kind = "ring"
n_agents = {n}
[problem]
kind = "hetero_quadratic"
n_dim = {n_dim}
heterogeneity = {h}
seed = 0
"""

SMALL = BASE.format(n=4, n_dim=2, h=1.0) + """
[[runs]]
name = "m"
algorithm = "mile"
tau = 2
rounds = 50
alpha = "exact"
"""


def _write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# config parsing

def test_parse_minimal_defaults():
    exp = parse_config(SMALL)
    assert len(exp.runs) == 1
    e = exp.runs[0]
    assert e.name == "m" and e.alpha_spec == "exact" and e.config.tau == 2 and e.config.rounds == 50
    assert exp.seed_policy == "per-run-offset" and exp.diagnostics == "basic"


def test_sweep_expansion_and_seed_offsets():
    exp = parse_config(SMALL.replace('name = "m"\n', "") + "[sweep]\ntau = [1, 5, 10]\n")
    assert [e.config.tau for e in exp.runs] == [1, 5, 10]
    assert len({e.name for e in exp.runs}) == 3
    assert [e.config.seed for e in exp.runs] == [0, 1, 2]
    assert [e.config.seed for e in with_seed(exp, 7).runs] == [7, 8, 9]


def test_list_valued_field_expands():
    exp = parse_config(SMALL.replace("rounds = 50", "rounds = [10, 20]"))
    assert [e.config.rounds for e in exp.runs] == [10, 20]


@pytest.mark.parametrize("bad, field, line", [
    ("rounds = 50", "runs.rounds", 15),
    ("tau = 2", "runs.tau", 14),
])
def test_errors_carry_field_and_line(bad, field, line):
    text = SMALL.replace(bad, bad.split("=")[0] + "= -1")
    with pytest.raises(ConfigParse) as info:
        parse_config(text, "exp.toml")
    assert info.value.field == field and info.value.line == line
    assert "exp.toml" in str(info.value) and f"line {line}" in str(info.value)


def test_xi_out_of_interval_rejected_before_running():
    with pytest.raises(ConfigParse) as info:
        parse_config(SMALL.replace('alpha = "exact"', 'alpha = "exact"\nxi = 0.4'))
    assert info.value.field == "runs.xi"


@pytest.mark.parametrize("edit", [
    lambda s: s.replace('kind = "ring"', 'kind = "torus"'),
    lambda s: s.replace('algorithm = "mile"', 'algorithm = "adam"'),
    lambda s: s.replace('alpha = "exact"', 'alpha = "big"'),
    lambda s: s + "bogus = 1\n",
    lambda s: s.replace("[[runs]]", "[[runs]]\nwhat = 3"),
    lambda s: s.replace("seed = 0\n[topology]", "seed = -3\n[topology]"),
    lambda s: s.replace("n_agents = 4", "n_agents = [4"),
])
def test_invalid_configs(edit):
    with pytest.raises(ConfigParse):
        parse_config(edit(SMALL))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigParse):
        load_config(tmp_path / "nope.toml")


# io

def test_csv_round_trip(tmp_path):
    res = run(HeteroQuadratic.generate(4, 2, 1.0, seed=0), ring(4), RunConfig(alpha=0.1, tau=2, rounds=3))
    text = trace_to_csv(res.trace)
    assert text.splitlines()[0].split(",")[0] == "t"
    p = tmp_path / "t.csv"
    p.write_text(text)
    assert read_trace_csv(p) == res.trace


def test_bad_csv_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaMismatch):
        read_trace_csv(p)


def test_to_json_handles_non_finite():
    out = json.loads(to_json({"a": float("inf"), "b": np.float64(1.5), "c": np.arange(2)}))
    assert out == {"a": "inf", "b": 1.5, "c": [0, 1]}


# cli run / sweep

def test_minimal_run_writes_1010_rows(tmp_path):
    text = BASE.format(n=10, n_dim=5, h=2.0) + '[[runs]]\nname = "mile"\ntau = 10\nrounds = 100\nalpha = 0.01\n'
    cfg = _write(tmp_path, text)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "mile.csv").read_text().splitlines()
    assert len(rows) == 1 + 1010
    side = json.loads((tmp_path / "o" / "mile.json").read_text())
    assert side["rows"] == 1010 and side["invariants"]["cross_agent_reads_off_schedule"] == 0
    assert (side["resources"]["comm"], side["resources"]["mem"]) == (1, 2)


def test_sweep_three_files(tmp_path):
    cfg = _write(tmp_path, SMALL.replace('name = "m"\n', 'name = "s"\n') + "[sweep]\ntau = [1, 5, 10]\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--workers", "2"]) == 0
    csvs = sorted(p.name for p in (tmp_path / "o").glob("*.csv"))
    assert csvs == ["s_tau1.csv", "s_tau10.csv", "s_tau5.csv"]


DIVERGE = BASE.format(n=10, n_dim=5, h=5.0) + """
[[runs]]
name = "naive"
algorithm = "naive_extra_local"
tau = 10
rounds = 200
alpha = {alpha}
expect_diverge = {expect}
"""


def _alpha_for_divergence():
    return 0.02 / HeteroQuadratic.generate(10, 5, 5.0, seed=0).smoothness_constant()


def test_expected_divergence_exit_zero(tmp_path):
    cfg = _write(tmp_path, DIVERGE.format(alpha=_alpha_for_divergence(), expect="true"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    side = json.loads((tmp_path / "o" / "naive.json").read_text())
    assert side["diverged"] and side["diverged_at"] < 2010


def test_unexpected_divergence_exit_two(tmp_path):
    cfg = _write(tmp_path, DIVERGE.format(alpha=_alpha_for_divergence(), expect="false"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_byte_identical_outputs(tmp_path):
    text = SMALL.replace('alpha = "exact"', 'alpha = 0.05\nsigma = 0.5')
    cfg = _write(tmp_path, text)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "m.csv").read_bytes() == (tmp_path / "b" / "m.csv").read_bytes()
    main(["run", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "5"])
    assert (tmp_path / "a" / "m.csv").read_bytes() != (tmp_path / "c" / "m.csv").read_bytes()


def test_usage_error_exit_one(tmp_path):
    assert main(["run"]) == 1
    bad = _write(tmp_path, SMALL.replace("rounds = 50", "rounds = 0"))
    assert main(["run", "--config", bad]) == 1


# analyze

def test_analyze_round_trip_conforming(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    rep_path = tmp_path / "rep.json"
    code = main(["analyze", "--config", cfg, "--trace", str(tmp_path / "o" / "m.csv"), "--out", str(rep_path)])
    rep = json.loads(rep_path.read_text())
    assert code == 0 and rep["violations"] == []
    assert {b["mode"] for b in rep["bounds"]} == {"exact_t1", "consensus_t2"}
    assert all(b["satisfied"] for b in rep["bounds"])
    assert rep["stability"]["passed"]
    assert all(rep["constants"]["checks"].values())


def test_analyze_refuses_large_alpha(tmp_path):
    cfg = _write(tmp_path, SMALL.replace('alpha = "exact"', "alpha = 0.1"))
    main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    rep_path = tmp_path / "rep.json"
    code = main(["analyze", "--config", cfg, "--trace", str(tmp_path / "o" / "m.csv"), "--out", str(rep_path)])
    rep = json.loads(rep_path.read_text())
    assert code == 1 and "refused" in rep and rep["bounds"] == []


def test_analyze_stochastic_reports_floor(tmp_path):
    cfg = _write(tmp_path, SMALL.replace('alpha = "exact"', 'alpha = "stochastic"\nsigma = 1.0'))
    main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    rep_path = tmp_path / "rep.json"
    code = main(["analyze", "--config", cfg, "--trace", str(tmp_path / "o" / "m.csv"), "--out", str(rep_path)])
    rep = json.loads(rep_path.read_text())
    assert code == 0
    assert rep["noise_floor"]["stoch_t3"] > 0 and "plateau" in rep
    assert {b["mode"] for b in rep["bounds"]} == {"stoch_t3", "stoch_consensus_t4"}


def test_analyze_schema_mismatch(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    other = _write(tmp_path, SMALL.replace("rounds = 50", "rounds = 60"), "other.toml")
    assert main(["analyze", "--config", other, "--trace", str(tmp_path / "o" / "m.csv")]) == 1


def test_analyze_refuses_baseline(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.replace('algorithm = "mile"', 'algorithm = "local_gd"'))
    main(["run", "--config", cfg, "--out", str(tmp_path / "o")])
    assert main(["analyze", "--config", cfg, "--trace", str(tmp_path / "o" / "m.csv")]) == 1


def test_topology_check(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    assert main(["topology-check", "--config", cfg]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["stability"]["m"]["passed"]


# selftest

def test_selftest_passes_quickly(capsys):
    t0 = time.perf_counter()
    assert main(["selftest"]) == 0
    assert time.perf_counter() - t0 < 10
    assert "selftest: PASS" in capsys.readouterr().out


def test_selftest_mutation_is_caught():
    results = {r.name: r.passed for r in run_selftest(mutate="f22_sign")}
    assert not results["closed form vs direct recursion"]
    assert not results["lifted power vs matrix multiplication"]
    assert main(["selftest", "--mutate", "f22_sign"]) == 3
