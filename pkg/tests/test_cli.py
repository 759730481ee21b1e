"""Command-line behavior: output contract, exit codes, config precedence."""

import io

import pytest

from minsummax.cli import EXIT_FAILED, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from minsummax.data_io import read_trace_csv

FAST = ["--iters", "8", "--problem.n", "12", "--estimator.samples", "4",
        "--inner.iterations", "4"]


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(argv, stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_exit_code_values():
    assert (EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NUMERICAL) == (0, 1, 2, 3)


def test_run_summary_line_shape():
    code, out, err = run_cli(["run", "--experiment", "toy", "--iters", "6",
                              "--problem.terms", "4", "--problem.dim", "2"])
    assert code == EXIT_OK
    lines = [l for l in out.splitlines() if l]
    assert len(lines) == 1  # stdout carries exactly the summary line
    pairs = dict(tok.split("=", 1) for tok in lines[0].split(" "))
    assert pairs["experiment"] == "toy"
    assert pairs["method"] == "sspg"
    assert pairs["iters"] == "6"
    float(pairs["obj_smoothed"])  # parses back
    assert "iterations, seed" in err  # the human detail stays on stderr


def test_run_writes_trace(tmp_path):
    trace = tmp_path / "t.csv"
    code, out, err = run_cli(["run", *FAST, "--out", str(trace)])
    assert code == EXIT_OK
    assert f"wrote trace (8 rows) to {trace}" in err
    records = read_trace_csv(str(trace))
    assert len(records) == 8
    header = trace.read_text().splitlines()[0]
    assert header == ("iter,mu,alpha,obj_smoothed,obj_primal_est,lambda,"
                      "stationarity_sq,wallclock_ms")


def test_run_deterministic_across_invocations(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run_cli(["run", *FAST, "--seed", "4", "--out", str(a)])[0] == EXIT_OK
    assert run_cli(["run", *FAST, "--seed", "4", "--out", str(b)])[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("seed = 3\niters = 5\nproblem.n = 12\n"
                       "estimator.samples = 4\ninner.iterations = 4\n")
    code, out, _ = run_cli(["run", "--config", str(cfgfile), "--seed", "9"])
    assert code == EXIT_OK
    pairs = dict(tok.split("=", 1) for tok in out.strip().split(" "))
    assert pairs["seed"] == "9"  # flag beats file
    assert pairs["iters"] == "5"  # file beats default


def test_dotted_override_both_spellings(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["run", *FAST, "--schedule.kind", "constant", "--out", str(a)]
    alt = ["run", *FAST, "--schedule.kind=constant", "--out", str(b)]
    assert run_cli(base)[0] == EXIT_OK
    assert run_cli(alt)[0] == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert read_trace_csv(str(a))[0].mu == 0.1  # constant schedule default level


def test_usage_errors_exit_2(tmp_path):
    assert run_cli(["nosuchcommand"])[0] == EXIT_USAGE
    assert run_cli(["run", "--method", "nosuchmethod"])[0] == EXIT_USAGE
    assert run_cli(["run", "--iters", "notanumber"])[0] == EXIT_USAGE
    assert run_cli(["run", "--problem.n", "notanumber"])[0] == EXIT_USAGE
    assert run_cli(["run", "--no_such_field", "1"])[0] == EXIT_USAGE
    assert run_cli(["run", "--config", str(tmp_path / "missing.cfg")])[0] == EXIT_USAGE
    code, _, err = run_cli(["run", "--iters", "0"])
    assert code == EXIT_USAGE
    assert "config field iters" in err


def test_bad_config_file_reports_line(tmp_path):
    cfgfile = tmp_path / "bad.cfg"
    cfgfile.write_text("seed = 1\nbroken line\n")
    code, _, err = run_cli(["run", "--config", str(cfgfile)])
    assert code == EXIT_USAGE
    assert "line 2" in err


def test_runtime_domain_error_exits_1():
    code, _, err = run_cli(["run", "--experiment", "toy", "--method", "gdmax",
                            "--iters", "3"])
    assert code == EXIT_FAILED
    assert "smoothing method" in err


def test_verify_output_and_exit():
    code, out, err = run_cli(["verify", "--suite", "sandwich", "--suite", "prox"])
    assert code == EXIT_OK
    assert out.strip() == "suites=2 passed=2 failed=0"
    err_lines = [l for l in err.splitlines() if l]
    assert err_lines[0].startswith("sandwich: ok (margin ")
    assert err_lines[1].startswith("prox: ok (margin ")


def test_verify_unknown_suite_is_usage():
    code, _, err = run_cli(["verify", "--suite", "nosuchsuite"])
    assert code == EXIT_USAGE
    assert "unknown suite" in err


def test_verify_fuzz_count():
    code, out, err = run_cli(["verify", "--suite", "parser_fuzz",
                              "--fuzz-count", "400"])
    assert code == EXIT_OK
    assert "400 mutated inputs" in err


def test_gradcheck_ok():
    code, out, _ = run_cli(["gradcheck", "--experiment", "toy", "--points", "6",
                            "--problem.terms", "4"])
    assert code == EXIT_OK
    pairs = dict(tok.split("=", 1) for tok in out.strip().split(" "))
    assert pairs["experiment"] == "toy"
    assert pairs["passed"] == "True"
    assert pairs["skipped"] == "False"
    assert float(pairs["max_rel_err"]) <= 1e-5


def test_gradcheck_skip_warns_but_passes():
    code, out, err = run_cli(["gradcheck", "--mu", "1e-12", "--points", "3"])
    assert code == EXIT_OK
    assert "warning: gradient check skipped:" in err
    pairs = dict(tok.split("=", 1) for tok in out.strip().split(" "))
    assert pairs["skipped"] == "True"
    assert pairs["max_rel_err"] == "None"


def test_gradcheck_failure_exits_1():
    code, out, _ = run_cli(["gradcheck", "--experiment", "toy", "--points", "4",
                            "--tol", "1e-300"])
    assert code == EXIT_FAILED
    assert "passed=False" in out
