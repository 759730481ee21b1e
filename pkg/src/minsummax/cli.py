"""Command-line entry point.

Subcommands: ``run`` (one experiment), ``verify`` (self-check suites),
``gradcheck`` (finite-difference gradient validation), ``serve`` (start the
HTTP service).  The first three execute in process by default and against a
running service when ``--server URL`` is given; either way the outputs are
identical: a single machine-readable ``key=value`` summary line on stdout,
human-oriented detail on stderr, and an optional trace CSV.

Configuration precedence is command line over ``--config`` file over
defaults.  Any nested field can be set with a dotted flag, for example
``--schedule.kind power --problem.n 500``.

Exit codes: 0 success, 1 a run or check failed, 2 bad usage or bad
configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, build_config
from .data_io import write_trace_csv
from .errors import ContractError, DomainError, NumericalError, ParseError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _fmt_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_line(summary: dict) -> str:
    return " ".join(f"{k}={_fmt_value(v)}" for k, v in summary.items())


def _collect_overrides(args: argparse.Namespace, extra: list[str]) -> dict:
    """Known flags plus dotted extras, keeping only what the user supplied."""
    overrides: dict = {}
    for name in ("experiment", "method", "seed", "iters", "out", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            overrides[name] = val
    if getattr(args, "timing", False):
        overrides["timing"] = True
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) <= 2:
            raise ParseError(f"unrecognized argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, _, value = body.partition("=")
        else:
            if i + 1 >= len(extra):
                raise ParseError(f"option --{body} needs a value")
            key, value = body, extra[i + 1]
            i += 1
        if not key:
            raise ParseError(f"bad option {tok!r}")
        overrides[key] = value
        i += 1
    return overrides


def _load_config(args: argparse.Namespace, extra: list[str]) -> RunConfig:
    text = None
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ParseError(f"cannot read config file {args.config}: {exc}") from exc
    return build_config(text, _collect_overrides(args, extra))


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=payload, timeout=600.0)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        msg = f"server returned {resp.status_code}: {detail}"
        # Mirror the in-process exit codes: 400/422 are rejected inputs, and
        # the only 500 the service emits with a detail string is a numerical
        # failure.
        if resp.status_code in (400, 422):
            raise ParseError(msg)
        if resp.status_code == 500 and detail != "Internal Server Error":
            raise NumericalError(msg)
        raise DomainError(msg)
    return resp.json()


def _write_trace(out: str | None, records, stderr) -> None:
    if not out:
        return
    write_trace_csv(out, records)
    print(f"wrote trace ({len(records)} rows) to {out}", file=stderr)


def cmd_run(args: argparse.Namespace, extra: list[str], stdout, stderr) -> int:
    cfg = _load_config(args, extra)
    if args.server:
        data = _post(args.server, "/run", {"config": cfg.model_dump(mode="json")})
        summary = data["summary"]
        from .service.schemas import TraceRow

        records = [TraceRow.model_validate(row).to_record() for row in data["trace"]]
    else:
        from .experiments import run_experiment

        summary, records = run_experiment(cfg)
    _write_trace(cfg.out, records, stderr)
    print(
        f"{cfg.experiment}/{cfg.method}: {len(records)} iterations, seed {cfg.seed}",
        file=stderr,
    )
    print(summary_line(summary), file=stdout)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, extra: list[str], stdout, stderr) -> int:
    if extra:
        raise ParseError(f"unrecognized arguments: {' '.join(extra)}")
    suites = args.suite if args.suite else None
    if args.server:
        payload = {"suites": suites, "seed": args.seed, "fuzz_count": args.fuzz_count}
        data = _post(args.server, "/verify", payload)
        results = data["results"]
        all_passed = data["all_passed"]
    else:
        from .verify import run_suites

        overrides = {}
        if args.fuzz_count is not None:
            overrides["parser_fuzz"] = {"count": args.fuzz_count}
        try:
            outcomes = run_suites(suites, seed=args.seed, **overrides)
        except KeyError as exc:
            raise ParseError(str(exc.args[0])) from exc
        results = [
            {"name": r.name, "passed": r.passed, "margin": r.margin, "detail": r.detail}
            for r in outcomes
        ]
        all_passed = all(r.passed for r in outcomes)
    for r in results:
        status = "ok" if r["passed"] else "FAILED"
        print(f"{r['name']}: {status} (margin {r['margin']:.3e}) {r['detail']}", file=stderr)
    n_failed = sum(1 for r in results if not r["passed"])
    print(
        summary_line(
            {"suites": len(results), "passed": len(results) - n_failed, "failed": n_failed}
        ),
        file=stdout,
    )
    return EXIT_OK if all_passed else EXIT_FAILED


def cmd_gradcheck(args: argparse.Namespace, extra: list[str], stdout, stderr) -> int:
    cfg = _load_config(args, extra)
    if args.server:
        payload = {
            "config": cfg.model_dump(mode="json"),
            "points": args.points,
            "mu": args.mu,
            "tol": args.tol,
        }
        data = _post(args.server, "/gradcheck", payload)
    else:
        from .gradcheck import run_gradcheck

        res = run_gradcheck(cfg, points=args.points, mu=args.mu, tol=args.tol)
        data = {
            "experiment": res.experiment,
            "checked": res.checked,
            "max_rel_err": None if res.max_rel_err != res.max_rel_err else res.max_rel_err,
            "tol": res.tol,
            "passed": res.passed,
            "skipped": res.skipped,
            "reason": res.reason,
        }
    if data["skipped"]:
        print(f"warning: gradient check skipped: {data['reason']}", file=stderr)
    elif data["reason"]:
        print(f"gradient check: {data['reason']}", file=stderr)
    print(
        summary_line(
            {
                "experiment": data["experiment"],
                "checked": data["checked"],
                "max_rel_err": data["max_rel_err"],
                "tol": data["tol"],
                "passed": data["passed"],
                "skipped": data["skipped"],
            }
        ),
        file=stdout,
    )
    return EXIT_OK if data["passed"] else EXIT_FAILED


def cmd_serve(args: argparse.Namespace, extra: list[str], stdout, stderr) -> int:
    if extra:
        raise ParseError(f"unrecognized arguments: {' '.join(extra)}")
    import uvicorn

    from .service import create_app

    print(f"serving on http://{args.host}:{args.port}", file=stderr)
    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minsummax",
        description="Solve min-sum-max problems by temperature-decayed smoothing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment")
    run_p.add_argument("--config", help="key = value config file")
    run_p.add_argument("--seed", type=int, help="root random seed")
    run_p.add_argument("--iters", type=int, help="iteration count")
    run_p.add_argument("--method", choices=["sspg", "gdmax", "sdro_fixed"])
    run_p.add_argument("--experiment", choices=["newsvendor", "regression", "toy"])
    run_p.add_argument("--out", help="write the iteration trace CSV here")
    run_p.add_argument("--timing", action="store_true", help="record real wallclock in the trace")
    run_p.add_argument("--workers", type=int, help="term evaluation threads")
    run_p.add_argument("--server", help="run against this service URL instead of in process")
    run_p.set_defaults(fn=cmd_run)

    ver_p = sub.add_parser("verify", help="run self-check suites")
    ver_p.add_argument("--suite", action="append", help="suite name (repeatable; default all)")
    ver_p.add_argument("--seed", type=int, default=0)
    ver_p.add_argument("--fuzz-count", type=int, default=None, help="parser fuzz iterations")
    ver_p.add_argument("--server", help="run against this service URL instead of in process")
    ver_p.set_defaults(fn=cmd_verify)

    gc_p = sub.add_parser("gradcheck", help="finite-difference gradient validation")
    gc_p.add_argument("--config", help="key = value config file")
    gc_p.add_argument("--seed", type=int, help="root random seed")
    gc_p.add_argument("--experiment", choices=["newsvendor", "regression", "toy"])
    gc_p.add_argument("--points", type=int, default=20)
    gc_p.add_argument("--mu", type=float, default=0.1, help="temperature for the smoothed check")
    gc_p.add_argument("--tol", type=float, default=1e-5, help="relative error gate")
    gc_p.add_argument("--server", help="run against this service URL instead of in process")
    gc_p.set_defaults(fn=cmd_gradcheck)

    srv_p = sub.add_parser("serve", help="start the HTTP service")
    srv_p.add_argument("--host", default="127.0.0.1")
    srv_p.add_argument("--port", type=int, default=8000)
    srv_p.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    stderr = stderr if stderr is not None else sys.stderr
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args, extra, stdout, stderr)
    except ParseError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=stderr)
        return EXIT_NUMERICAL
    except (DomainError, ContractError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_FAILED
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
