"""Command-line front end: ``sitest validate | run | simulate``.

Exit codes: 0 clean, 1 semantic violation, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

from .dsl import ParseFailed, check_library, check_scenario, check_script, serialize_scenario
from .estimator import EstimatorConfig, run, terminal
from .sim import ScriptError, simulate

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2


def _use_color(stream) -> bool:
    mode = os.environ.get("SITEST_COLOR", "auto").lower()
    if mode == "always":
        return True
    if mode == "never":
        return False
    return hasattr(stream, "isatty") and stream.isatty() and "NO_COLOR" not in os.environ


def _print_diagnostics(diags, stream=None) -> None:
    stream = stream if stream is not None else sys.stderr
    color = _use_color(stream)
    for d in diags:
        text = str(d)
        if color:
            code = "31" if d.severity == "error" else "33"
            text = text.replace(f"{d.severity}:", f"\x1b[1;{code}m{d.severity}:\x1b[0m", 1)
        print(text, file=stream)


def _read(path: str) -> Optional[bytes]:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        print(f"{path}: cannot read: {e.strerror}", file=sys.stderr)
        return None


def cmd_validate(args) -> int:
    data = _read(args.library)
    if data is None:
        return EXIT_INPUT
    lib, diags = check_library(data, args.library)
    _print_diagnostics(diags)
    if lib is None:
        return EXIT_VIOLATION
    print(f"{args.library}: ok ({len(lib.activities)} activities, {len(lib.plans)} plans)")
    return EXIT_OK


def _instance_json(inst, t: int) -> dict:
    return {
        "id": inst.id,
        "plan": inst.prototype,
        "marking": sorted(inst.marking),
        "binding": {str(v): str(x) for v, x in inst.binding.items_sorted()},
        "age": t - inst.created_at,
        "idle": inst.idle,
    }


def build_report(results, lib) -> list:
    """Structured run report: one record per time index plus a summary."""
    out = []
    violations = 0
    for r in results:
        violations += len(r.trace.violations)
        out.append(
            {
                "t": r.time,
                "instances": [_instance_json(i, r.time) for i in r.situation.instances],
                "cases": list(r.trace.cases),
                "violations": list(r.trace.violations),
            }
        )
    final = results[-1].situation.instances if results else ()
    out.append(
        {
            "summary": {
                "steps": len(results),
                "recognized": [
                    {"id": i.id, "plan": i.prototype, "marking": sorted(i.marking), "terminal": terminal(i, lib)}
                    for i in final
                ],
                "unexplained_objects": violations,
            }
        }
    )
    return out


def _text_report(report: list) -> str:
    lines = []
    for rec in report[:-1]:
        cases = " ".join(rec["cases"]) or "-"
        lines.append(f"t={rec['t']}  instances={len(rec['instances'])}  cases: {cases}")
        for i in rec["instances"]:
            binding = ", ".join(f"{k}={v}" for k, v in i["binding"].items())
            lines.append(f"    {i['id']} {i['plan']} [{', '.join(i['marking'])}] {{{binding}}} age={i['age']}")
        for o in rec["violations"]:
            lines.append(f"    unexplained object {o}")
    summary = report[-1]["summary"]
    lines.append(f"{summary['steps']} step(s); unexplained objects: {summary['unexplained_objects']}")
    for r in summary["recognized"]:
        state = "terminal" if r["terminal"] else "in progress"
        lines.append(f"recognized {r['id']} {r['plan']} [{', '.join(r['marking'])}] ({state})")
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    lib_data = _read(args.library)
    obs_data = _read(args.scenario)
    if lib_data is None or obs_data is None:
        return EXIT_INPUT
    lib, diags = check_library(lib_data, args.library)
    if lib is None:
        _print_diagnostics(diags)
        return EXIT_INPUT
    scenario, sdiags = check_scenario(obs_data, args.scenario, lib.predicates)
    _print_diagnostics(diags + sdiags)
    if scenario is None:
        return EXIT_INPUT
    try:
        cfg = EstimatorConfig(stale_after=args.stale_after, max_instances_per_object=args.max_per_object)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    results = run(scenario, lib, cfg)
    if args.trace:
        text = "".join(r.trace.to_jsonl() for r in results)
        try:
            Path(args.trace).write_text(text, encoding="utf-8", newline="\n")
        except OSError as e:
            print(f"{args.trace}: cannot write: {e.strerror}", file=sys.stderr)
            return EXIT_INPUT
    report = build_report(results, lib)
    if args.report == "structured":
        sys.stdout.write("".join(json.dumps(r, sort_keys=True) + "\n" for r in report))
    else:
        sys.stdout.write(_text_report(report))
    return EXIT_VIOLATION if report[-1]["summary"]["unexplained_objects"] else EXIT_OK


def cmd_simulate(args) -> int:
    data = _read(args.script)
    if data is None:
        return EXIT_INPUT
    result, diags = check_script(data, args.script, seed=args.seed)
    _print_diagnostics(diags)
    if result is None:
        return EXIT_INPUT
    try:
        scenario = simulate(result.script, result.noise, result.library, result.config)
    except ScriptError as e:
        print(f"{args.script}: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    text = serialize_scenario(scenario)
    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8", newline="\n")
        except OSError as e:
            print(f"{args.out}: cannot write: {e.strerror}", file=sys.stderr)
            return EXIT_INPUT
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _non_negative(text: str) -> int:
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return n


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sitest", description="Symbolic plan recognition over observation streams.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a plan library")
    p.add_argument("library")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run the estimator over a scenario")
    p.add_argument("library")
    p.add_argument("scenario")
    p.add_argument("--trace", help="write the decision trace (JSON lines) here")
    p.add_argument("--stale-after", type=_non_negative, default=5, help="idle steps before a hypothesis is dropped")
    p.add_argument("--max-per-object", type=_positive, default=None, help="cap on hypotheses per object")
    p.add_argument("--report", choices=("text", "structured"), default="text")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("simulate", help="generate a scenario from a ground-truth script")
    p.add_argument("script")
    p.add_argument("--seed", type=int, default=None, help="override the script's noise seed")
    p.add_argument("--out", help="output .obs path (default: standard output)")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
