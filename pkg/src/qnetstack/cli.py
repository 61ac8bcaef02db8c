"""Command line: ``run``, ``verify`` and ``list-scenarios``.

Exit status is 0 when every expectation holds, 1 when any fails and 2 for
usage or scenario errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .scenario import (
    REPORT_SCHEMA,
    ScenarioError,
    bundled_scenarios,
    dump_summary,
    evaluate,
    load_scenario,
    run_scenario,
    trace_counters,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _print_verdicts(verdicts, out=None) -> bool:
    out = out or sys.stdout
    ok = True
    for v in verdicts:
        print(f"{'PASS' if v['ok'] else 'FAIL'} {v['name']}: {v['detail']}", file=out)
        ok &= v["ok"]
    return ok


def cmd_run(args) -> int:
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    seeds = sc.seeds[: args.seeds] if args.seeds else sc.seeds
    t0 = time.perf_counter()
    summary, traces = run_scenario(sc, seeds, trace=args.trace)
    wall = time.perf_counter() - t0
    out = Path(args.out or Path("out") / sc.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(dump_summary(summary))
    # wall-clock lives beside the summary so the summary stays reproducible
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": round(wall, 3), "seeds": len(seeds)}) + "\n")
    for seed, text in traces.items():
        (out / f"trace-{seed}.txt").write_text(text)
    print(f"{sc.name}: {len(seeds)} seed(s) in {wall:.2f}s -> {out / 'summary.json'}")
    return EXIT_OK if _print_verdicts(summary["verdicts"]) else EXIT_FAIL


def verify_summary(path: Path) -> list:
    """Re-check one summary; returns ``(name, ok, detail)`` triples."""
    summary = json.loads(path.read_text())
    if summary.get("schema") != REPORT_SCHEMA:
        raise ScenarioError(f"{path}: not a {REPORT_SCHEMA} summary")
    if not summary.get("expect"):
        raise ScenarioError(f"{path}: scenario has no expectation block")
    results = evaluate(summary["expect"], summary["aggregate"])
    for rep in summary["reports"]:
        audit = rep["audit"]
        for pair in audit["unaccounted_pairs"]:
            results.append(("audit", False, f"seed {rep['seed']}: EPR pair unaccounted on link "
                                            f"{pair['link']} at position {pair['position']}"))
        for q in audit["leaks"]:
            results.append(("audit", False, f"seed {rep['seed']}: qudit {q} leaked"))
        if audit["duplications"]:
            results.append(("audit", False, f"seed {rep['seed']}: {audit['duplications']} duplication event(s)"))
        trace_file = path.parent / f"trace-{rep['seed']}.txt"
        if trace_file.exists():
            recomputed = trace_counters(trace_file.read_text())
            claimed = rep["counters"].get("trace")
            if claimed is not None and recomputed != claimed:
                results.append(("counters", False, f"seed {rep['seed']}: report {claimed} != trace {recomputed}"))
            delivered = sum(f["delivered"] for f in rep["flows"].values())
            if recomputed["deliveries"] != delivered:
                results.append(("counters", False, f"seed {rep['seed']}: {delivered} deliveries reported, "
                                                   f"{recomputed['deliveries']} in trace"))
    return results


def cmd_verify(args) -> int:
    status = EXIT_OK
    for p in args.reports:
        path = Path(p)
        if path.is_dir():
            path = path / "summary.json"
        try:
            results = verify_summary(path)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"{path}:")
        if not _print_verdicts([{"name": n, "ok": ok, "detail": d} for n, ok, d in results]):
            status = EXIT_FAIL
    return status


def cmd_list(args) -> int:
    for name, path in sorted(bundled_scenarios().items()):
        try:
            desc = load_scenario(str(path)).description
        except ScenarioError as exc:
            desc = f"(invalid: {exc})"
        print(f"{name:24s} {desc}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qnetstack", description="Quantum network stack simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file or bundled scenario")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory (default out/<name>)")
    r.add_argument("--seeds", type=int, help="use only the first N seeds")
    r.add_argument("--trace", action="store_true", help="write one trace file per seed")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="check summaries against their expectations")
    v.add_argument("reports", nargs="+")
    v.set_defaults(func=cmd_verify)
    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "seeds", None) is not None and args.seeds < 1:
        print("error: --seeds must be positive", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
