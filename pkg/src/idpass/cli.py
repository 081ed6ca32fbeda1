"""Command-line entry point: ingest, isolate, classify, plan, simulate, compare, bench.

Machine-readable results go to ``--out`` (JSON and/or CSV); a short human
summary goes to standard output.  Files are written to a temporary name and
renamed into place, and contain no timestamps, so re-runs are byte-identical.

Exit codes: 0 success, 1 input/validation error, 2 JSON protocol diverged
(``--strict``), 3 ID protocol diverged (``--strict``), 4 unimplemented
protocol.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import random
import sys
import tempfile
import time
from dataclasses import dataclass
from typing import Optional, Sequence

from . import __version__
from .classify import classification_report
from .facts import FactsSyntaxError, SchemaError, load_facts, serialize_facts, validate
from .isolation import FIXPOINT, Policy, isolate
from .plan import generate_plan
from .protocols import (
    IdInterpreter,
    Protocol,
    Unimplemented,
    compare_protocols,
    gen_chain_scenario,
    gen_payload_scenario,
    run_protocol,
)
from .randomgen import DEFAULT_SEED, random_case
from .simcore import BindingError, load_scenario

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_JSON_DIVERGED = 2
EXIT_ID_DIVERGED = 3
EXIT_UNIMPLEMENTED = 4

METRICS_COLUMNS = ["scenario", "protocol", "api_calls", "payload_units_sent", "resident_objects_total",
                   "findings_count"]


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    out: str
    fmt: str
    seed: int
    strict: bool
    lenient: bool
    args: argparse.Namespace

    @property
    def want_json(self) -> bool:
        return self.fmt in ("json", "both")

    @property
    def want_csv(self) -> bool:
        return self.fmt in ("csv", "both")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def dump_csv(rows: list, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in columns})
    return buf.getvalue()


def emit(cfg: RunConfig, stem: str, payload, rows: Optional[list] = None, columns: Optional[Sequence] = None) -> list:
    """Render every requested format first, then write; nothing partial on failure."""
    files = []
    if cfg.want_json and payload is not None:
        files.append((os.path.join(cfg.out, f"{stem}.json"), dump_json(payload)))
    if cfg.want_csv and rows is not None:
        files.append((os.path.join(cfg.out, f"{stem}.csv"), dump_csv(rows, columns or list(rows[0]) if rows else [])))
    for path, text in files:
        write_atomic(path, text)
    return [p for p, _ in files]


def _load(cfg: RunConfig, path: str):
    facts = load_facts(path, strict=not cfg.lenient)
    problems = validate(facts)
    if problems:
        raise InputError("invalid facts:\n" + "\n".join(f"  {v.code} {v.path}: {v.message}" for v in problems))
    return facts


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> int:
    facts = load_facts(cfg.args.facts, strict=not cfg.lenient)
    problems = validate(facts)
    report = {
        "classes": len(facts.classes),
        "clusters": list(facts.clusters),
        "calls": len(facts.calls),
        "accesses": len(facts.accesses),
        "violations": [v.to_json() for v in problems],
    }
    if problems:
        for v in problems:
            print(f"{v.code} {v.path}: {v.message}", file=sys.stderr)
        return EXIT_INPUT
    write_atomic(os.path.join(cfg.out, "facts.json"), serialize_facts(facts))
    emit(cfg, "ingest-report", report, [{k: report[k] for k in ("classes", "calls", "accesses")}],
         ["classes", "calls", "accesses"])
    print(f"ingested {len(facts.classes)} classes in {len(facts.clusters)} clusters "
          f"({len(facts.calls)} calls, {len(facts.accesses)} accesses)")
    return EXIT_OK


def cmd_isolate(cfg: RunConfig) -> int:
    facts = _load(cfg, cfg.args.facts)
    iterations = cfg.args.iterations
    if iterations != FIXPOINT:
        try:
            iterations = int(iterations)
        except ValueError:
            raise InputError(f"--iterations must be a positive integer or '{FIXPOINT}'") from None
    try:
        new_facts, report = isolate(facts, iterations, cfg.args.policy)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_atomic(os.path.join(cfg.out, "isolated-facts.json"), serialize_facts(new_facts))
    emit(cfg, "isolation-report", report.to_json(), report.csv_rows(), ["class", "subgraphs", "relocated"])
    for r in report.rounds:
        print(f"iteration {r['iteration']}: relocated {r['relocated']} "
              f"(cross-cluster edges {r['cross_edges_before']} -> {r['cross_edges_after']})")
    print(f"{report.total_subgraphs} subgraphs, {report.relocated} relocated, "
          f"{report.iterations} iteration(s); cross-cluster edges "
          f"{report.cross_edges_before} -> {report.cross_edges_after}")
    return EXIT_OK


def cmd_classify(cfg: RunConfig) -> int:
    facts = _load(cfg, cfg.args.facts)
    report = classification_report(facts)
    emit(cfg, "classification", report.to_json(), report.csv_rows(), ["api", "kind", "categories", "primary"])
    counts = ", ".join(f"{k}={v}" for k, v in report.counts.items())
    print(f"{report.total} APIs: {counts}")
    return EXIT_OK


def cmd_plan(cfg: RunConfig) -> int:
    facts = _load(cfg, cfg.args.facts)
    plan = generate_plan(facts, lint=cfg.args.lint)
    rows = [
        {"cluster": w.cluster, "side": w.side, "wrapper": w.wrapper_class_name, "route": e.route,
         "api": e.api.api_id}
        for w in plan.server_wrappers() + plan.client_wrappers()
        for e in w.endpoints
    ]
    emit(cfg, "plan", plan.to_json(), rows, ["cluster", "side", "wrapper", "route", "api"])
    print(f"{len(plan.server_wrappers())} server wrappers, {len(plan.client_wrappers())} client wrappers, "
          f"{len(plan.server_endpoints())} endpoints")
    for w in plan.warnings:
        print(f"warning: {w}")
    return EXIT_OK


def _scenario(cfg: RunConfig, facts):
    return load_scenario(cfg.args.scenario, facts)


def cmd_simulate(cfg: RunConfig) -> int:
    protocol = Protocol(cfg.args.protocol)
    if protocol is Protocol.CACHED_ID:
        print("Unimplemented: the cached-id protocol is not available", file=sys.stderr)
        return EXIT_UNIMPLEMENTED
    facts = _load(cfg, cfg.args.facts)
    scenario = _scenario(cfg, facts)
    try:
        state, metrics, findings = run_protocol(protocol.value, facts, scenario)
    except Unimplemented as exc:
        print(f"Unimplemented: {exc}", file=sys.stderr)
        return EXIT_UNIMPLEMENTED
    from .simcore import heap_fingerprint

    payload = {
        "scenario": scenario.name,
        "protocol": protocol.value,
        "fingerprint": heap_fingerprint(state),
        "state": state.to_json(),
        "metrics": metrics.to_json(),
        "findings": [f.to_json() for f in findings],
    }
    row = {"scenario": scenario.name, "protocol": protocol.value, "api_calls": metrics.api_calls,
           "payload_units_sent": metrics.payload_units_sent, "resident_objects_total": metrics.resident_objects,
           "findings_count": len(findings)}
    emit(cfg, f"simulate-{protocol.value}", payload, [row], METRICS_COLUMNS)
    print(f"{scenario.name} [{protocol.value}]: {metrics.api_calls} API calls, "
          f"{metrics.payload_units_sent} units sent, {metrics.resident_objects} resident objects, "
          f"{len(findings)} findings")
    if state.error:
        print(f"run stopped: {state.error}")
    return EXIT_OK


def _strict_code(reports: list) -> int:
    if any(r.engine_defect for r in reports):
        return EXIT_ID_DIVERGED
    if any(r.json_diverges for r in reports):
        return EXIT_JSON_DIVERGED
    return EXIT_OK


def cmd_compare(cfg: RunConfig, id_engine=IdInterpreter) -> int:
    if cfg.args.random:
        rng = random.Random(cfg.seed)
        cases = [random_case(rng.randrange(2**31)) for _ in range(cfg.args.random)]
    else:
        if not cfg.args.facts or not cfg.args.scenario:
            raise InputError("compare needs FACTS and SCENARIO (or --random N)")
        facts = _load(cfg, cfg.args.facts)
        cases = [(facts, _scenario(cfg, facts))]
    reports = [compare_protocols(f, s, id_engine=id_engine) for f, s in cases]
    payload = reports[0].to_json() if len(reports) == 1 else {"reports": [r.to_json() for r in reports]}
    rows = [row for r in reports for row in r.metrics_rows()]
    emit(cfg, "divergence", payload)
    if cfg.want_csv:
        write_atomic(os.path.join(cfg.out, "metrics.csv"), dump_csv(rows, METRICS_COLUMNS))
    for r in reports:
        cats = ", ".join(r.categories("json")) or "none"
        print(f"{r.scenario}: ID {'match' if r.fingerprint_match['id'] else 'MISMATCH'}; "
              f"JSON {'match' if r.fingerprint_match['json'] else 'diverges'} (findings: {cats})")
    if len(reports) > 1:
        ok = sum(1 for r in reports if not r.engine_defect)
        print(f"ID fidelity: {ok}/{len(reports)}")
    return _strict_code(reports) if cfg.strict else EXIT_OK


def cmd_bench(cfg: RunConfig) -> int:
    start = time.perf_counter()
    if cfg.args.bench == "chain":
        if cfg.args.max_depth < 1:
            raise InputError("--max-depth must be >= 1")
        rows = []
        for n in range(1, cfg.args.max_depth + 1):
            facts, scenario = gen_chain_scenario(n)
            _, mj, _ = run_protocol("json", facts, scenario)
            _, mi, _ = run_protocol("id", facts, scenario)
            rows.append({"depth": n, "json_resident": mj.resident_objects, "id_resident": mi.resident_objects,
                         "json_expected": n * (n + 1) // 2, "id_expected": n})
        columns = ["depth", "json_resident", "id_resident", "json_expected", "id_expected"]
        stem = "bench-chain"
    else:
        try:
            sizes = [int(s) for s in cfg.args.sizes.split(",") if s.strip()]
        except ValueError:
            raise InputError("--sizes must be a comma-separated list of integers") from None
        if not sizes or min(sizes) < 1:
            raise InputError("--sizes must list positive integers")
        rows = []
        for size in sizes:
            facts, scenario = gen_payload_scenario(size)
            _, mj, _ = run_protocol("json", facts, scenario)
            _, mi, _ = run_protocol("id", facts, scenario)
            rows.append({"size": size,
                         "json_units": mj.per_service["client"].payload_units_sent,
                         "id_units": mi.per_service["client"].payload_units_sent,
                         "json_units_total": mj.payload_units_sent,
                         "id_units_total": mi.payload_units_sent})
        columns = ["size", "json_units", "id_units", "json_units_total", "id_units_total"]
        stem = "bench-payload"
    emit(cfg, stem, {"rows": rows}, rows, columns)
    print(dump_csv(rows, columns), end="")
    print(f"({time.perf_counter() - start:.3f}s)", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "isolate": cmd_isolate,
    "classify": cmd_classify,
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "bench": cmd_bench,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags, accepted both before and after the subcommand."""
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--out", default=d("out"), help="output directory (default: out)")
    p.add_argument("--format", dest="fmt", choices=["json", "csv", "both"], default=d("both"))
    p.add_argument("--seed", type=int, default=d(DEFAULT_SEED), help="seed for random scenario generation")
    p.add_argument("--strict", action="store_true", default=d(False), help="non-zero exit on divergence")
    p.add_argument("--lenient", action="store_true", default=d(False), help="warn on unknown keys instead of failing")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idpass", description=__doc__.split("\n")[0],
                                     parents=[_global_flags(False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = [_global_flags(True)]
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=common, help="parse and validate a facts file")
    p.add_argument("facts")

    p = sub.add_parser("isolate", parents=common, help="relocate disconnected member subgraphs")
    p.add_argument("facts")
    p.add_argument("--iterations", default="1", help=f"rounds to run, or '{FIXPOINT}'")
    p.add_argument("--policy", choices=[x.value for x in Policy], default=Policy.PAPER_SIMPLE.value)

    p = sub.add_parser("classify", parents=common, help="label every API with its transfer category")
    p.add_argument("facts")

    p = sub.add_parser("plan", parents=common, help="generate the wrapper refactoring plan")
    p.add_argument("facts")
    p.add_argument("--lint", action="store_true", help="append anti-pattern warnings")

    p = sub.add_parser("simulate", parents=common, help="run a scenario under one protocol")
    p.add_argument("facts")
    p.add_argument("scenario")
    p.add_argument("--protocol", choices=[x.value for x in Protocol], default=Protocol.MONOLITH.value)

    p = sub.add_parser("compare", parents=common, help="run monolith, ID and JSON and diff them")
    p.add_argument("facts", nargs="?")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--random", type=int, default=0, metavar="N", help="compare N seeded random cases instead")

    p = sub.add_parser("bench", parents=common, help="closed-form cost benchmarks")
    bench = p.add_subparsers(dest="bench", required=True)
    b = bench.add_parser("chain", parents=common, help="resident objects along a call chain")
    b.add_argument("--max-depth", type=int, default=16)
    b = bench.add_parser("payload", parents=common, help="payload units for a list argument")
    b.add_argument("--sizes", default="10,100,1000")
    return parser


def main(argv: Optional[Sequence[str]] = None, id_engine=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = RunConfig(args.command, args.out, args.fmt, args.seed, args.strict, args.lenient, args)
    try:
        if args.command == "compare" and id_engine is not None:
            return cmd_compare(cfg, id_engine=id_engine)
        return COMMANDS[args.command](cfg)
    except (OSError, FactsSyntaxError, SchemaError, BindingError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
