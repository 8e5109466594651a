"""Command-line interface: analyze, check, simulate, tpcc, sweep.

Every command echoes its configuration and seed into the report so any run
can be reproduced exactly; the JSON report and the text rendering carry the
same numbers.  Exit status: 0 clean, 1 coordination required or a
counterexample found, 2 error.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from dataclasses import asdict
from typing import Any, Optional

from . import __version__
from .checker import TxnIds, check_dynamic
from .classify import classify_transaction
from .sim import (
    NetworkModel,
    Partition,
    SimConfig,
    load_latency_samples,
    model_commit_throughput,
    run_coordinated,
    run_coordination_free,
)
from .state import visible_state
from .tpcc import TpccConfig, classify_tpcc, run_tpcc
from .workload_spec import WorkloadSpecError, instantiate, parse_spec, validate_spec

EXIT_CLEAN = 0
EXIT_FLAGGED = 1
EXIT_ERROR = 2


def _default_seed() -> str:
    return os.environ.get("ICONFLUENCE_SEED", "0")


def _emit(report: dict, args) -> None:
    if getattr(args, "report", None):
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True, default=str)
    if getattr(args, "json", False):
        print(json.dumps(report, indent=2, sort_keys=True, default=str))
    else:
        print(report["_text"])


def _base_report(command: str, args, config: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": str(getattr(args, "seed", "")),
        "config": config,
        "argv": sys.argv[1:],
    }


def _load_spec(path: str):
    with open(path) as fh:
        return parse_spec(fh.read())


# --- analyze -----------------------------------------------------------------

def cmd_analyze(args) -> int:
    spec = _load_spec(args.spec)
    rng = random.Random(f"{args.seed}|analyze")
    ids = TxnIds("analyze")
    rows = []
    flagged = False
    for template in spec.templates:
        findings: dict[tuple[str, str], Any] = {}
        free = True
        for _ in range(args.samples):
            txn = instantiate(spec, template, rng, ids, spec.initial)
            report = classify_transaction(txn, list(spec.specs))
            free = free and report.coordination_free
            for f in report.findings:
                findings[(f.invariant, f.operation_class)] = f
        offending = sorted((inv, op) for (inv, op), f in findings.items()
                           if f.classification.verdict != "I-confluent")
        flagged = flagged or not free
        rows.append({
            "transaction": template.name,
            "coordination_free": free,
            "pairs": [
                {"invariant": inv_name, "operation": op,
                 "verdict": f.classification.verdict,
                 "proof": f.classification.proof}
                for (inv_name, op), f in sorted(findings.items())
            ],
            "offending": [{"invariant": i, "operation": o} for i, o in offending],
        })
    warnings = validate_spec(spec)

    lines = [f"workload: {spec.name}"]
    for row in rows:
        status = "coordination-free" if row["coordination_free"] else "REQUIRES COORDINATION"
        lines.append(f"  {row['transaction']:<28} {status}")
        for pair in row["pairs"]:
            proof = f" (rule {pair['proof']})" if pair["proof"] else ""
            lines.append(f"      {pair['invariant']:<24} x {pair['operation']:<22}"
                         f" {pair['verdict']}{proof}")
    for w in warnings:
        lines.append(f"  warning: {w}")

    report = _base_report("analyze", args, {"spec": args.spec,
                                            "samples": args.samples})
    report["results"] = {"transactions": rows, "warnings": warnings}
    report["_text"] = "\n".join(lines)
    _emit(report, args)
    return EXIT_FLAGGED if flagged else EXIT_CLEAN


# --- check -------------------------------------------------------------------

def _summarize_state(state) -> list[str]:
    view = visible_state(state)
    parts = []
    for item in sorted(view.rows):
        fields = ", ".join(f"{k}={v!r}" for k, v in sorted(view.rows[item].items()))
        parts.append(f"{item}{{{fields}}}")
    for c in sorted(view.counters):
        parts.append(f"{c}={view.counters[c]}")
    for name in sorted(view.collections):
        parts.append(f"{name}={view.collections[name].ordered()}")
    return parts or ["(empty)"]


def _narrate(ce) -> list[str]:
    lines = [f"trial {ce.trial}: counterexample"]
    lines.append("  ancestor: " + "; ".join(_summarize_state(ce.ancestor)))
    for label, history, state in (("branch 1", ce.history1, ce.state1),
                                  ("branch 2", ce.history2, ce.state2)):
        steps = [n.txn.name for n in history.nodes if n.txn is not None]
        merges = sum(1 for n in history.nodes if n.kind == "merge")
        suffix = f" (+{merges} interior merge{'s' if merges != 1 else ''})" if merges else ""
        lines.append(f"  {label}: {' -> '.join(steps) or '(empty)'}{suffix}")
        lines.append(f"    end state: " + "; ".join(_summarize_state(state)))
    lines.append("  merged:    " + "; ".join(_summarize_state(ce.merged)))
    lines.append(f"  violation: {ce.witness.invariant} on "
                 f"{', '.join(ce.witness.items)}: {ce.witness.detail}")
    return lines


def cmd_check(args) -> int:
    spec = _load_spec(args.spec)
    base = spec.checked_workload()
    results = []
    found_any = False
    lines = [f"workload: {spec.name} (trials={args.trials}, depth={args.depth}, "
             f"seed={args.seed})"]
    targets = [(s.name, (s,)) for s in spec.specs] \
        + ([("all-invariants", tuple(spec.specs))] if len(spec.specs) > 1 else [])
    for label, specs in targets:
        from dataclasses import replace
        workload = replace(base, specs=tuple(specs))
        verdict = check_dynamic(workload, args.trials, args.depth,
                                seed=f"{args.seed}|{label}",
                                merge_prob=args.merge_prob)
        found_any = found_any or verdict.found
        entry = {"invariant": label, "outcome": verdict.outcome,
                 "trials": verdict.trials}
        if verdict.found:
            entry["witness"] = verdict.counterexample.witness.detail
            lines.append(f"  {label}: counterexample after {verdict.trials} trials")
            lines.extend("    " + l for l in _narrate(verdict.counterexample))
        else:
            lines.append(f"  {label}: no counterexample in {verdict.trials} trials")
        results.append(entry)

    report = _base_report("check", args, {
        "spec": args.spec, "trials": args.trials, "depth": args.depth,
        "merge_prob": args.merge_prob})
    report["results"] = results
    report["_text"] = "\n".join(lines)
    _emit(report, args)
    return EXIT_FLAGGED if found_any else EXIT_CLEAN


# --- simulate ----------------------------------------------------------------

def _network_from(args) -> NetworkModel:
    if args.latency_file:
        return NetworkModel.empirical(load_latency_samples(args.latency_file))
    if args.jitter:
        kind, _, rest = args.jitter.partition(":")
        if kind == "uniform":
            lo, hi = (float(x) for x in rest.split(":"))
            return NetworkModel.uniform(lo, hi)
        if kind == "lognormal":
            med, sigma = (float(x) for x in rest.split(":"))
            return NetworkModel.lognormal(med, sigma)
        raise WorkloadSpecError([f"unknown jitter {args.jitter!r}"])
    return NetworkModel.constant(args.delay)


def _partitions_from(args) -> tuple[Partition, ...]:
    out = []
    for text in args.partition or ():
        a, b, start, end = text.split(":")
        out.append(Partition(int(a), int(b), float(start), float(end)))
    return tuple(out)


def _metrics_dict(m) -> dict:
    d = asdict(m)
    d["latency_ms"] = dict(m.latency_ms)
    return d


def _metrics_text(d: dict) -> list[str]:
    lines = []
    for key in ("strategy", "attempts", "committed", "aborted",
                "throughput_per_s", "new_order_throughput_per_s",
                "messages_sent", "coordination_stall_ms",
                "invariant_violations", "intermediate_violations",
                "convergence_achieved"):
        if key in d:
            value = d[key]
            if isinstance(value, float):
                value = f"{value:.3f}"
            lines.append(f"  {key:<26} {value}")
    lat = d.get("latency_ms", {})
    lines.append("  latency_ms                 "
                 + "  ".join(f"{k}={v:.3f}" for k, v in lat.items()))
    return lines


def cmd_simulate(args) -> int:
    spec = _load_spec(args.spec)
    workload = spec.checked_workload()
    cfg = SimConfig(
        replicas=args.replicas, clients=args.clients,
        duration_ms=args.duration, strategy=args.strategy,
        anti_entropy_ms=args.anti_entropy, think_ms=args.think,
        exec_ms=args.exec_ms, seed=args.seed, network=_network_from(args),
        partitions=_partitions_from(args))
    runner = (run_coordination_free if args.strategy == "coordination-free"
              else run_coordinated)

    if args.sweep:
        param, values = _parse_sweep(args.sweep)
        rows = []
        lines = [f"sweep {param}: {values}",
                 f"{param},throughput_per_s,committed,aborted,p95_latency_ms"]
        for value in values:
            from dataclasses import replace
            point = replace(cfg, **{param: value})
            m = runner(workload, point)
            rows.append({param: value, "metrics": _metrics_dict(m)})
            lines.append(f"{value},{m.throughput_per_s:.3f},{m.committed},"
                         f"{m.aborted},{m.latency('p95'):.3f}")
        report = _base_report("simulate", args, {"spec": args.spec,
                                                 "sweep": args.sweep})
        report["results"] = rows
        report["_text"] = "\n".join(lines)
        _emit(report, args)
        return EXIT_CLEAN

    m = runner(workload, cfg)
    d = _metrics_dict(m)
    report = _base_report("simulate", args, {"spec": args.spec,
                                             "strategy": args.strategy})
    report["results"] = d
    report["_text"] = "\n".join([f"workload: {spec.name}"] + _metrics_text(d))
    _emit(report, args)
    return EXIT_CLEAN


def _parse_sweep(text: str) -> tuple[str, list]:
    param, _, values = text.partition("=")
    out = []
    for chunk in values.split(","):
        if ":" in chunk:
            lo, hi = chunk.split(":")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(float(chunk) if "." in chunk else int(chunk))
    return param, out


# --- tpcc --------------------------------------------------------------------

def cmd_tpcc(args) -> int:
    cfg = TpccConfig(
        warehouses=args.warehouses, servers=args.servers,
        clients_per_server=args.clients, duration_ms=args.duration,
        strategy=args.strategy, distributed_fraction=args.distributed_fraction,
        seed=args.seed, network=_network_from(args),
        partitions=_partitions_from(args),
        check_intermediate=args.check_intermediate)

    lines = []
    table = classify_tpcc()
    lines.append("invariant classification:")
    lines.append(f"  {'#':>2} {'type':<8} {'txns':<6} {'I-C':<4} description")
    for row in table:
        lines.append(f"  {row.number:>2} {row.type_label:<8} {row.transactions:<6}"
                     f" {'Yes' if row.iconfluent else 'No':<4} {row.description}")

    if args.sweep:
        param, values = _parse_sweep(args.sweep)
        rows = []
        lines.append(f"sweep {param}: {values}")
        lines.append(f"{param},new_order_throughput_per_s,committed,audit_clean")
        from dataclasses import replace
        for value in values:
            overrides = {param: value}
            if param == "servers":
                overrides["warehouses"] = value   # one warehouse per server
            point = replace(cfg, **overrides)
            m = run_tpcc(point)
            rows.append({param: value, "metrics": _metrics_dict(m)})
            lines.append(f"{value},{m.new_order_throughput_per_s:.3f},"
                         f"{m.committed},{m.audit_clean}")
        report = _base_report("tpcc", args, {"sweep": args.sweep})
        report["results"] = {"classification": [asdict(r) for r in table],
                             "sweep": rows}
        report["_text"] = "\n".join(lines)
        _emit(report, args)
        return EXIT_CLEAN

    m = run_tpcc(cfg)
    d = _metrics_dict(m)
    lines.append("run:")
    lines.extend(_metrics_text(d))
    lines.append("  consistency audit (converged state):")
    for row in m.audit_rows:
        mark = "ok " if row.ok else "FAIL"
        lines.append(f"    {mark} {row.number:>2} {row.description}"
                     + (f" [{row.detail}]" if row.detail else ""))
    lines.append(f"  per-district ids gap-free: {m.ids_gap_free}")
    report = _base_report("tpcc", args, {"strategy": args.strategy,
                                         "warehouses": args.warehouses,
                                         "servers": args.servers})
    report["results"] = {"classification": [asdict(r) for r in table],
                         "metrics": d,
                         "audit": [asdict(r) for r in m.audit_rows]}
    report["_text"] = "\n".join(lines)
    _emit(report, args)
    return EXIT_CLEAN


# --- commit model ------------------------------------------------------------

def cmd_commit_model(args) -> int:
    samples = (load_latency_samples(args.latency_file) if args.latency_file
               else [args.rtt])
    rows = []
    lines = ["servers,protocol,mean_latency_ms,throughput_per_s"]
    for n in range(args.min_servers, args.max_servers + 1):
        for protocol in args.protocols.split(","):
            r = model_commit_throughput(n, protocol, samples,
                                        rounds=args.rounds, seed=args.seed)
            rows.append(asdict(r))
            lines.append(f"{n},{protocol},{r.mean_latency_ms:.3f},"
                         f"{r.throughput_per_s:.3f}")
    report = _base_report("commit-model", args, {
        "protocols": args.protocols, "rounds": args.rounds})
    report["results"] = rows
    report["_text"] = "\n".join(lines)
    _emit(report, args)
    return EXIT_CLEAN


# --- entry point ---------------------------------------------------------------

def _add_common(p) -> None:
    p.add_argument("--seed", default=_default_seed())
    p.add_argument("--json", action="store_true",
                   help="print the JSON report instead of text")
    p.add_argument("--report", metavar="PATH",
                   help="also write the JSON report to PATH")


def _add_network(p) -> None:
    p.add_argument("--delay", type=float, default=5.0,
                   help="constant one-way delay in ms")
    p.add_argument("--jitter", default=None,
                   help="uniform:LO:HI or lognormal:MEDIAN:SIGMA")
    p.add_argument("--latency-file", default=None,
                   help="empirical one-way delays, one ms value per line")
    p.add_argument("--partition", action="append", metavar="A:B:START:END",
                   help="cut replicas A and B during [START, END) ms")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iconfluence",
        description="invariant-confluence analysis and simulation")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("analyze", help="static classification of a workload spec")
    p.add_argument("spec")
    p.add_argument("--samples", type=int, default=5)
    _add_common(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("check", help="dynamic counterexample search")
    p.add_argument("spec")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--merge-prob", type=float, default=0.2)
    _add_common(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("simulate", help="simulate a workload spec")
    p.add_argument("spec")
    p.add_argument("--strategy", choices=["coordination-free", "coordinated-2pl"],
                   default="coordination-free")
    p.add_argument("--replicas", type=int, default=2)
    p.add_argument("--clients", type=int, default=2)
    p.add_argument("--duration", type=float, default=1000.0)
    p.add_argument("--anti-entropy", type=float, default=50.0)
    p.add_argument("--think", type=float, default=10.0)
    p.add_argument("--exec-ms", type=float, default=0.0)
    p.add_argument("--sweep", metavar="PARAM=LO:HI",
                   help="emit one row per value (e.g. replicas=1:8)")
    _add_network(p)
    _add_common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("tpcc", help="desk-scale TPC-C New-Order runs")
    p.add_argument("--strategy", choices=["coordination-avoiding", "coordinated-2pl"],
                   default="coordination-avoiding")
    p.add_argument("--warehouses", type=int, default=2)
    p.add_argument("--servers", type=int, default=2)
    p.add_argument("--clients", type=int, default=2,
                   help="clients per server")
    p.add_argument("--duration", type=float, default=1000.0)
    p.add_argument("--distributed-fraction", type=float, default=0.10)
    p.add_argument("--check-intermediate", action="store_true")
    p.add_argument("--sweep", metavar="PARAM=LO:HI",
                   help="e.g. servers=1:8 or distributed_fraction=0.0,0.5,1.0")
    _add_network(p)
    _add_common(p)
    p.set_defaults(fn=cmd_tpcc)

    p = sub.add_parser("sweep", help="parameter sweep of simulate or tpcc")
    p.add_argument("target", choices=["simulate", "tpcc"])
    p.add_argument("rest", nargs=argparse.REMAINDER,
                   help="target flags; must include --sweep PARAM=VALUES")
    p.set_defaults(fn=None)

    p = sub.add_parser("commit-model",
                       help="atomic-commitment throughput bound")
    p.add_argument("--protocols", default="c2pc,d2pc")
    p.add_argument("--min-servers", type=int, default=2)
    p.add_argument("--max-servers", type=int, default=8)
    p.add_argument("--rtt", type=float, default=2.0,
                   help="constant round-trip time in ms")
    p.add_argument("--rounds", type=int, default=2000)
    p.add_argument("--latency-file", default=None,
                   help="empirical RTT samples, one ms value per line")
    _add_common(p)
    p.set_defaults(fn=cmd_commit_model)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.cmd == "sweep":
        rest = list(args.rest)
        if not any(a.startswith("--sweep") for a in rest):
            print("error: sweep requires --sweep PARAM=VALUES", file=sys.stderr)
            return EXIT_ERROR
        return main([args.target] + rest)
    try:
        return args.fn(args)
    except WorkloadSpecError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
