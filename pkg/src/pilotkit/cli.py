"""Command-line entry point: ``pilotkit {run,experiment,report,model,validate}``.

Exit codes: 0 success, 1 user error (bad flags or input files), 2 runtime
failure (failed units, invariant violations, failed fits).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from collections import OrderedDict
from typing import List, Optional

from . import __version__
from .backend import BackendDescriptor, BackendKind
from .core import PilotDescription, UnitState, read_csv
from .errors import (CapacityExceeded, CycleDetected, InvalidDescription, MalformedLog,
                     PilotkitError, SourceMissing, UnknownBackend, UnknownDataUnit, WaitTimeout)
from .manager import POLICIES, ManagerConfig, PilotManager
from .metrics import derive_metrics
from .miniapp import ExperimentManifest, read_metrics_csv, run_experiment
from .perfmodel import MakespanModelInput, decompose, fit_throughput_model, predict_makespan
from .svg import line_chart
from .validate import validate_records
from .workload import WorkloadGraph

log = logging.getLogger("pilotkit")

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 1, 2
USER_ERRORS = (InvalidDescription, CycleDetected, CapacityExceeded, UnknownBackend, UnknownDataUnit,
               SourceMissing, MalformedLog, OSError, ValueError)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def default_out_dir() -> str:
    return os.environ.get("PILOTKIT_OUT") or "pilotkit-out"


def default_backend(kind: str, pilots: List[int], seed: int) -> BackendDescriptor:
    kind = kind.upper()
    if kind == "SIM_BATCH":
        params = {"queue_wait": 0, "startup_overhead": 0, "seed": seed}
    elif kind == "SIM_CLOUD":
        params = {"provision_delay": 0, "seed": seed}
    elif kind == "LOCAL":
        params = {"max_processes": max([os.cpu_count() or 1] + pilots)}
    else:
        raise UserError(f"unknown backend kind {kind!r} (expected LOCAL, SIM_BATCH, SIM_CLOUD or a JSON file)")
    return BackendDescriptor(kind.lower(), BackendKind(kind), params)


def parse_pilots(spec: str) -> List[int]:
    try:
        slots = [int(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise UserError(f"--pilots expects comma-separated slot counts, got {spec!r}") from None
    if not slots or min(slots) < 1:
        raise UserError("--pilots needs at least one pilot with >= 1 slot")
    return slots


# ---------------------------------------------------------------------------
# subcommands

def cmd_run(args) -> int:
    graph = WorkloadGraph.load(args.workload)
    graph.check_acyclic()
    slots = parse_pilots(args.pilots)
    if os.path.isfile(args.backend):
        with open(args.backend, encoding="utf-8") as fh:
            backend = BackendDescriptor.from_dict(json.load(fh))
    else:
        backend = default_backend(args.backend, slots, args.seed)
    out = args.out or default_out_dir()
    os.makedirs(out, exist_ok=True)
    manager = PilotManager([backend], ManagerConfig(args.policy), work_dir=os.path.join(out, "work"))
    status = EXIT_OK
    try:
        for s in slots:
            manager.submit_pilot(PilotDescription(backend.backend_id, slots=s))
        ids = manager.submit_units(graph)
        if ids:
            try:
                manager.wait(ids, args.timeout)
            except WaitTimeout as exc:
                print(f"timeout: {exc}", file=sys.stderr)
                status = EXIT_RUNTIME
    finally:
        manager.close()
    path = manager.log.write_csv(os.path.join(out, "events.csv"))
    m = derive_metrics(manager.log.records)
    print(f"makespan_ms={m.makespan_ms} units={len(manager.units)} done={m.units_done} "
          f"failed={m.units_failed} canceled={m.units_canceled} events={path}")
    for u in manager.units.values():
        if u.state is UnitState.FAILED:
            print(f"FAILED {u.id} ({u.name}): exit {u.exit_info[0]} {u.exit_info[1]}", file=sys.stderr)
    if m.units_failed or m.units_canceled or any(not u.terminal for u in manager.units.values()):
        status = EXIT_RUNTIME
    return status


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def _point_value(point: str, key: str):
    for part in point.split(";"):
        k, _, v = part.partition("=")
        if k == key:
            try:
                return json.loads(v)
            except ValueError:
                return v
    return None


def write_sweep_svgs(manifest: ExperimentManifest, rows, out: str) -> List[str]:
    """One chart per swept parameter: the y metric averaged over trials and other parameters."""
    metric = "throughput_per_s" if manifest.scenario.scenario == "STREAMING" else "makespan_ms"
    paths = []
    for key in manifest.sweep:
        groups = OrderedDict((json.dumps(v), []) for v in manifest.sweep[key])
        for row in rows:
            if row["status"] != "OK" or row[metric] == "":
                continue
            groups[json.dumps(_point_value(row["param_point"], key))].append(float(row[metric]))
        points = [(json.loads(k), sum(v) / len(v)) for k, v in groups.items() if v]
        doc = line_chart(points, f"{manifest.name}: {metric} vs {key}", key, metric)
        path = os.path.join(out, f"plot-{_slug(key)}.svg")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(doc)
        paths.append(path)
    return paths


def cmd_experiment(args) -> int:
    manifest = ExperimentManifest.load(args.manifest)
    out = args.out or manifest.output_dir or os.path.join(default_out_dir(), _slug(manifest.name))
    bundle = run_experiment(manifest, out)
    print(bundle.metrics_csv)
    failed = [r for r in bundle.rows if r["status"] != "OK"]
    if failed:
        print(f"{len(failed)} of {len(bundle.rows)} runs did not succeed", file=sys.stderr)
    if args.svg:
        for path in write_sweep_svgs(manifest, bundle.rows, out):
            print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    reports = []
    for path in args.log:
        records = read_csv(path)
        entry = {"log": path, "metrics": derive_metrics(records).as_dict()}
        if args.decompose:
            entry["decomposition"] = decompose(records).to_dict()
        reports.append(entry)
    if args.json:
        print(json.dumps(reports if len(reports) > 1 else reports[0], indent=2, sort_keys=True))
        return EXIT_OK
    for entry in reports:
        print(f"# {entry['log']}")
        for key, value in entry["metrics"].items():
            print(f"{key}={'' if value is None else value}")
        if args.decompose:
            d = entry["decomposition"]
            for key, value in d["components"].items():
                print(f"component.{key}={value}")
            for pid, phases in d["pilots"].items():
                print(f"pilot.{pid}.Q={phases['Q']}")
                print(f"pilot.{pid}.S={phases['S']}")
    return EXIT_OK


def cmd_model(args) -> int:
    if args.model_cmd == "predict":
        value = predict_makespan(MakespanModelInput(args.N, args.k, args.d, args.o, args.Q, args.S))
        print(f"predicted_makespan_ms={value:g}")
        return EXIT_OK
    rows = read_metrics_csv(args.metrics)
    if args.only_ok:
        rows = [r for r in rows if r.get("status") == "OK"]
    model = fit_throughput_model(rows, [r for r in args.regressors.split(",") if r],
                                 target=args.target, holdout=args.holdout)
    text = model.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    records = read_csv(args.log)
    violations = validate_records(records)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s) in {len(records)} events", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"OK: {len(records)} events, 0 violations")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pilotkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = p.add_subparsers(dest="cmd", required=True, metavar="{run,experiment,report,model,validate}")

    r = sub.add_parser("run", help="execute a workload file")
    r.add_argument("--workload", required=True, help="workload JSON file")
    r.add_argument("--backend", default="SIM_BATCH",
                   help="LOCAL, SIM_BATCH, SIM_CLOUD or a backend descriptor JSON file")
    r.add_argument("--pilots", default="1", help="comma-separated slot counts, one per pilot")
    r.add_argument("--policy", default="FIFO", choices=POLICIES)
    r.add_argument("--seed", type=int, default=0, help="seed for default SIM backends")
    r.add_argument("--timeout", type=float, default=None, help="seconds (virtual for SIM)")
    r.add_argument("--out", help="output directory (default $PILOTKIT_OUT or ./pilotkit-out)")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("experiment", help="run a Mini-App experiment manifest")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", help="output directory (overrides the manifest)")
    e.add_argument("--svg", action="store_true", help="write one SVG line chart per swept parameter")
    e.set_defaults(func=cmd_experiment)

    rep = sub.add_parser("report", help="derive metrics from event logs")
    rep.add_argument("--log", required=True, nargs="+")
    rep.add_argument("--decompose", action="store_true", help="add the makespan decomposition")
    rep.add_argument("--json", action="store_true")
    rep.set_defaults(func=cmd_report)

    m = sub.add_parser("model", help="analytical prediction or OLS fit")
    msub = m.add_subparsers(dest="model_cmd", required=True)
    pr = msub.add_parser("predict", help="Q + S + ceil(N/k)*(d+o)")
    pr.add_argument("--N", type=int, required=True)
    pr.add_argument("--k", type=int, required=True)
    pr.add_argument("--d", type=float, required=True, help="task duration, ms")
    pr.add_argument("--o", type=float, default=0.0, help="per-task overhead, ms")
    pr.add_argument("--Q", type=float, default=0.0, help="queue wait, ms")
    pr.add_argument("--S", type=float, default=0.0, help="startup, ms")
    fit = msub.add_parser("fit", help="fit a throughput model on a metrics CSV")
    fit.add_argument("--metrics", required=True)
    fit.add_argument("--regressors", required=True, help="comma-separated columns or sweep keys")
    fit.add_argument("--target", default="throughput_per_s")
    fit.add_argument("--holdout", type=float, default=0.2)
    fit.add_argument("--only-ok", action="store_true", help="ignore rows whose status is not OK")
    fit.add_argument("--out", help="write the JSON report here")
    m.set_defaults(func=cmd_model)

    v = sub.add_parser("validate", help="check an event log against the invariants")
    v.add_argument("--log", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UserError, *USER_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except PilotkitError as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
