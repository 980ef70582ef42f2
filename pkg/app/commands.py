"""
Подкоманды CLI. Каждая возвращает код выхода: 0 успех/allow/compliant,
1 отрицательный результат (deny/нарушения), 2 ошибка использования или входных данных.
"""
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

import config
from app import bench, harness, stats
from app.exceptions import (
    BenchError, DeployError, HarnessError, IdentityError, MeshError, PolicyError, StatsError,
    WorkflowError, WorkflowValidationError,
)
from app.mesh import collect_captures, deploy, dump_captures, inject_fault, load_captures
from app.poc import poc_policy, poc_workflow
from app.policy import (
    attach_time_constraint, compile_from_workflow, dump_policy, evaluate, load_policy, permission_count,
)
from app.schemas import (
    CommunicationCase, EnforcementPoint, Fault, HttpMethod, RequestContext, RunManifest, SimConfig,
    StatsReport, TimeWindow,
)
from app.security import basic_credentials
from app.workflow import load_workflow

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_ERROR = 2


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_ERROR


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8", newline="\n") as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(str(tmp), str(path))


def manifest_path(out) -> Path:
    return Path(f"{out}.manifest.json")


def write_manifest(out, subcommand: str, inputs: Dict[str, str], run_config: Dict[str, object],
                   outputs: Dict[str, str], seed: Optional[int] = None, faults: Optional[List[str]] = None):
    manifest = RunManifest(
        subcommand=subcommand,
        inputs=inputs,
        config=run_config,
        seed=seed,
        faults=faults or [],
        # единственное поле, зависящее от настенных часов
        timestamp=datetime.now(timezone.utc).isoformat(),
        outputs=outputs,
    )
    atomic_write_text(manifest_path(out), manifest.model_dump_json(indent=2) + "\n")


def parse_pairs(items: Optional[List[str]], what: str) -> Dict[str, str]:
    pairs = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"{what} ожидает KEY=VALUE, получено {item!r}")
        pairs[key] = value
    return pairs


def _scalar(value: str):
    try:
        return int(value)
    except ValueError:
        return value


def parse_methods(text: str) -> List[HttpMethod]:
    return [HttpMethod(m.strip().upper()) for m in text.split(",") if m.strip()]


def cmd_compile(args) -> int:
    try:
        graph = load_workflow(args.workflow)
        policy = compile_from_workflow(graph, HttpMethod(args.method.upper()), args.path_template)
        for agent, window in parse_pairs(args.time_window, "--time-window").items():
            low, sep, high = window.partition("-")
            if not sep:
                raise ValueError(f"окно времени ожидается как MIN-MAX, получено {window!r}")
            policy = attach_time_constraint(policy, agent, TimeWindow(min_hour=int(low), max_hour=int(high)))
    except WorkflowValidationError as e:
        for defect in e.defects:
            print(f"defect: {defect}", file=sys.stderr)
        return EXIT_ERROR
    except (WorkflowError, PolicyError, ValueError, ValidationError) as e:
        return _fail(str(e))

    atomic_write_text(args.out, dump_policy(policy))
    write_manifest(
        args.out, "compile",
        inputs={"workflow": str(args.workflow)},
        run_config={"method": args.method.upper(), "path_template": args.path_template,
                    "time_windows": list(args.time_window or [])},
        outputs={"policy": str(args.out)},
    )
    print(f"{permission_count(policy)} permissions")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        policy = load_policy(args.policy)
        attrs = {k: _scalar(v) for k, v in parse_pairs(args.attr, "--attr").items()}
        ctx = RequestContext(
            authorization_header=basic_credentials(args.user, args.password),
            method=HttpMethod(args.method.upper()),
            path=args.path,
            clock_hour=args.hour,
            extra_attributes=attrs,
        )
    except (PolicyError, ValueError, ValidationError) as e:
        return _fail(str(e))

    decision = evaluate(policy, ctx)
    print(decision.model_dump_json())
    return EXIT_OK if decision.allowed else EXIT_NEGATIVE


def _load_script(path) -> List[dict]:
    steps = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(steps, list):
        raise ValueError("сценарий должен быть JSON-списком шагов")
    return steps


def cmd_simulate(args) -> int:
    try:
        graph = load_workflow(args.workflow)
        policy = load_policy(args.policy)
        methods = parse_methods(args.methods)
        faults = [Fault.parse(text) for text in args.fault or []]
        sim = SimConfig(
            enforcement_point=EnforcementPoint(args.enforcement_point),
            no_policy_sidecar=args.no_policy_sidecar,
            allow_all=args.allow_all,
            seed=args.seed,
            hour_of_day=args.hour,
            signature_scheme=args.signature_scheme,
        )
        steps = _load_script(args.script) if args.script else None
    except (WorkflowError, PolicyError, ValueError, ValidationError, OSError) as e:
        return _fail(str(e))

    try:
        mesh = deploy(graph, policy, sim)
    except (DeployError, IdentityError) as e:
        return _fail(f"deploy failed: {e}")

    try:
        for fault in faults:
            inject_fault(mesh, fault)
        if steps is None:
            harness.run_sweep(mesh, harness.enumerate_cases(graph.agent_names(), methods))
        else:
            for step in steps:
                case = CommunicationCase(src=step["src"], dst=step["dst"], method=step.get("method", config.DEFAULT_METHOD))
                harness.run_case(mesh, case, path=step.get("path"), body=step.get("body"))
    except (MeshError, HarnessError, KeyError, ValueError, ValidationError) as e:
        mesh.close()
        return _fail(str(e))

    audit_path = args.audit or f"{args.out}.identity.jsonl"
    atomic_write_text(args.out, dump_captures(mesh.stream))
    atomic_write_text(audit_path, mesh.audit.to_jsonl())
    write_manifest(
        args.out, "simulate",
        inputs={"workflow": str(args.workflow), "policy": str(args.policy),
                **({"script": str(args.script)} if args.script else {})},
        run_config={
            **sim.model_dump(mode="json", include={"enforcement_point", "no_policy_sidecar", "allow_all",
                                                   "hour_of_day", "signature_scheme"}),
            "methods": [m.value for m in methods],
            "services": graph.agent_names(),
            "mode": "script" if steps is not None else "sweep",
        },
        seed=args.seed,
        faults=[f.label() for f in mesh.faults],
        outputs={"captures": str(args.out), "identity_audit": str(audit_path)},
    )
    print(f"{len(mesh.pods)} pods, {len(collect_captures(mesh))} capture records")
    mesh.close()
    return EXIT_OK


def _read_run_config(captures) -> Dict[str, object]:
    path = manifest_path(captures)
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8")).get("config", {})


def cmd_verify(args) -> int:
    try:
        policy = load_policy(args.policy)
        entries = load_captures(args.captures)
        run = _read_run_config(args.captures)
        services = run.get("services") or [u for u in policy.identities()]
        expectations = harness.sweep_expectations(
            policy,
            services,
            methods=run.get("methods", list(config.METHODS)),
            enforcement_point=EnforcementPoint(run.get("enforcement_point", config.ENFORCEMENT_POINT)),
            clock_hour=int(run.get("hour_of_day", config.SIM_HOUR)),
            allow_all=bool(run.get("allow_all") or run.get("no_policy_sidecar")),
        )
        report = harness.verify(entries, expectations)
    except (PolicyError, MeshError, HarnessError, ValueError, ValidationError) as e:
        return _fail(str(e))

    atomic_write_text(args.report, report.model_dump_json(indent=2) + "\n")
    write_manifest(
        args.report, "verify",
        inputs={"policy": str(args.policy), "captures": str(args.captures)},
        run_config=run,
        outputs={"report": str(args.report)},
    )
    print(f"{report.verdict}: {report.passes}/{report.total_checks} checks passed, "
          f"{len(report.violations)} violations")
    for v in report.violations:
        print(f"  {v.case.label()} {v.role.value}@{v.pod}: expected {v.expected}, observed {v.observed}")
    return EXIT_OK if report.verdict == "compliant" else EXIT_NEGATIVE


def cmd_bench(args) -> int:
    levels = [l.strip() for l in args.levels.split(",")] if args.levels else list(
        config.STARTUP_LEVELS if args.kind == "startup" else config.BENCH_LEVELS)
    try:
        graph = load_workflow(args.workflow) if args.workflow else poc_workflow()
        policy = load_policy(args.policy) if args.policy else poc_policy()
        for level in levels:
            bench.level_setup(level, policy)
        if args.kind == "startup":
            samples = config.STARTUP_SAMPLES if args.samples is None else args.samples
            rows = bench.startup_bench(graph, policy, levels, samples, args.seed)
            text = bench.rows_to_csv(rows, "pod")
        else:
            samples = config.REQUEST_SAMPLES if args.samples is None else args.samples
            rows = bench.request_bench(graph, policy, levels, samples, args.seed)
            text = bench.rows_to_csv(rows, "region")
    except (BenchError, WorkflowError, PolicyError, DeployError, ValueError, ValidationError) as e:
        return _fail(str(e))

    atomic_write_text(args.out, text)
    write_manifest(
        args.out, "bench",
        inputs={"workflow": str(args.workflow or "poc"), "policy": str(args.policy or "poc")},
        run_config={"kind": args.kind, "levels": levels, "samples": samples},
        seed=args.seed,
        outputs={"csv": str(args.out)},
    )
    print(f"{len(rows)} samples written to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    try:
        where = parse_pairs(args.where, "--where")
        groups = stats.read_samples(args.csv, where)
        report = StatsReport(kind=args.kind, groups=stats.summaries(groups))
        if args.kind == "ttest":
            a, b = stats.split_pair(groups)
            report.ttest = stats.t_test(a, b)
        elif args.kind == "anova":
            report.anova = stats.anova(groups)
        else:
            report.pairwise = stats.pairwise(groups, args.alpha)
    except (StatsError, ValueError, ValidationError) as e:
        return _fail(str(e))

    atomic_write_text(args.out, report.model_dump_json(indent=2) + "\n")
    write_manifest(
        args.out, "stats",
        inputs={"csv": str(args.csv)},
        run_config={"kind": args.kind, "where": where, "alpha": args.alpha},
        outputs={"report": str(args.out)},
    )
    if report.ttest is not None:
        r = report.ttest
        print(f"t({r.df}) = {r.t:.2f}, p = {r.p:.3g}, d = {r.cohen_d:.3f}")
    elif report.anova is not None:
        r = report.anova
        print(f"F({r.df_between}, {r.df_within}) = {r.F:.2f}, p = {r.p:.3g}, eta_p^2 = {r.eta_sq_partial:.2f}")
    else:
        for r in report.pairwise:
            mark = "*" if r.significant else " "
            print(f"{mark} {r.pair[0]} vs {r.pair[1]}: diff = {r.mean_diff:.6f}, p_adj = {r.p_adjusted:.3g}")
    return EXIT_OK
