"""
Проверка соответствия mesh политике: перебираем все возможные
коммуникации, для каждой точки захвата определяем роль pod-а, выводим
ожидания из политики и сверяем с захваченным трафиком.
"""
import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import config
from app.exceptions import ChannelError, HarnessError, IncompleteRunError, TransportError, UnknownIdentityError
from app.mesh import CaptureEntry, Mesh, send, success_status
from app.policy import INFLATED_IDENTITY, allow_all_decision, evaluate, path_of, request_context
from app.schemas import (
    AccessControlMatrix, CaptureRecord, CaptureRole, CellDiff, CommunicationCase, EnforcementPoint,
    Expectation, HttpMethod, InterfaceKind, MeshResponse, PolicyDocument, Scalar, SweepMarker,
    Transport, VerificationReport, Violation, Want,
)

logger = logging.getLogger(__name__)

STATUS_FORBIDDEN = 403

Slot = Tuple[CommunicationCase, str, InterfaceKind]

_ROLES = {
    ("source", InterfaceKind.LOOPBACK): CaptureRole.SOURCE_LOOPBACK,
    ("source", InterfaceKind.EXTERNAL): CaptureRole.SOURCE_EXTERNAL,
    ("dest", InterfaceKind.LOOPBACK): CaptureRole.DEST_LOOPBACK,
    ("dest", InterfaceKind.EXTERNAL): CaptureRole.DEST_EXTERNAL,
    ("bystander", InterfaceKind.LOOPBACK): CaptureRole.BYSTANDER_LOOPBACK,
    ("bystander", InterfaceKind.EXTERNAL): CaptureRole.BYSTANDER_EXTERNAL,
}


def enumerate_cases(services: Sequence[str], methods: Sequence[Union[HttpMethod, str]]) -> List[CommunicationCase]:
    """N(N-1)M коммуникаций в лексикографическом порядке (src, dst, method)."""
    names = sorted(services)
    if len(set(names)) != len(names):
        raise HarnessError("имена сервисов повторяются")
    if len(names) < 2:
        raise HarnessError(f"нужно минимум 2 сервиса, передано {len(names)}")
    verbs = sorted({HttpMethod(m) for m in methods}, key=lambda m: m.value)
    if not verbs:
        raise HarnessError("нужен хотя бы один метод")
    return [
        CommunicationCase(src=src, dst=dst, method=method)
        for src in names
        for dst in names
        if src != dst
        for method in verbs
    ]


def required_capture_count(n: int, m: int) -> int:
    """Каждая коммуникация проверяется на 2N интерфейсах: 2(N^3 - N^2)M."""
    if n < 2 or m < 1:
        raise HarnessError(f"некорректные N={n}, M={m}")
    return 2 * (n ** 3 - n ** 2) * m


def classify(pod: str, interface: InterfaceKind, case: CommunicationCase) -> CaptureRole:
    if pod == case.src:
        side = "source"
    elif pod == case.dst:
        side = "dest"
    else:
        side = "bystander"
    return _ROLES[(side, InterfaceKind(interface))]


def _known_identity(policy: PolicyDocument, name: str) -> bool:
    return name in policy.user_roles or any(rule.user == name for rule in policy.allow_rules)


def expected_behavior(
    case: CommunicationCase,
    policy: PolicyDocument,
    services: Sequence[str],
    enforcement_point: EnforcementPoint = EnforcementPoint(config.ENFORCEMENT_POINT),
    clock_hour: int = config.SIM_HOUR,
    extra_attributes: Optional[Dict[str, Scalar]] = None,
    allow_all: bool = False,
) -> List[Expectation]:
    """
    Ожидания по всем 2N слотам коммуникации. Строятся только из политики
    и точки enforcement, состояние симулятора не используется.
    """
    for name in (case.src, case.dst):
        if not _known_identity(policy, name):
            raise UnknownIdentityError(name)

    ctx = request_context(case.src, case.method, path_of(case.dst), clock_hour, extra_attributes)
    decision = allow_all_decision(ctx) if allow_all else evaluate(policy, ctx)

    absent = Want(present=False)
    mtls = Want(present=True, transport=Transport.MTLS)
    ok = success_status(case.method)
    if decision.allowed:
        wants = {
            CaptureRole.SOURCE_LOOPBACK: Want(present=True, transport=Transport.PLAINTEXT_HTTP, method=case.method, status=ok),
            CaptureRole.SOURCE_EXTERNAL: mtls,
            CaptureRole.DEST_EXTERNAL: mtls,
            CaptureRole.DEST_LOOPBACK: Want(present=True, transport=Transport.PLAINTEXT_HTTP, method=case.method, status=ok),
        }
    else:
        forbidden = Want(present=True, transport=Transport.PLAINTEXT_HTTP, method=case.method, status=STATUS_FORBIDDEN)
        # при проверке только на получателе запрещённый запрос всё же пересекает сеть
        crosses = enforcement_point == EnforcementPoint.DESTINATION
        wants = {
            CaptureRole.SOURCE_LOOPBACK: forbidden,
            CaptureRole.SOURCE_EXTERNAL: mtls if crosses else absent,
            CaptureRole.DEST_EXTERNAL: mtls if crosses else absent,
            CaptureRole.DEST_LOOPBACK: absent,
        }

    expectations = []
    for pod in sorted(services):
        for interface in InterfaceKind:
            role = classify(pod, interface, case)
            expectations.append(Expectation(
                case=case, pod=pod, interface=interface, role=role,
                want=wants.get(role, absent),
            ))
    return expectations


def sweep_expectations(
    policy: PolicyDocument,
    services: Sequence[str],
    methods: Sequence[Union[HttpMethod, str]] = config.METHODS,
    **kwargs,
) -> List[Expectation]:
    expectations: List[Expectation] = []
    for case in enumerate_cases(services, methods):
        expectations.extend(expected_behavior(case, policy, services, **kwargs))
    return expectations


def run_case(mesh: Mesh, case: CommunicationCase, path: Optional[str] = None,
             body: Optional[str] = None) -> Optional[MeshResponse]:
    """
    Одна коммуникация между маркерами begin/end. Отказ канала или
    транспорта - наблюдаемый результат, а не ошибка прогона.
    """
    mesh.mark("begin", case)
    try:
        response = send(mesh, case.src, case.dst, case.method, path=path, body=body)
    except (ChannelError, TransportError) as e:
        logger.info(f"{case.label()}: {e}")
        response = getattr(e, "response", None)
    mesh.mark("end", case)
    return response


def run_sweep(mesh: Mesh, cases: Iterable[CommunicationCase]) -> List[Optional[MeshResponse]]:
    return [run_case(mesh, case) for case in cases]


def _bucket(captures: Iterable[CaptureEntry]) -> Tuple[Dict[Slot, List[CaptureRecord]], set, set]:
    buckets: Dict[Slot, List[CaptureRecord]] = defaultdict(list)
    begun, ended = set(), set()
    current: Optional[CommunicationCase] = None
    stray = 0
    for entry in captures:
        if isinstance(entry, SweepMarker):
            if entry.marker == "begin":
                current = entry.case
                begun.add(entry.case)
            else:
                if current == entry.case:
                    ended.add(entry.case)
                current = None
            continue
        if current is None:
            stray += 1
            continue
        buckets[(current, entry.point.pod, entry.point.interface)].append(entry)
    if stray:
        logger.warning(f"{stray} записей захвата вне маркеров прогона пропущено")
    return buckets, begun, ended


def _describe(records: List[CaptureRecord]) -> str:
    if not records:
        return "absent"
    seen = []
    for r in records:
        text = r.transport.value
        if r.http is not None:
            text += f" {r.http.method.value} {r.http.status if r.http.status is not None else 'request'}"
        if text not in seen:
            seen.append(text)
    return "; ".join(seen)


def _matches(records: List[CaptureRecord], want: Want) -> bool:
    if not want.present:
        return not records
    if not records:
        return False
    if want.transport is not None and any(r.transport != want.transport for r in records):
        return False
    if want.method is not None:
        if any(r.http is None or r.http.method != want.method for r in records):
            return False
        if not any(r.http.status is None for r in records):
            return False
    if want.status is not None:
        statuses = {r.http.status for r in records if r.http is not None and r.http.status is not None}
        if statuses != {want.status}:
            return False
    return True


def verify(captures: Iterable[CaptureEntry], expectations: Sequence[Expectation]) -> VerificationReport:
    """Одна проверка на каждый (коммуникация, pod, интерфейс)."""
    buckets, begun, ended = _bucket(captures)

    cases = []
    for e in expectations:
        if e.case not in cases:
            cases.append(e.case)
    missing = [c for c in cases if c not in begun or c not in ended]
    if missing:
        raise IncompleteRunError(
            f"прогон неполный: нет маркеров для {len(missing)} коммуникаций, первая {missing[0].label()}"
        )

    violations: List[Violation] = []
    for e in expectations:
        records = buckets.get((e.case, e.pod, e.interface), [])
        if not _matches(records, e.want):
            violations.append(Violation(
                case=e.case, role=e.role, pod=e.pod, interface=e.interface,
                observed=_describe(records), expected=e.want.describe(),
            ))

    services = {e.pod for e in expectations}
    methods = {e.case.method for e in expectations}
    required = required_capture_count(len(services), len(methods)) if len(services) >= 2 and methods else 0
    total = len(expectations)
    compliant = not violations and total == required
    report = VerificationReport(
        verdict="compliant" if compliant else "violations",
        total_checks=total,
        required_checks=required,
        passes=total - len(violations),
        violations=violations,
    )
    logger.info(f"Проверено {total}/{required} слотов, нарушений: {len(violations)}")
    return report


def violating_cases(report: VerificationReport) -> List[CommunicationCase]:
    seen: List[CommunicationCase] = []
    for v in report.violations:
        if v.case not in seen:
            seen.append(v.case)
    return seen


def extract_matrix(
    policy: PolicyDocument,
    services: Optional[Sequence[str]] = None,
    methods: Sequence[Union[HttpMethod, str]] = config.METHODS,
    clock_hour: int = config.SIM_HOUR,
    extra_attributes: Optional[Dict[str, Scalar]] = None,
    path_template: str = config.PATH_TEMPLATE,
) -> AccessControlMatrix:
    """Матрица доступа политики в заданном контексте (час, атрибуты)."""
    names = list(services) if services is not None else [u for u in policy.identities() if u != INFLATED_IDENTITY]
    verbs = sorted({HttpMethod(m) for m in methods}, key=lambda m: m.value)
    cells: Dict[str, Dict[str, List[HttpMethod]]] = {}
    for src in names:
        for dst in names:
            if src == dst:
                continue
            for method in verbs:
                ctx = request_context(src, method, path_of(dst, path_template), clock_hour, extra_attributes)
                if evaluate(policy, ctx).allowed:
                    cells.setdefault(src, {}).setdefault(dst, []).append(method)
    return AccessControlMatrix(services=names, cells=cells)


def diff_matrix(a: AccessControlMatrix, b: AccessControlMatrix) -> List[CellDiff]:
    ta, tb = a.triples(), b.triples()
    diffs = [CellDiff(src=s, dst=d, method=m, present_in="a") for s, d, m in ta - tb]
    diffs += [CellDiff(src=s, dst=d, method=m, present_in="b") for s, d, m in tb - ta]
    return sorted(diffs, key=lambda c: (c.src, c.dst, c.method.value, c.present_in))


def edge_matrix(services: Sequence[str], edges: Iterable[Tuple[str, str]],
                method: Union[HttpMethod, str] = config.DEFAULT_METHOD) -> AccessControlMatrix:
    """Матрица, в которой разрешены ровно заданные рёбра."""
    cells: Dict[str, Dict[str, List[HttpMethod]]] = {}
    for src, dst in edges:
        cells.setdefault(src, {}).setdefault(dst, []).append(HttpMethod(method))
    return AccessControlMatrix(services=list(services), cells=cells)
