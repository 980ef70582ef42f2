from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import Dict, List, Literal, Optional, Tuple, Union
import enum
import math

import config


Scalar = Union[int, str]


class HttpMethod(str, enum.Enum):
    GET = "GET"
    POST = "POST"
    PUT = "PUT"
    DELETE = "DELETE"


class Comparator(str, enum.Enum):
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    EQ = "=="


class Verdict(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


class EnforcementPoint(str, enum.Enum):
    SOURCE = "source"
    DESTINATION = "destination"
    BOTH = "both"


class InterfaceKind(str, enum.Enum):
    LOOPBACK = "loopback"
    EXTERNAL = "external"


class Transport(str, enum.Enum):
    PLAINTEXT_HTTP = "plaintext_http"
    MTLS = "mtls"


class PodState(str, enum.Enum):
    POD_SCHEDULED = "PodScheduled"
    READY = "Ready"
    TERMINATED = "Terminated"


class ContainerKind(str, enum.Enum):
    SERVICE = "service"
    PROXY = "proxy"
    POLICY_SIDECAR = "policy_sidecar"
    CAPTURE = "capture"


class CaptureRole(str, enum.Enum):
    SOURCE_LOOPBACK = "source_loopback"
    SOURCE_EXTERNAL = "source_external"
    DEST_LOOPBACK = "dest_loopback"
    DEST_EXTERNAL = "dest_external"
    BYSTANDER_LOOPBACK = "bystander_loopback"
    BYSTANDER_EXTERNAL = "bystander_external"


class FaultKind(str, enum.Enum):
    DISABLE_POLICY_SIDECAR = "disable_policy_sidecar"
    PLAINTEXT_CHANNEL = "plaintext_channel"
    ROGUE_EDGE = "rogue_edge"
    TAMPER_CERTIFICATE = "tamper_certificate"


def normalize_path(path: str) -> str:
    if not path.startswith("/"):
        raise ValueError("путь ресурса должен начинаться с '/'")
    if len(path) > 1:
        path = path.rstrip("/") or "/"
    return path


# Workflow

class AgentId(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    actor: str = Field(..., min_length=1, description="Актор (владелец или подрядчик)")
    agent: str = Field(..., min_length=1, description="Каноническое имя агента")


class WorkflowEdge(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    src: str = Field(..., min_length=1)
    dst: str = Field(..., min_length=1)


class WorkflowGraph(BaseModel):
    """
    Workflow владельца данных: агенты и рёбра потока данных.
    Формат совпадает с JSON-файлом workflow, лишние поля запрещены.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    owner: str = Field(..., min_length=1, description="Имя агента-владельца")
    agents: List[AgentId]
    edges: List[WorkflowEdge] = Field(default_factory=list)
    metadata: Dict[str, str] = Field(default_factory=dict)

    def agent_names(self) -> List[str]:
        return [a.agent for a in self.agents]

    def actor_of(self, agent: str) -> Optional[str]:
        for a in self.agents:
            if a.agent == agent:
                return a.actor
        return None


class NumberedEdge(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(..., ge=1)
    src: str
    dst: str


class ValidationResult(BaseModel):
    defects: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.defects


# Policy

class Permission(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: HttpMethod
    path: str

    @field_validator("path")
    def validate_path(cls, v):
        return normalize_path(v)


class AttributeCondition(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    attribute: str = Field(..., min_length=1)
    comparator: Comparator
    value: Scalar


class TimeWindow(BaseModel):
    """
    Окно часов [min_hour, max_hour], границы включительно.
    Если min_hour > max_hour, окно переходит через полночь
    (hour >= min_hour или hour <= max_hour). Флаг literal воспроизводит
    буквальную конъюнкцию Rego, которая в этом случае невыполнима.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    min_hour: int = Field(..., ge=0, le=23)
    max_hour: int = Field(..., ge=0, le=23)
    zone_label: str = config.TIME_ZONE_LABEL
    literal: bool = False

    def contains(self, hour: int) -> bool:
        if self.min_hour <= self.max_hour:
            return self.min_hour <= hour <= self.max_hour
        if self.literal:
            return False
        return hour >= self.min_hour or hour <= self.max_hour


class AllowRule(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    user: str = Field(..., min_length=1)
    require_rbac: bool = True
    attribute_conditions: List[AttributeCondition] = Field(default_factory=list)
    # все окна должны содержать час запроса
    time_windows: List[TimeWindow] = Field(default_factory=list)

    @model_validator(mode="after")
    def reject_unconditional(self):
        if not self.require_rbac and not self.attribute_conditions and not self.time_windows:
            raise ValueError(f"правило для '{self.user}' без условий разрешало бы всё")
        return self


class PolicyDocument(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    default_decision: Literal["deny"] = "deny"
    user_roles: Dict[str, List[str]] = Field(default_factory=dict)
    role_permissions: Dict[str, List[Permission]] = Field(default_factory=dict)
    user_attributes: Dict[str, Dict[str, Scalar]] = Field(default_factory=dict)
    allow_rules: List[AllowRule] = Field(default_factory=list)

    def identities(self) -> List[str]:
        return list(self.user_roles)


class RequestContext(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    authorization_header: str = ""
    method: HttpMethod
    path: str
    clock_hour: int = Field(..., ge=0, le=23)
    extra_attributes: Dict[str, Scalar] = Field(default_factory=dict)

    @field_validator("path")
    def validate_path(cls, v):
        return normalize_path(v)


class Decision(BaseModel):
    model_config = ConfigDict(frozen=True)

    verdict: Verdict
    matched_rule_index: Optional[int] = None
    reason: str
    rules_evaluated: int = Field(0, ge=0)
    user: Optional[str] = None

    @model_validator(mode="after")
    def allow_has_rule(self):
        if self.verdict == Verdict.ALLOW and self.matched_rule_index is None:
            raise ValueError("allow без сработавшего правила")
        return self

    @property
    def allowed(self) -> bool:
        return self.verdict == Verdict.ALLOW


class DecisionQuery(BaseModel):
    input: RequestContext


class DecisionResponse(BaseModel):
    result: Decision


# Mesh

class StartupCost(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mean: float = Field(..., ge=0)
    sd: float = Field(..., ge=0)


class LatencyModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    intra_rtt: StartupCost = StartupCost(mean=config.LATENCY["intra_rtt"][0], sd=config.LATENCY["intra_rtt"][1])
    inter_rtt: StartupCost = StartupCost(mean=config.LATENCY["inter_rtt"][0], sd=config.LATENCY["inter_rtt"][1])
    sidecar_overhead: float = Field(config.LATENCY["sidecar_overhead"], ge=0)
    per_rule: float = Field(config.LATENCY["per_rule"], ge=0)
    per_rule_sd: float = Field(config.LATENCY["per_rule_sd"], ge=0)


def _default_startup_costs() -> Dict[str, StartupCost]:
    return {name: StartupCost(mean=m, sd=s) for name, (m, s) in config.STARTUP_COSTS.items()}


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    enforcement_point: EnforcementPoint = EnforcementPoint(config.ENFORCEMENT_POINT)
    no_policy_sidecar: bool = False
    allow_all: bool = Field(False, description="Режим 'all allow': sidecar без правил разрешает всё")
    capture: bool = True
    seed: int = config.SIM_SEED
    hour_of_day: int = Field(config.SIM_HOUR, ge=0, le=23)
    startup_costs: Dict[str, StartupCost] = Field(default_factory=_default_startup_costs)
    latency: LatencyModel = Field(default_factory=LatencyModel)
    regions: Dict[str, str] = Field(default_factory=dict, description="Переопределения регионов по актору или агенту")
    cert_lifetime: int = Field(config.CERT_LIFETIME_TICKS, gt=0)
    signature_scheme: Literal["hmac", "ed25519"] = config.SIGNATURE_SCHEME


class MeshResponse(BaseModel):
    """Ответ на send: статус, тело и смоделированное время round trip."""
    model_config = ConfigDict(frozen=True)

    status: int
    body: Optional[str] = None
    elapsed: float = Field(0.0, ge=0, description="Секунды, по модели задержки")
    rules_evaluated: int = Field(0, ge=0)
    policy_consulted: bool = False


FAULT_ALIASES = {
    "disable-policy": FaultKind.DISABLE_POLICY_SIDECAR,
    "plaintext": FaultKind.PLAINTEXT_CHANNEL,
    "rogue-edge": FaultKind.ROGUE_EDGE,
    "tamper-cert": FaultKind.TAMPER_CERTIFICATE,
}


class Fault(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: FaultKind
    targets: Tuple[str, ...]

    @model_validator(mode="after")
    def check_arity(self):
        want = 1 if self.kind in (FaultKind.DISABLE_POLICY_SIDECAR, FaultKind.TAMPER_CERTIFICATE) else 2
        if len(self.targets) != want:
            raise ValueError(f"{self.kind.value} ожидает {want} цель(и)")
        return self

    @classmethod
    def parse(cls, text: str) -> "Fault":
        """Разбирает 'disable-policy:vfx-2' или 'plaintext:owner,vfx-1'."""
        name, sep, rest = text.partition(":")
        if not sep or not rest:
            raise ValueError(f"некорректная спецификация сбоя: {text!r}")
        kind = FAULT_ALIASES.get(name)
        if kind is None:
            try:
                kind = FaultKind(name)
            except ValueError:
                raise ValueError(f"неизвестный вид сбоя: {name!r}") from None
        return cls(kind=kind, targets=tuple(t.strip() for t in rest.split(",")))

    def label(self) -> str:
        return f"{self.kind.value}:{','.join(self.targets)}"


class CapturePoint(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    pod: str
    interface: InterfaceKind


class HttpObservation(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    method: HttpMethod
    path: str
    status: Optional[int] = None  # None у запроса, код у ответа


class CaptureRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    point: CapturePoint
    src_identity: str
    dst_identity: str
    transport: Transport
    http: Optional[HttpObservation] = None
    virtual_time: int = Field(..., ge=0)

    @model_validator(mode="after")
    def http_only_in_clear(self):
        # шифротекст на точке захвата непрозрачен
        if (self.http is not None) != (self.transport == Transport.PLAINTEXT_HTTP):
            raise ValueError("http-поля присутствуют тогда и только тогда, когда transport=plaintext_http")
        return self


class CommunicationCase(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    src: str
    dst: str
    method: HttpMethod

    @model_validator(mode="after")
    def no_self_communication(self):
        if self.src == self.dst:
            raise ValueError("src и dst совпадают")
        return self

    def label(self) -> str:
        return f"{self.src}->{self.dst} {self.method.value}"


class SweepMarker(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    marker: Literal["begin", "end"]
    case: CommunicationCase
    virtual_time: int = Field(..., ge=0)


class RunManifest(BaseModel):
    subcommand: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    config: Dict[str, object] = Field(default_factory=dict)
    seed: Optional[int] = None
    faults: List[str] = Field(default_factory=list)
    timestamp: str
    outputs: Dict[str, str] = Field(default_factory=dict)


# Harness

class Want(BaseModel):
    model_config = ConfigDict(frozen=True)

    present: bool
    transport: Optional[Transport] = None
    method: Optional[HttpMethod] = None
    status: Optional[int] = None

    def describe(self) -> str:
        if not self.present:
            return "absent"
        parts = [self.transport.value if self.transport else "any"]
        if self.method:
            parts.append(self.method.value)
        if self.status is not None:
            parts.append(str(self.status))
        return " ".join(parts)


class Expectation(BaseModel):
    model_config = ConfigDict(frozen=True)

    case: CommunicationCase
    pod: str
    interface: InterfaceKind
    role: CaptureRole
    want: Want


class Violation(BaseModel):
    case: CommunicationCase
    role: CaptureRole
    pod: str
    interface: InterfaceKind
    observed: str
    expected: str


class VerificationReport(BaseModel):
    verdict: Literal["compliant", "violations"]
    total_checks: int
    required_checks: int
    passes: int
    violations: List[Violation] = Field(default_factory=list)


class AccessControlMatrix(BaseModel):
    """Строки — источник, столбцы — получатель, ячейка — разрешённые методы."""
    services: List[str]
    cells: Dict[str, Dict[str, List[HttpMethod]]] = Field(default_factory=dict)

    def allowed(self, src: str, dst: str) -> List[HttpMethod]:
        return self.cells.get(src, {}).get(dst, [])

    def triples(self) -> set:
        return {
            (src, dst, m)
            for src, row in self.cells.items()
            for dst, methods in row.items()
            for m in methods
        }


class CellDiff(BaseModel):
    model_config = ConfigDict(frozen=True)

    src: str
    dst: str
    method: HttpMethod
    present_in: Literal["a", "b"]


# Stats

class SampleSet(BaseModel):
    """Измерения одного уровня (секунды)."""
    model_config = ConfigDict(frozen=True)

    label: str
    values: List[float]

    @field_validator("values")
    def validate_values(cls, v):
        if len(v) < 2:
            raise ValueError("в выборке должно быть минимум 2 значения")
        if not all(math.isfinite(x) for x in v):
            raise ValueError("значения выборки должны быть конечными")
        return v


class Summary(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str = ""
    n: int
    mean: float
    sd: float


class TTestResult(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    t: float
    df: int
    p: float = Field(..., ge=0, le=1)
    cohen_d: float


class AnovaResult(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    F: float = Field(..., ge=0)
    df_between: int
    df_within: int
    p: float = Field(..., ge=0, le=1)
    eta_sq_partial: float = Field(..., ge=0, le=1)


class PairwiseResult(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    pair: Tuple[str, str]
    mean_diff: float
    t: float
    df: int
    p: float
    p_adjusted: float
    significant: bool


class StatsReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    kind: Literal["ttest", "anova", "pairwise"]
    groups: List[Summary]
    ttest: Optional[TTestResult] = None
    anova: Optional[AnovaResult] = None
    pairwise: List[PairwiseResult] = Field(default_factory=list)
    alpha: float = config.ALPHA
