"""
Симуляция развёрнутого mesh: pod = service + proxy + policy-sidecar
(+ capture), mTLS-каналы между proxy, зашифрованные тома агентов,
жизненный цикл pod-ов и захват трафика на каждом интерфейсе.

Ядро однопоточное и упорядочено по виртуальному времени: одинаковые
(workflow, политика, сценарий, seed) дают побайтно одинаковые захваты.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Set, Tuple, Union

import numpy as np
from fastapi.testclient import TestClient
from pydantic import ValidationError

import config
from app import identity
from app.api import create_policy_sidecar
from app.crypto import make_signer, new_volume_key, seal, unseal
from app.db import KeyValueStore
from app.exceptions import (
    ChannelError, DeployError, IdentityError, MeshError, PodNotReadyError, PreconditionError,
    TransportError, UnknownAgentError, VolumeAccessError,
)
from app.policy import add_permission, path_of, request_context
from app.schemas import (
    AgentId, CapturePoint, CaptureRecord, CommunicationCase, ContainerKind, DecisionResponse,
    EnforcementPoint, Fault, FaultKind, HttpMethod, HttpObservation, InterfaceKind, MeshResponse,
    Permission, PodState, PolicyDocument, RequestContext, SimConfig, StartupCost, SweepMarker,
    Transport, WorkflowGraph,
)
from app.workflow import region_of, validate_workflow

logger = logging.getLogger(__name__)

# Независимые потоки случайных чисел: одинаковые draws старта и задержки
# на всех уровнях бенчмарка при одном seed
STARTUP_STREAM = 0
LATENCY_STREAM = 1
CRYPTO_STREAM = 2

DECISION_ENDPOINT = "/v1/data/istio/authz/allow"
POLICIES_ENDPOINT = "/v1/policies"

STATUS_FORBIDDEN = 403
STATUS_UNAVAILABLE = 503
MIN_ELAPSED = 1e-4

# порядок слагаемых стоимости старта и контейнер, к которому они относятся
STARTUP_TERMS = (
    ("scheduling", None),
    ("service", ContainerKind.SERVICE),
    ("proxy", ContainerKind.PROXY),
    ("policy_sidecar", ContainerKind.POLICY_SIDECAR),
    ("capture", ContainerKind.CAPTURE),
)

CaptureEntry = Union[CaptureRecord, SweepMarker]
AgentRef = Union[str, AgentId]


def success_status(method: HttpMethod) -> int:
    return 201 if method == HttpMethod.POST else 200


def service_name(agent: str) -> str:
    return f"{agent}.svc"


def _name(agent: AgentRef) -> str:
    return agent.agent if isinstance(agent, AgentId) else agent


class VirtualClock:
    """Монотонный счётчик тиков; час суток задаёт только драйвер симуляции."""

    def __init__(self, hour_of_day: int = config.SIM_HOUR):
        self.tick = 0
        self.hour_of_day = hour_of_day

    def advance(self, ticks: int = 1) -> int:
        if ticks < 1:
            raise ValueError("часы двигаются только вперёд")
        self.tick += ticks
        return self.tick


@dataclass
class Pod:
    agent: AgentId
    containers: Set[ContainerKind]
    region: str
    volume_key_id: str
    proxy: identity.ProxyIdentity
    sidecar: Optional[TestClient] = None
    state: PodState = PodState.POD_SCHEDULED
    startup_duration: float = 0.0
    fail_open: bool = False

    @property
    def name(self) -> str:
        return self.agent.agent

    @property
    def ready(self) -> bool:
        return self.state == PodState.READY


@dataclass
class SecureChannel:
    endpoints: Tuple[str, str]
    session_id: str
    peer_certificates: Tuple[identity.CertificateRecord, identity.CertificateRecord]
    plaintext: bool = False


@dataclass
class EncryptedVolume:
    owner_agent: AgentId
    key_id: str
    blobs: Dict[str, bytes] = field(default_factory=dict)


class _Consult(NamedTuple):
    allowed: bool
    rules_evaluated: int
    consulted: bool
    reason: str


class Mesh:
    """Состояние одного развёрнутого mesh. Создаётся через deploy()."""

    def __init__(self, graph: WorkflowGraph, policy: PolicyDocument, sim: SimConfig):
        self.graph = graph
        self.active_policy = policy
        self.sim = sim
        self.clock = VirtualClock(sim.hour_of_day)
        self.startup_rng = np.random.default_rng([sim.seed, STARTUP_STREAM])
        self.latency_rng = np.random.default_rng([sim.seed, LATENCY_STREAM])
        self.crypto_rng = np.random.default_rng([sim.seed, CRYPTO_STREAM])

        self.kv = KeyValueStore()
        self.audit = identity.IdentityAudit()
        self.naming = identity.SecureNaming()
        self.control_plane = identity.ControlPlane(self.crypto_rng)
        self.ca = identity.CertificateAuthority(
            signer=make_signer(sim.signature_scheme, self.crypto_rng),
            control_plane=self.control_plane,
            audit=self.audit,
            secure_naming=self.naming,
            lifetime=sim.cert_lifetime,
        )
        self.controller = identity.NodeController(self.ca)

        self.nodes: Dict[str, identity.Kubelet] = {}
        self.node_agents: Dict[str, identity.NodeAgent] = {}
        self.pods: Dict[str, Pod] = {}
        self.volumes: Dict[str, EncryptedVolume] = {}
        self.channels: Dict[FrozenSet[str], SecureChannel] = {}
        self.plaintext_pairs: Set[FrozenSet[str]] = set()
        self.faults: List[Fault] = []
        self.stream: List[CaptureEntry] = []

    @property
    def enforcement_point(self) -> EnforcementPoint:
        return self.sim.enforcement_point

    def pod(self, agent: AgentRef) -> Pod:
        name = _name(agent)
        pod = self.pods.get(name)
        if pod is None:
            raise UnknownAgentError(name)
        return pod

    # Захват трафика

    def capture(self, pod: Pod, kind: InterfaceKind, src_identity: str, dst_identity: str,
                http: Optional[HttpObservation] = None, plaintext: bool = False):
        tick = self.clock.advance()
        if not self.sim.capture:
            return
        transport = Transport.PLAINTEXT_HTTP if kind == InterfaceKind.LOOPBACK or plaintext else Transport.MTLS
        self.stream.append(CaptureRecord(
            point=CapturePoint(pod=pod.name, interface=kind),
            src_identity=src_identity,
            dst_identity=dst_identity,
            transport=transport,
            http=http if transport == Transport.PLAINTEXT_HTTP else None,
            virtual_time=tick,
        ))

    def mark(self, marker: str, case: CommunicationCase):
        tick = self.clock.advance()
        if self.sim.capture:
            self.stream.append(SweepMarker(marker=marker, case=case, virtual_time=tick))

    # Policy sidecar

    def consult(self, pod: Pod, ctx: RequestContext) -> _Consult:
        """Запрос к policy-sidecar через loopback. Не-200 означает deny."""
        if ContainerKind.POLICY_SIDECAR not in pod.containers or pod.sidecar is None:
            return _Consult(True, 0, False, "no policy sidecar")
        if pod.fail_open:
            return _Consult(True, 0, False, "policy sidecar disabled")
        response = pod.sidecar.post(DECISION_ENDPOINT, json={"input": ctx.model_dump(mode="json")})
        if response.status_code != 200:
            logger.warning(f"Policy sidecar {pod.name} ответил {response.status_code}, запрос отклонён")
            return _Consult(False, 0, True, f"policy sidecar answered {response.status_code}")
        decision = DecisionResponse.model_validate(response.json()).result
        return _Consult(decision.allowed, decision.rules_evaluated, True, decision.reason)

    # Каналы

    def open_channel(self, a: Pod, b: Pod) -> SecureChannel:
        """
        Переиспользует открытый канал пары или устанавливает новый после
        взаимной проверки сертификатов. При отказе бросает ChannelError.
        """
        key = frozenset((a.name, b.name))
        channel = self.channels.get(key)
        if channel is not None:
            return channel

        now = self.clock.tick
        for pod in (a, b):
            cert = pod.proxy.certificate
            if cert is None:
                raise ChannelError(f"proxy {pod.name} без идентичности")
            if cert.subject != pod.name:
                raise ChannelError(f"proxy {pod.name} предъявил сертификат {cert.subject}")
            result = identity.verify_cert(cert, now, self.ca, service=service_name(pod.name))
            if not result.ok:
                raise ChannelError(f"сертификат {pod.name} отклонён: {result.reason}")

        channel = SecureChannel(
            endpoints=(a.name, b.name),
            session_id=self.crypto_rng.bytes(8).hex(),
            peer_certificates=(a.proxy.certificate, b.proxy.certificate),
            plaintext=key in self.plaintext_pairs,
        )
        self.channels[key] = channel
        logger.debug(f"Канал {a.name}<->{b.name} установлен, session={channel.session_id}")
        return channel

    def close_channels(self, agent: str):
        for key in [k for k in self.channels if agent in k]:
            del self.channels[key]

    # Модель задержки

    def elapsed(self, a: Pod, b: Pod, consults: int, rules: int, crossed: bool) -> float:
        # оба draw делаются всегда, чтобы уровни бенчмарка шли по одной последовательности
        z_rtt, z_rule = self.latency_rng.standard_normal(2)
        lat = self.sim.latency
        rtt = lat.intra_rtt if a.region == b.region else lat.inter_rtt
        total = consults * lat.sidecar_overhead + rules * (lat.per_rule + z_rule * lat.per_rule_sd)
        if crossed:
            total += rtt.mean + z_rtt * rtt.sd
        return max(MIN_ELAPSED, float(total))

    def close(self):
        for pod in self.pods.values():
            if pod.sidecar is not None:
                pod.sidecar.close()
                pod.sidecar = None
        self.kv.dispose()


def _startup_duration(costs: Dict[str, StartupCost], containers: Set[ContainerKind],
                      rng: np.random.Generator) -> float:
    """
    Сумма стоимостей инициализации контейнеров pod-а. Draw для каждого
    слагаемого делается всегда, а учитывается только для присутствующих.
    """
    total = 0.0
    for name, kind in STARTUP_TERMS:
        cost = costs.get(name, StartupCost(mean=0.0, sd=0.0))
        draw = max(0.0, float(rng.normal(cost.mean, cost.sd)))
        if kind is None or kind in containers:
            total += draw
    return total


def _region(graph: WorkflowGraph, sim: SimConfig, agent: AgentId) -> str:
    return sim.regions.get(agent.agent) or sim.regions.get(agent.actor) or region_of(graph, agent.agent)


def _bootstrap_nodes(mesh: Mesh):
    """Один узел на актора: kubelet проходит bootstrap до выдачи идентичностей pod-ам."""
    for agent in mesh.graph.agents:
        if agent.actor in mesh.nodes:
            continue
        node = identity.Kubelet(name=f"node-{agent.actor}", controller=mesh.controller)
        token = mesh.controller.create_bootstrap_token(mesh.crypto_rng, mesh.clock.tick)
        identity.kubelet_bootstrap(node, token, mesh.clock.advance(), mesh.crypto_rng)
        mesh.nodes[agent.actor] = node
        mesh.node_agents[agent.actor] = identity.NodeAgent(node, mesh.ca, mesh.crypto_rng)


def deploy(graph: WorkflowGraph, policy: PolicyDocument, sim: Optional[SimConfig] = None) -> Mesh:
    """
    Разворачивает pod на каждого агента: идентичность proxy, том с новым
    ключом, policy-sidecar с политикой (если не отключён). Все pod-ы
    переходят в Ready; ошибка выдачи идентичности прерывает deploy.
    """
    sim = sim or SimConfig()
    result = validate_workflow(graph)
    if not result.ok:
        raise DeployError("invalid workflow: " + "; ".join(result.defects))

    covered = set(policy.user_roles) | {rule.user for rule in policy.allow_rules}
    missing = [name for name in graph.agent_names() if name not in covered]
    if missing:
        raise DeployError(f"политика не покрывает агентов: {', '.join(missing)}")

    mesh = Mesh(graph, policy, sim)
    try:
        _bootstrap_nodes(mesh)
        for agent in graph.agents:
            name = agent.agent
            mesh.naming.register(name, service_name(name))
            proxy = identity.ProxyIdentity(
                subject=name,
                service_name=service_name(name),
                node_agent=mesh.node_agents[agent.actor],
            )
            token = mesh.control_plane.issue_service_token(name, mesh.clock.tick)
            identity.proxy_identity_request(proxy, token, mesh.clock.advance())

            key_id = f"vol-{name}"
            mesh.kv.put(key_id, name, new_volume_key(mesh.crypto_rng))
            mesh.volumes[name] = EncryptedVolume(owner_agent=agent, key_id=key_id)

            containers = {ContainerKind.SERVICE, ContainerKind.PROXY}
            sidecar = None
            if not sim.no_policy_sidecar:
                containers.add(ContainerKind.POLICY_SIDECAR)
                app = create_policy_sidecar(policy, allow_all=sim.allow_all)
                sidecar = TestClient(app, raise_server_exceptions=False)
            if sim.capture:
                containers.add(ContainerKind.CAPTURE)

            pod = Pod(
                agent=agent,
                containers=containers,
                region=_region(graph, sim, agent),
                volume_key_id=key_id,
                proxy=proxy,
                sidecar=sidecar,
            )
            pod.startup_duration = _startup_duration(sim.startup_costs, containers, mesh.startup_rng)
            pod.state = PodState.READY
            mesh.pods[name] = pod
            logger.debug(f"Pod {name} Ready за {pod.startup_duration:.3f}s, регион {pod.region}")
    except IdentityError as e:
        mesh.close()
        raise DeployError(f"не удалось выдать идентичность: {e}") from e

    logger.info(f"Mesh развёрнут: {len(mesh.pods)} pod-ов, {len(mesh.nodes)} узлов")
    return mesh


def send(mesh: Mesh, src: AgentRef, dst: AgentRef, method: Union[HttpMethod, str],
         path: Optional[str] = None, body: Optional[str] = None) -> MeshResponse:
    """
    Запрос сервиса src к сервису dst по пути данных:
    loopback src -> proxy src (policy) -> канал -> proxy dst -> loopback dst и обратно.
    """
    src_name, dst_name = _name(src), _name(dst)
    if src_name == dst_name:
        raise PreconditionError(f"{src_name} не может отправлять запрос сам себе")
    src_pod, dst_pod = mesh.pod(src_name), mesh.pod(dst_name)
    for pod in (src_pod, dst_pod):
        if pod.state == PodState.TERMINATED:
            raise TransportError(f"pod {pod.name} уничтожен")
        if not pod.ready:
            raise PodNotReadyError(f"pod {pod.name} в состоянии {pod.state.value}")

    method = HttpMethod(method)
    path = path or path_of(dst_name)
    ctx = request_context(src_name, method, path, mesh.clock.hour_of_day)
    request = HttpObservation(method=method, path=path)

    def response(status: int) -> HttpObservation:
        return HttpObservation(method=method, path=path, status=status)

    consults, rules = 0, 0
    mesh.capture(src_pod, InterfaceKind.LOOPBACK, src_name, dst_name, request)

    if mesh.enforcement_point in (EnforcementPoint.SOURCE, EnforcementPoint.BOTH):
        verdict = mesh.consult(src_pod, ctx)
        consults += verdict.consulted
        rules += verdict.rules_evaluated
        if not verdict.allowed:
            mesh.capture(src_pod, InterfaceKind.LOOPBACK, dst_name, src_name, response(STATUS_FORBIDDEN))
            return MeshResponse(
                status=STATUS_FORBIDDEN, body=verdict.reason,
                elapsed=mesh.elapsed(src_pod, dst_pod, consults, rules, crossed=False),
                rules_evaluated=rules, policy_consulted=bool(consults),
            )

    try:
        channel = mesh.open_channel(src_pod, dst_pod)
    except ChannelError as e:
        # попытка рукопожатия видна на обоих внешних интерфейсах, открытый текст не уходит
        mesh.capture(src_pod, InterfaceKind.EXTERNAL, src_name, dst_name)
        mesh.capture(dst_pod, InterfaceKind.EXTERNAL, src_name, dst_name)
        mesh.capture(src_pod, InterfaceKind.LOOPBACK, dst_name, src_name, response(STATUS_UNAVAILABLE))
        e.response = MeshResponse(
            status=STATUS_UNAVAILABLE, body=str(e),
            elapsed=mesh.elapsed(src_pod, dst_pod, consults, rules, crossed=True),
            rules_evaluated=rules, policy_consulted=bool(consults),
        )
        logger.warning(f"Канал {src_name}->{dst_name} не установлен: {e}")
        raise

    clear = channel.plaintext
    mesh.capture(src_pod, InterfaceKind.EXTERNAL, src_name, dst_name, request, plaintext=clear)
    mesh.capture(dst_pod, InterfaceKind.EXTERNAL, src_name, dst_name, request, plaintext=clear)

    status = success_status(method)
    reply_body = f"{dst_name} accepted {len(body or '')} bytes"
    if mesh.enforcement_point in (EnforcementPoint.DESTINATION, EnforcementPoint.BOTH):
        verdict = mesh.consult(dst_pod, ctx)
        consults += verdict.consulted
        rules += verdict.rules_evaluated
        if not verdict.allowed:
            status, reply_body = STATUS_FORBIDDEN, verdict.reason

    if status != STATUS_FORBIDDEN:
        mesh.capture(dst_pod, InterfaceKind.LOOPBACK, src_name, dst_name, request)
        mesh.capture(dst_pod, InterfaceKind.LOOPBACK, dst_name, src_name, response(status))
    mesh.capture(dst_pod, InterfaceKind.EXTERNAL, dst_name, src_name, response(status), plaintext=clear)
    mesh.capture(src_pod, InterfaceKind.EXTERNAL, dst_name, src_name, response(status), plaintext=clear)
    mesh.capture(src_pod, InterfaceKind.LOOPBACK, dst_name, src_name, response(status))

    return MeshResponse(
        status=status, body=reply_body,
        elapsed=mesh.elapsed(src_pod, dst_pod, consults, rules, crossed=True),
        rules_evaluated=rules, policy_consulted=bool(consults),
    )


def _aad(agent: str, name: str) -> bytes:
    return f"{agent}/{name}".encode("utf-8")


def store_data(mesh: Mesh, agent: AgentRef, name: str, plaintext: bytes):
    agent = _name(agent)
    pod = mesh.pod(agent)
    if not pod.ready:
        raise PodNotReadyError(f"pod {agent} в состоянии {pod.state.value}")
    volume = mesh.volumes[agent]
    key = mesh.kv.get(volume.key_id)
    volume.blobs[name] = seal(key, plaintext, _aad(agent, name), mesh.crypto_rng)


def load_data(mesh: Mesh, agent: AgentRef, name: str, volume: Optional[AgentRef] = None) -> bytes:
    """
    Агент читает только свой том. Чужой том или blob из чужого тома -
    VolumeAccessError; отозванный ключ - VolumeDecryptionError.
    """
    agent = _name(agent)
    pod = mesh.pod(agent)
    owner = _name(volume) if volume is not None else agent
    mesh.pod(owner)
    if owner != agent:
        raise VolumeAccessError(f"{agent} не может читать том {owner}")

    own = mesh.volumes[agent]
    if name not in own.blobs:
        if any(name in v.blobs for a, v in mesh.volumes.items() if a != agent):
            raise VolumeAccessError(f"blob {name} принадлежит тому другого агента")
        raise MeshError(f"в томе {agent} нет blob {name}")

    key = mesh.kv.get(own.key_id)
    if not pod.ready:
        raise PodNotReadyError(f"pod {agent} в состоянии {pod.state.value}")
    return unseal(key, own.blobs[name], _aad(agent, name))


def destroy_pod(mesh: Mesh, agent: AgentRef):
    """Terminated, ключ тома и сертификат proxy отозваны. Повторный вызов ничего не делает."""
    pod = mesh.pod(agent)
    if pod.state == PodState.TERMINATED:
        return
    pod.state = PodState.TERMINATED
    mesh.kv.revoke(pod.volume_key_id)
    if pod.proxy.certificate is not None:
        mesh.ca.revoke(pod.proxy.certificate.serial)
    mesh.close_channels(pod.name)
    if pod.sidecar is not None:
        pod.sidecar.close()
        pod.sidecar = None
    logger.info(f"Pod {pod.name} уничтожен")


def rotate_identity(mesh: Mesh, agent: AgentRef) -> identity.CertificateRecord:
    """Ротация идентичности proxy. Открытые каналы продолжают работать до закрытия."""
    pod = mesh.pod(agent)
    token = mesh.control_plane.issue_service_token(pod.name, mesh.clock.tick)
    return identity.rotate(pod.proxy, mesh.clock.advance(), token=token)


def _tampered(cert: identity.CertificateRecord) -> identity.CertificateRecord:
    signature = bytearray(cert.signature)
    signature[0] ^= 0x01
    return cert.model_copy(update={"signature": bytes(signature)})


def inject_fault(mesh: Mesh, fault: Fault):
    for target in fault.targets:
        mesh.pod(target)

    if fault.kind == FaultKind.DISABLE_POLICY_SIDECAR:
        mesh.pod(fault.targets[0]).fail_open = True

    elif fault.kind == FaultKind.PLAINTEXT_CHANNEL:
        a, b = fault.targets
        if a == b:
            raise PreconditionError("plaintext_channel требует двух разных агентов")
        pair = frozenset((a, b))
        mesh.plaintext_pairs.add(pair)
        mesh.channels.pop(pair, None)

    elif fault.kind == FaultKind.ROGUE_EDGE:
        src, dst = fault.targets
        if src == dst:
            raise PreconditionError("rogue_edge требует двух разных агентов")
        permission = Permission(method=HttpMethod(config.DEFAULT_METHOD), path=path_of(dst))
        mesh.active_policy = add_permission(mesh.active_policy, src, permission)
        payload = mesh.active_policy.model_dump(mode="json")
        for pod in mesh.pods.values():
            if pod.sidecar is None:
                continue
            response = pod.sidecar.put(POLICIES_ENDPOINT, json=payload)
            if response.status_code != 200:
                raise MeshError(f"sidecar {pod.name} не принял политику: {response.status_code}")

    elif fault.kind == FaultKind.TAMPER_CERTIFICATE:
        pod = mesh.pod(fault.targets[0])
        if pod.proxy.certificate is None:
            raise PreconditionError(f"у proxy {pod.name} нет сертификата")
        pod.proxy.certificate = _tampered(pod.proxy.certificate)
        mesh.close_channels(pod.name)

    mesh.faults.append(fault)
    logger.warning(f"Внедрён сбой {fault.label()}")


def collect_captures(mesh: Mesh) -> List[CaptureRecord]:
    records = [e for e in mesh.stream if isinstance(e, CaptureRecord)]
    return sorted(records, key=lambda r: r.virtual_time)


def dump_captures(entries: List[CaptureEntry]) -> str:
    return "".join(entry.model_dump_json() + "\n" for entry in entries)


def load_captures(path) -> List[CaptureEntry]:
    """JSON-lines захвата: записи и маркеры прогона вперемешку, в порядке времени."""
    entries: List[CaptureEntry] = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise MeshError(f"не удалось прочитать захват {path}: {e}") from e
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if isinstance(data, dict) and "marker" in data:
                entries.append(SweepMarker.model_validate(data))
            else:
                entries.append(CaptureRecord.model_validate(data))
        except (ValueError, ValidationError) as e:
            raise MeshError(f"{path}:{number}: некорректная запись захвата: {e}") from e
    return entries
