"""
Цепочка идентичности mesh: TLS-bootstrap kubelet-а по одноразовому токену,
выдача сертификатов прокси через node agent и CA по JWT, ротация,
secure naming. Время — тики виртуальных часов, стены не читаем.
"""
import hmac
import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import enum
import numpy as np
from jose import JWTError, jwt as jose_jwt
from pydantic import BaseModel, ConfigDict, Field, model_validator

import config
from app.crypto import KeyPair, Signer, fingerprint, generate_keypair, verify_proof
from app.exceptions import (
    CAUnavailableError, CsrRejectedError, IdentityError, JwtRejectedError, TokenRejectedError,
)

logger = logging.getLogger(__name__)


class IdentityEvent(str, enum.Enum):
    BOOTSTRAP = "bootstrap"
    ISSUE = "issue"
    ROTATE = "rotate"
    VERIFY_FAIL = "verify_fail"


class AuditEntry(BaseModel):
    event: IdentityEvent
    subject: str
    serial: Optional[int] = None
    tick: int


class IdentityAudit:
    def __init__(self):
        self.entries: List[AuditEntry] = []

    def record(self, event: IdentityEvent, subject: str, serial: Optional[int], tick: int):
        entry = AuditEntry(event=event, subject=subject, serial=serial, tick=tick)
        self.entries.append(entry)
        logger.debug(f"identity {event.value}: subject={subject} serial={serial} tick={tick}")

    def to_jsonl(self) -> str:
        return "".join(e.model_dump_json() + "\n" for e in self.entries)


class BootstrapToken(BaseModel):
    model_config = ConfigDict(frozen=True)

    token_id: str
    secret: bytes
    usage_budget: int = Field(..., ge=0)
    expiry: int


class CertificateSigningRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject: str = Field(..., min_length=1)
    public_key_fingerprint: bytes
    nonce: bytes
    public_key: bytes
    proof: bytes


class CertificateRecord(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_bytes="base64")

    subject: str
    issuer: str
    serial: int
    not_before: int
    not_after: int
    public_key_fingerprint: bytes
    signature: bytes = b""

    @model_validator(mode="after")
    def check_window(self):
        if self.not_before >= self.not_after:
            raise ValueError("not_before должен быть меньше not_after")
        return self

    def signed_payload(self) -> bytes:
        body = {
            "subject": self.subject,
            "issuer": self.issuer,
            "serial": self.serial,
            "not_before": self.not_before,
            "not_after": self.not_after,
            "public_key_fingerprint": self.public_key_fingerprint.hex(),
        }
        return json.dumps(body, sort_keys=True, separators=(",", ":")).encode("utf-8")


class AuthToken(BaseModel):
    """JWT сервисного аккаунта, которым прокси подтверждает запрос идентичности."""
    model_config = ConfigDict(frozen=True)

    subject: str
    audience: str
    expiry: int
    encoded: str

    @property
    def signature(self) -> bytes:
        return self.encoded.rsplit(".", 1)[-1].encode("ascii")


class VerifyResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    ok: bool
    reason: Optional[str] = None


class SecureNaming:
    """Идентичность -> имя сервиса, строится только из состояния оркестратора."""

    def __init__(self):
        self.entries: Dict[str, str] = {}

    def register(self, identity: str, service: str):
        current = self.entries.get(identity)
        if current is not None and current != service:
            raise IdentityError(f"{identity} уже сопоставлен сервису {current}")
        self.entries[identity] = service

    def service_of(self, identity: str) -> Optional[str]:
        return self.entries.get(identity)


class ControlPlane:
    """Выпускает и проверяет JWT сервисных аккаунтов."""

    def __init__(self, rng: np.random.Generator, audience: str = config.JWT_AUDIENCE,
                 lifetime: int = config.JWT_LIFETIME_TICKS):
        self._key = rng.bytes(32).hex()
        self.audience = audience
        self.lifetime = lifetime

    def issue_service_token(self, subject: str, now: int, lifetime: Optional[int] = None) -> AuthToken:
        expiry = now + (self.lifetime if lifetime is None else lifetime)
        claims = {"sub": subject, "aud": self.audience, "exp_tick": expiry}
        encoded = jose_jwt.encode(claims, self._key, algorithm=config.JWT_ALGORITHM)
        return AuthToken(subject=subject, audience=self.audience, expiry=expiry, encoded=encoded)

    def authenticate(self, token: AuthToken, now: int) -> str:
        try:
            claims = jose_jwt.decode(
                token.encoded, self._key,
                algorithms=[config.JWT_ALGORITHM],
                audience=self.audience,
                options={"verify_exp": False},
            )
        except JWTError as e:
            raise JwtRejectedError(f"JWT не прошёл проверку: {e}") from e
        if int(claims.get("exp_tick", -1)) <= now:
            raise JwtRejectedError("JWT истёк")
        return claims["sub"]


class CertificateAuthority:
    """
    CA mesh-а. Запросы обрабатываются строго по очереди (lock),
    серийные номера уникальны в пределах CA.
    """

    def __init__(self, signer: Signer, control_plane: ControlPlane, audit: IdentityAudit,
                 secure_naming: SecureNaming, name: str = config.CA_NAME,
                 lifetime: int = config.CERT_LIFETIME_TICKS):
        self.name = name
        self.signer = signer
        self.control_plane = control_plane
        self.audit = audit
        self.secure_naming = secure_naming
        self.lifetime = lifetime
        self.available = True
        self._serial = 0
        self._revoked: set = set()
        self._lock = threading.Lock()

    def _check_csr(self, csr: CertificateSigningRequest):
        if fingerprint(csr.public_key) != csr.public_key_fingerprint:
            raise CsrRejectedError(f"CSR {csr.subject}: отпечаток не совпадает с ключом")
        if not verify_proof(csr.public_key, csr.nonce, csr.proof):
            raise CsrRejectedError(f"CSR {csr.subject}: нет доказательства владения ключом")

    def issue(self, csr: CertificateSigningRequest, now: int) -> CertificateRecord:
        with self._lock:
            if not self.available:
                raise CAUnavailableError("CA недоступен")
            self._check_csr(csr)
            self._serial += 1
            unsigned = CertificateRecord(
                subject=csr.subject,
                issuer=self.name,
                serial=self._serial,
                not_before=now,
                not_after=now + self.lifetime,
                public_key_fingerprint=csr.public_key_fingerprint,
            )
            cert = unsigned.model_copy(update={"signature": self.signer.sign(unsigned.signed_payload())})
        self.audit.record(IdentityEvent.ISSUE, cert.subject, cert.serial, now)
        return cert

    def issue_for_workload(self, csr: CertificateSigningRequest, token: AuthToken, now: int) -> CertificateRecord:
        """CA сам аутентифицирует JWT и только потом подписывает CSR."""
        if not self.available:
            raise CAUnavailableError("CA недоступен")
        subject = self.control_plane.authenticate(token, now)
        if subject != csr.subject:
            raise JwtRejectedError(f"JWT выдан {subject}, а CSR просит {csr.subject}")
        return self.issue(csr, now)

    def revoke(self, serial: int):
        with self._lock:
            self._revoked.add(serial)

    def is_revoked(self, serial: int) -> bool:
        return serial in self._revoked


def make_csr(subject: str, keypair: KeyPair, rng: np.random.Generator) -> CertificateSigningRequest:
    nonce = rng.bytes(16)
    return CertificateSigningRequest(
        subject=subject,
        public_key_fingerprint=keypair.fingerprint,
        nonce=nonce,
        public_key=keypair.public_bytes,
        proof=keypair.prove(nonce),
    )


def verify_cert(cert: CertificateRecord, now: int, ca: CertificateAuthority,
                service: Optional[str] = None) -> VerifyResult:
    """Подпись, срок действия, отзыв и (если заявлен сервис) secure naming."""
    reason = None
    if cert.issuer != ca.name or not ca.signer.verify(cert.signed_payload(), cert.signature):
        reason = "signature"
    elif now < cert.not_before:
        reason = "not yet valid"
    elif now >= cert.not_after:
        reason = "expired"
    elif ca.is_revoked(cert.serial):
        reason = "revoked"
    elif service is not None and ca.secure_naming.service_of(cert.subject) != service:
        reason = "secure naming mismatch"

    if reason is None:
        return VerifyResult(ok=True)
    ca.audit.record(IdentityEvent.VERIFY_FAIL, cert.subject, cert.serial, now)
    return VerifyResult(ok=False, reason=reason)


# Kubelet TLS bootstrap

class KubeletState(str, enum.Enum):
    UNBOOTSTRAPPED = "Unbootstrapped"
    TOKEN_AUTHENTICATED = "TokenAuthenticated"
    CSR_SUBMITTED = "CsrSubmitted"
    OPERATIONAL = "Operational"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class LimitedCredentials:
    """Ограниченные права: только создать CSR от имени узла."""
    grant_id: str
    node_name: str


@dataclass
class _TokenState:
    secret: bytes
    remaining: int
    expiry: int


class NodeController:
    """API-сервер + kube-controller-manager владельца."""

    def __init__(self, ca: CertificateAuthority,
                 approve: Optional[Callable[[CertificateSigningRequest, LimitedCredentials], bool]] = None):
        self.ca = ca
        self.approve = approve or self.auto_approve
        self._tokens: Dict[str, _TokenState] = {}
        self._grants: Dict[str, str] = {}
        self._lock = threading.Lock()
        self._counter = 0

    @staticmethod
    def auto_approve(csr: CertificateSigningRequest, creds: LimitedCredentials) -> bool:
        return csr.subject == creds.node_name

    def create_bootstrap_token(self, rng: np.random.Generator, now: int,
                               budget: int = config.BOOTSTRAP_TOKEN_BUDGET,
                               lifetime: int = config.BOOTSTRAP_TOKEN_LIFETIME_TICKS) -> BootstrapToken:
        with self._lock:
            self._counter += 1
            token_id = f"bt-{self._counter:04d}"
            token = BootstrapToken(token_id=token_id, secret=rng.bytes(16), usage_budget=budget, expiry=now + lifetime)
            self._tokens[token_id] = _TokenState(secret=token.secret, remaining=budget, expiry=token.expiry)
        return token

    def authenticate_token(self, token: BootstrapToken, node_name: str, now: int) -> LimitedCredentials:
        """Шаги 1-2: проверка токена и выдача ограниченных прав. Бюджет списывается атомарно."""
        with self._lock:
            state = self._tokens.get(token.token_id)
            if state is None or not hmac.compare_digest(state.secret, token.secret):
                raise TokenRejectedError(f"неизвестный bootstrap-токен {token.token_id}")
            if now >= state.expiry:
                raise TokenRejectedError(f"bootstrap-токен {token.token_id} истёк")
            if state.remaining <= 0:
                raise TokenRejectedError(f"bootstrap-токен {token.token_id} исчерпан")
            state.remaining -= 1
            self._counter += 1
            grant = LimitedCredentials(grant_id=f"grant-{self._counter:04d}", node_name=node_name)
            self._grants[grant.grant_id] = node_name
        return grant

    def remaining_budget(self, token_id: str) -> int:
        return self._tokens[token_id].remaining

    def submit_csr(self, creds: LimitedCredentials, csr: CertificateSigningRequest, now: int) -> CertificateRecord:
        """Шаги 3-4: одобрение CSR и выпуск сертификата узла."""
        with self._lock:
            node = self._grants.pop(creds.grant_id, None)
        if node != creds.node_name:
            raise CsrRejectedError("ограниченные права недействительны")
        if not self.approve(csr, creds):
            raise CsrRejectedError(f"CSR {csr.subject} не одобрен для узла {creds.node_name}")
        return self.ca.issue(csr, now)


@dataclass
class Kubelet:
    name: str
    controller: NodeController
    state: KubeletState = KubeletState.UNBOOTSTRAPPED
    keypair: Optional[KeyPair] = None
    certificate: Optional[CertificateRecord] = None

    @property
    def operational(self) -> bool:
        return self.state == KubeletState.OPERATIONAL


def kubelet_bootstrap(node: Kubelet, token: BootstrapToken, now: int, rng: np.random.Generator) -> CertificateRecord:
    try:
        creds = node.controller.authenticate_token(token, node.name, now)
        node.state = KubeletState.TOKEN_AUTHENTICATED
        node.keypair = generate_keypair(rng)
        csr = make_csr(node.name, node.keypair, rng)
        node.state = KubeletState.CSR_SUBMITTED
        cert = node.controller.submit_csr(creds, csr, now)
    except IdentityError:
        node.state = KubeletState.REJECTED
        raise
    node.certificate = cert
    node.state = KubeletState.OPERATIONAL
    node.controller.ca.audit.record(IdentityEvent.BOOTSTRAP, node.name, cert.serial, now)
    logger.info(f"Kubelet {node.name} прошёл bootstrap, serial={cert.serial}")
    return cert


# Идентичность прокси

class NodeAgent:
    """Генерирует ключи и CSR для прокси своего узла; закрытый ключ не покидает узел."""

    def __init__(self, node: Kubelet, ca: CertificateAuthority, rng: np.random.Generator):
        self.node = node
        self.ca = ca
        self.rng = rng

    def request_identity(self, subject: str, token: AuthToken, now: int) -> Tuple[KeyPair, CertificateRecord]:
        if not self.node.operational:
            raise IdentityError(f"узел {self.node.name} не прошёл bootstrap")
        keypair = generate_keypair(self.rng)
        csr = make_csr(subject, keypair, self.rng)
        cert = self.ca.issue_for_workload(csr, token, now)
        return keypair, cert


@dataclass
class ProxyIdentity:
    """Идентичность proxy-sidecar: сервисный аккаунт, JWT и выданные ключ и сертификат."""
    subject: str
    service_name: str
    node_agent: NodeAgent
    token: Optional[AuthToken] = None
    keypair: Optional[KeyPair] = None
    certificate: Optional[CertificateRecord] = None
    history: List[int] = field(default_factory=list)

    @property
    def has_identity(self) -> bool:
        return self.certificate is not None


def proxy_identity_request(proxy: ProxyIdentity, token: AuthToken, now: int) -> Tuple[KeyPair, CertificateRecord]:
    keypair, cert = proxy.node_agent.request_identity(proxy.subject, token, now)
    proxy.token = token
    proxy.keypair = keypair
    proxy.certificate = cert
    proxy.history.append(cert.serial)
    return keypair, cert


def rotate(proxy: ProxyIdentity, now: int, token: Optional[AuthToken] = None) -> CertificateRecord:
    """
    Новый ключ и сертификат. Старый серийный номер отзывается сразу после
    успешной выдачи; при ошибке прокси сохраняет прежнюю идентичность.
    """
    if not proxy.has_identity:
        raise IdentityError(f"у прокси {proxy.subject} нет текущей идентичности")
    token = token or proxy.token
    old_serial = proxy.certificate.serial
    keypair, cert = proxy.node_agent.request_identity(proxy.subject, token, now)
    proxy.node_agent.ca.revoke(old_serial)
    proxy.token = token
    proxy.keypair = keypair
    proxy.certificate = cert
    proxy.history.append(cert.serial)
    proxy.node_agent.ca.audit.record(IdentityEvent.ROTATE, proxy.subject, cert.serial, now)
    return cert
