from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from starlette import status
from starlette.exceptions import HTTPException as StarletteHTTPException
from starlette.responses import JSONResponse


class SimulatorError(Exception):
    """Базовая ошибка симулятора."""


# Workflow

class WorkflowError(SimulatorError):
    pass


class WorkflowValidationError(WorkflowError):
    def __init__(self, defects):
        self.defects = list(defects)
        super().__init__("invalid workflow: " + "; ".join(self.defects))


# Policy

class PolicyError(SimulatorError):
    pass


class CredentialParseError(PolicyError):
    pass


class UnknownIdentityError(PolicyError):
    def __init__(self, identity):
        self.identity = identity
        super().__init__(f"unknown identity: {identity}")


# Mesh

class MeshError(SimulatorError):
    pass


class DeployError(MeshError):
    pass


class UnknownAgentError(MeshError):
    def __init__(self, agent):
        self.agent = agent
        super().__init__(f"unknown agent: {agent}")


class PreconditionError(MeshError):
    pass


class PodNotReadyError(MeshError):
    pass


class TransportError(MeshError):
    """Получатель недоступен (pod уничтожен). Это не 403."""


class ChannelError(MeshError):
    """mTLS-канал не установлен: взаимная проверка сертификатов не прошла."""

    def __init__(self, message, response=None):
        self.response = response
        super().__init__(message)


class VolumeAccessError(MeshError):
    pass


class VolumeDecryptionError(MeshError):
    pass


# Identity

class IdentityError(SimulatorError):
    pass


class TokenRejectedError(IdentityError):
    pass


class CsrRejectedError(IdentityError):
    pass


class JwtRejectedError(IdentityError):
    pass


class CAUnavailableError(IdentityError):
    """CA временно недоступен, запрос можно повторить."""


# Harness

class HarnessError(SimulatorError):
    pass


class IncompleteRunError(HarnessError):
    pass


# Bench

class BenchError(SimulatorError):
    pass


# Stats

class StatsError(SimulatorError):
    pass


# Обработчики ошибок policy-sidecar

async def http_exception_handler(request, exc: StarletteHTTPException):
    return JSONResponse(
        status_code=exc.status_code,
        content={"detail": exc.detail}
    )


async def validation_exception_handler(request, exc: RequestValidationError):
    return JSONResponse(
        status_code=status.HTTP_400_BAD_REQUEST,
        content={"detail": "invalid authorization query", "errors": jsonable_encoder(exc.errors())}
    )


async def policy_exception_handler(request, exc: PolicyError):
    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={"detail": str(exc)}
    )


async def general_exception_handler(request, exc):
    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={"detail": "policy sidecar internal error"}
    )
