from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.openapi.utils import get_openapi
from starlette.exceptions import HTTPException

from app.exceptions import (
    PolicyError,
    general_exception_handler,
    http_exception_handler,
    policy_exception_handler,
    validation_exception_handler,
)
from app.middleware import decision_log_middleware
from app.policy import PolicyStore
from app.routes import router
from app.schemas import PolicyDocument
from config import PROJECT_NAME, VERSION


def custom_openapi(app):
    if app.openapi_schema:
        return app.openapi_schema

    openapi_schema = get_openapi(
        title=f"{PROJECT_NAME}: policy sidecar",
        version=VERSION,
        description="""
        # Policy sidecar

        Точка принятия решений рядом с proxy в каждом pod-е.

        ## Решения
        * `POST /v1/data/istio/authz/allow` - allow/deny для запроса, по умолчанию deny

        ## Политики
        * `PUT /v1/policies` - атомарная замена политики (pull от control plane)

        ## Режимы
        * `enforcing` - вычисляет загруженную политику
        * `allow_all` - правил нет, разрешено всё
        """,
        routes=app.routes,
    )

    openapi_schema["tags"] = [
        {"name": "authz", "description": "Решения политики"},
        {"name": "policies", "description": "Загрузка политик"},
        {"name": "service", "description": "Служебные эндпоинты"},
    ]

    app.openapi_schema = openapi_schema
    return app.openapi_schema


def create_policy_sidecar(policy: PolicyDocument, allow_all: bool = False) -> FastAPI:
    """ASGI-приложение policy-sidecar одного pod-а."""
    app = FastAPI()
    app.state.policy_store = PolicyStore(policy, allow_all=allow_all)

    app.add_exception_handler(HTTPException, http_exception_handler)
    app.add_exception_handler(RequestValidationError, validation_exception_handler)
    app.add_exception_handler(PolicyError, policy_exception_handler)
    app.add_exception_handler(Exception, general_exception_handler)

    app.middleware("http")(decision_log_middleware)
    app.openapi = lambda: custom_openapi(app)
    app.include_router(router)
    return app
