from fastapi import APIRouter, Body, Request

from app import schemas
from app.policy import decision_log_line

router = APIRouter()


@router.post(
    "/v1/data/istio/authz/allow",
    response_model=schemas.DecisionResponse,
    tags=["authz"],
    summary="Решение политики для перехваченного запроса",
)
async def query_allow(
    request: Request,
    query: schemas.DecisionQuery = Body(..., description="Контекст запроса, собранный proxy"),
):
    """
    Proxy спрашивает sidecar через loopback pod-а. Любой ответ,
    кроме 200, proxy трактует как deny.
    """
    store = request.app.state.policy_store
    decision = store.decide(query.input)
    request.state.decision_line = decision_log_line(decision, query.input)
    return schemas.DecisionResponse(result=decision)


@router.put(
    "/v1/policies",
    tags=["policies"],
    summary="Загрузить новую политику целиком",
)
async def replace_policy(
    request: Request,
    policy: schemas.PolicyDocument = Body(...),
):
    rules = request.app.state.policy_store.swap(policy)
    return {"rules": rules}


@router.get("/health", tags=["service"], summary="Проверка живости sidecar")
async def health(request: Request):
    store = request.app.state.policy_store
    return {
        "status": "ok",
        "mode": "allow_all" if store.allow_all else "enforcing",
        "rules": len(store.policy.allow_rules),
    }
