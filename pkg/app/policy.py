import json
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

import config
from app.exceptions import CredentialParseError, PolicyError, UnknownIdentityError
from app.schemas import (
    AllowRule, AttributeCondition, Comparator, Decision, HttpMethod, Permission,
    PolicyDocument, RequestContext, Scalar, TimeWindow, Verdict, WorkflowGraph,
)
from app.security import basic_credentials, parse_credential
from app.workflow import number_edges

logger = logging.getLogger(__name__)

# Зарезервированная личность для правил-балласта (inflate_policy)
INFLATED_IDENTITY = "~inflated~"

_COMPARE = {
    Comparator.LT: lambda a, b: a < b,
    Comparator.LE: lambda a, b: a <= b,
    Comparator.GT: lambda a, b: a > b,
    Comparator.GE: lambda a, b: a >= b,
    Comparator.EQ: lambda a, b: a == b,
}


def path_of(agent: str, path_template: str = config.PATH_TEMPLATE) -> str:
    return path_template.format(agent=agent)


def request_context(
    user: str,
    method: HttpMethod,
    path: str,
    clock_hour: int,
    extra_attributes: Optional[Dict[str, Scalar]] = None,
) -> RequestContext:
    return RequestContext(
        authorization_header=basic_credentials(user),
        method=method,
        path=path,
        clock_hour=clock_hour,
        extra_attributes=extra_attributes or {},
    )


def compile_from_workflow(
    graph: WorkflowGraph,
    method: HttpMethod = HttpMethod(config.DEFAULT_METHOD),
    path_template: str = config.PATH_TEMPLATE,
) -> PolicyDocument:
    """
    Workflow -> политика default-deny. Каждое пронумерованное ребро (src, dst)
    добавляет роли src разрешение {method, path_of(dst)}; строка k в
    role_permissions соответствует ребру k. Личность совпадает с ролью.
    """
    numbered = number_edges(graph)

    sources: List[str] = []
    role_permissions: Dict[str, List[Permission]] = {}
    for edge in numbered:
        if edge.src not in role_permissions:
            sources.append(edge.src)
            role_permissions[edge.src] = []
        role_permissions[edge.src].append(Permission(method=method, path=path_of(edge.dst, path_template)))

    ordered_users = sources + sorted(set(graph.agent_names()) - set(sources))
    policy = PolicyDocument(
        user_roles={user: [user] for user in ordered_users},
        role_permissions=role_permissions,
        allow_rules=[AllowRule(user=user, require_rbac=True) for user in sources],
    )
    logger.info(f"Скомпилирована политика: {len(numbered)} разрешений, {len(sources)} правил")
    return policy


def attach_time_constraint(policy: PolicyDocument, user: str, window: TimeWindow) -> PolicyDocument:
    """
    Добавляет окно времени ко всем allow-правилам пользователя. Окна
    правила конъюнктивны, поэтому разрешения только сужаются.
    """
    if user not in policy.user_roles and not any(r.user == user for r in policy.allow_rules):
        raise UnknownIdentityError(user)

    rules = [
        rule.model_copy(update={"time_windows": [*rule.time_windows, window]}) if rule.user == user else rule
        for rule in policy.allow_rules
    ]
    return policy.model_copy(update={"allow_rules": rules})


def inflate_policy(policy: PolicyDocument, extra_rules: int) -> PolicyDocument:
    """
    Добавляет K правил, которые evaluate обязан проверить, но которые
    никогда не срабатывают: зарезервированная личность и противоречивые
    условия (x < 0 и x > 0).
    """
    if extra_rules < 0:
        raise PolicyError("количество дополнительных правил должно быть >= 0")
    if extra_rules == 0:
        return policy

    ballast = [
        AllowRule(
            user=INFLATED_IDENTITY,
            require_rbac=False,
            attribute_conditions=[
                AttributeCondition(attribute=f"inflated_{i}", comparator=Comparator.LT, value=0),
                AttributeCondition(attribute=f"inflated_{i}", comparator=Comparator.GT, value=0),
            ],
        )
        for i in range(extra_rules)
    ]
    return policy.model_copy(update={"allow_rules": list(policy.allow_rules) + ballast})


def _rbac_match(policy: PolicyDocument, user: str, ctx: RequestContext) -> bool:
    for role in policy.user_roles.get(user, []):
        for p in policy.role_permissions.get(role, []):
            if p.method == ctx.method and p.path == ctx.path:
                return True
    return False


def _compare(actual: Optional[Scalar], condition: AttributeCondition) -> bool:
    if actual is None or isinstance(actual, bool) or isinstance(condition.value, bool):
        return False
    # int сравнивается только с int, str только с str
    if isinstance(actual, int) != isinstance(condition.value, int):
        return False
    return _COMPARE[condition.comparator](actual, condition.value)


def _rule_failure(policy: PolicyDocument, rule: AllowRule, user: str, ctx: RequestContext) -> Optional[str]:
    """None, если правило выполнено, иначе первое невыполненное условие."""
    if rule.user != user:
        return "user mismatch"
    if rule.require_rbac and not _rbac_match(policy, user, ctx):
        return f"no permission for {ctx.method.value} {ctx.path}"
    if rule.attribute_conditions:
        attributes = {**policy.user_attributes.get(user, {}), **ctx.extra_attributes}
        for cond in rule.attribute_conditions:
            if not _compare(attributes.get(cond.attribute), cond):
                return f"attribute {cond.attribute} {cond.comparator.value} {cond.value} not satisfied"
    for window in rule.time_windows:
        if not window.contains(ctx.clock_hour):
            return f"hour {ctx.clock_hour} outside {window.min_hour}-{window.max_hour}"
    return None


def evaluate(policy: PolicyDocument, ctx: RequestContext) -> Decision:
    """
    Решение политики: правила дизъюнктивны, условия внутри
    правила конъюнктивны, по умолчанию deny. Проверяются все правила,
    rules_evaluated = их количество.
    """
    try:
        user = parse_credential(ctx.authorization_header)
    except CredentialParseError:
        return Decision(verdict=Verdict.DENY, reason="unauthenticated", rules_evaluated=0)

    matched: Optional[int] = None
    failures: List[str] = []
    for index, rule in enumerate(policy.allow_rules):
        failure = _rule_failure(policy, rule, user, ctx)
        if failure is None:
            if matched is None:
                matched = index
        elif rule.user == user:
            failures.append(f"rule {index}: {failure}")

    evaluated = len(policy.allow_rules)
    if matched is not None:
        return Decision(
            verdict=Verdict.ALLOW, matched_rule_index=matched,
            reason=f"rule {matched} matched", rules_evaluated=evaluated, user=user,
        )
    if not failures:
        reason = f"no allow rule for identity '{user}'"
    else:
        reason = "; ".join(failures)
    return Decision(verdict=Verdict.DENY, reason=reason, rules_evaluated=evaluated, user=user)


def allow_all_decision(ctx: RequestContext) -> Decision:
    """Режим 'all allow': правил нет, разрешено всё (matched_rule_index = -1)."""
    try:
        user = parse_credential(ctx.authorization_header)
    except CredentialParseError:
        user = None
    return Decision(verdict=Verdict.ALLOW, matched_rule_index=-1, reason="allow all", rules_evaluated=0, user=user)


def decision_log_line(decision: Decision, ctx: RequestContext) -> str:
    return json.dumps({
        "user": decision.user,
        "method": ctx.method.value,
        "path": ctx.path,
        "verdict": decision.verdict.value,
        "reason": decision.reason,
        "rules_evaluated": decision.rules_evaluated,
    }, ensure_ascii=False)


def add_permission(policy: PolicyDocument, user: str, permission: Permission) -> PolicyDocument:
    """Безусловное разрешение для user (используется для внедрения rogue-ребра)."""
    roles = {k: list(v) for k, v in policy.user_roles.items()}
    if not roles.get(user):
        roles[user] = [user]
    role = roles[user][0]
    perms = {k: list(v) for k, v in policy.role_permissions.items()}
    perms.setdefault(role, []).append(permission)
    rules = list(policy.allow_rules) + [AllowRule(user=user, require_rbac=True)]
    return policy.model_copy(update={"user_roles": roles, "role_permissions": perms, "allow_rules": rules})


def load_policy(path) -> PolicyDocument:
    try:
        return PolicyDocument.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise PolicyError(f"не удалось прочитать политику {path}: {e}") from e


def dump_policy(policy: PolicyDocument) -> str:
    return json.dumps(policy.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"


def permission_count(policy: PolicyDocument) -> int:
    return sum(len(perms) for perms in policy.role_permissions.values())


class PolicyStore:
    """
    Политика, загруженная в policy-sidecar. Замена документа атомарна:
    запрос видит либо старую, либо новую политику целиком.
    """

    def __init__(self, policy: PolicyDocument, allow_all: bool = False):
        self._lock = threading.Lock()
        self._policy = policy
        self.allow_all = allow_all

    @property
    def policy(self) -> PolicyDocument:
        with self._lock:
            return self._policy

    def swap(self, policy: PolicyDocument) -> int:
        with self._lock:
            self._policy = policy
        logger.info(f"Политика sidecar заменена: {len(policy.allow_rules)} правил")
        return len(policy.allow_rules)

    def decide(self, ctx: RequestContext) -> Decision:
        if self.allow_all:
            return allow_all_decision(ctx)
        return evaluate(self.policy, ctx)
