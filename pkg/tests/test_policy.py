import base64
import random

import pytest

from app.exceptions import CredentialParseError, PolicyError, UnknownIdentityError
from app.poc import POC_SERVICES, poc_policy
from app.policy import (
    INFLATED_IDENTITY, PolicyStore, add_permission, allow_all_decision, attach_time_constraint,
    compile_from_workflow, decision_log_line, dump_policy, evaluate, inflate_policy, load_policy,
    path_of, permission_count, request_context,
)
from app.schemas import HttpMethod, Permission, RequestContext, TimeWindow, Verdict
from app.security import basic_credentials, parse_credential


def ctx(user, dst, method="POST", hour=8, **attrs):
    return request_context(user, HttpMethod(method), path_of(dst), hour, attrs)


# Учётные данные

def test_parse_credential_accepts_both_base64_alphabets():
    # '>' и '?' дают символы, которые отличаются в base64 и base64url
    raw = b"vfx-1>?:pw"
    std = "Basic " + base64.b64encode(raw).decode()
    url = "Basic " + base64.urlsafe_b64encode(raw).decode().rstrip("=")
    assert parse_credential(std) == "vfx-1>?"
    assert parse_credential(url) == "vfx-1>?"
    assert parse_credential(basic_credentials("owner")) == "owner"


@pytest.mark.parametrize("header", [
    "",
    "Basic",
    "Basic    ",
    "Basic !!!notbase64",
    "Basic " + base64.b64encode(b"no-colon").decode(),
    "Basic " + base64.b64encode(b":pw").decode(),
])
def test_parse_credential_rejects_malformed(header):
    with pytest.raises(CredentialParseError):
        parse_credential(header)


# Компиляция

def test_compile_movie_workflow(movie_graph):
    policy = compile_from_workflow(movie_graph)
    assert permission_count(policy) == 8
    assert list(policy.role_permissions) == ["O", "C1_0", "C1_1", "C1_2", "C2", "C3", "C4"]
    assert [p.path for p in policy.role_permissions["C1_0"]] == ["/api/C1_1", "/api/C1_2"]
    assert all(p.method == HttpMethod.POST for perms in policy.role_permissions.values() for p in perms)
    assert set(policy.user_roles) == {a.agent for a in movie_graph.agents}
    assert policy.default_decision == "deny"


def test_compiled_policy_allows_exactly_the_edges(movie_graph):
    policy = compile_from_workflow(movie_graph)
    edges = {(e.src, e.dst) for e in movie_graph.edges}
    names = movie_graph.agent_names()
    for src in names:
        for dst in names:
            for method in ("GET", "POST"):
                allowed = evaluate(policy, ctx(src, dst, method)).allowed
                assert allowed == ((src, dst) in edges and method == "POST")


def test_compile_is_deterministic(movie_graph):
    assert dump_policy(compile_from_workflow(movie_graph)) == dump_policy(compile_from_workflow(movie_graph))


def test_dump_and_load(tmp_path, policy):
    path = tmp_path / "policy.json"
    path.write_text(dump_policy(policy), encoding="utf-8")
    assert load_policy(path) == policy


def test_load_rejects_broken_policy(tmp_path):
    path = tmp_path / "policy.json"
    path.write_text('{"default_decision": "allow"}', encoding="utf-8")
    with pytest.raises(PolicyError):
        load_policy(path)


# Решения

def test_poc_decisions(policy):
    decision = evaluate(policy, ctx("owner", "vfx-1"))
    assert decision.verdict == Verdict.ALLOW
    assert decision.matched_rule_index == 0
    assert decision.rules_evaluated == 9
    assert decision.user == "owner"

    assert not evaluate(policy, ctx("owner", "vfx-1", "GET")).allowed
    assert not evaluate(policy, ctx("owner", "color")).allowed


def test_tenure_overrides_time_window(policy):
    senior = evaluate(policy, ctx("vfx-2", "color", hour=20))
    assert senior.allowed
    assert senior.matched_rule_index == 2

    junior = evaluate(policy, ctx("vfx-3", "sound", hour=20))
    assert not junior.allowed
    assert "rule 5" in junior.reason

    assert evaluate(policy, ctx("vfx-3", "sound", hour=20, tenure=11)).allowed
    # атрибут другого типа не сравнивается
    assert not evaluate(policy, ctx("vfx-3", "sound", hour=20, tenure="11")).allowed


@pytest.mark.parametrize("hour,allowed", [(7, False), (8, True), (17, True), (18, False)])
def test_business_hours_are_inclusive(policy, hour, allowed):
    assert evaluate(policy, ctx("hdr", "owner", hour=hour)).allowed == allowed


@pytest.mark.parametrize("hour,allowed", [(0, True), (8, True), (12, False), (16, False), (17, True), (23, True)])
def test_night_window_wraps_midnight(policy, hour, allowed):
    assert evaluate(policy, ctx("color", "hdr", hour=hour)).allowed == allowed


def test_literal_night_window_never_matches():
    literal = poc_policy(literal_time_windows=True)
    for hour in range(24):
        assert not evaluate(literal, ctx("color", "hdr", hour=hour)).allowed
        assert not evaluate(literal, ctx("sound", "owner", hour=hour)).allowed


def test_unauthenticated_request_is_denied(policy):
    request = RequestContext(method=HttpMethod.POST, path="/api/vfx-1", clock_hour=8)
    decision = evaluate(policy, request)
    assert decision.verdict == Verdict.DENY
    assert decision.reason == "unauthenticated"
    assert decision.rules_evaluated == 0


def test_default_deny_for_unknown_identities(policy):
    rng = random.Random(3)
    for _ in range(1000):
        user = "".join(rng.choice("abcdefgh-") for _ in range(rng.randint(1, 8)))
        if user in POC_SERVICES:
            continue
        request = ctx(user, rng.choice(POC_SERVICES), rng.choice(["GET", "POST", "PUT", "DELETE"]),
                      hour=rng.randrange(24), tenure=rng.randint(0, 30))
        decision = evaluate(policy, request)
        assert decision.verdict == Verdict.DENY
        assert decision.matched_rule_index is None


def test_allow_all_decision():
    decision = allow_all_decision(ctx("anyone", "owner", "DELETE"))
    assert decision.allowed
    assert decision.matched_rule_index == -1
    assert decision.rules_evaluated == 0


def test_decision_log_line_is_json(policy):
    request = ctx("owner", "vfx-1")
    line = decision_log_line(evaluate(policy, request), request)
    assert '"verdict": "allow"' in line
    assert '"path": "/api/vfx-1"' in line


# Раздувание и временные ограничения

def _random_request(rng, users):
    return ctx(rng.choice(users), rng.choice(POC_SERVICES), rng.choice(["GET", "POST"]),
               hour=rng.randrange(24), inflated_0=rng.randint(-1, 1), tenure=rng.randint(0, 20))


def test_inflate_keeps_every_decision(policy):
    inflated = inflate_policy(policy, 100)
    assert len(inflated.allow_rules) == len(policy.allow_rules) + 100
    assert inflate_policy(policy, 0) is policy
    rng = random.Random(17)
    users = list(POC_SERVICES) + [INFLATED_IDENTITY, "mallory"]
    for _ in range(1000):
        request = _random_request(rng, users)
        base, bigger = evaluate(policy, request), evaluate(inflated, request)
        assert base.verdict == bigger.verdict
        assert base.matched_rule_index == bigger.matched_rule_index
        assert bigger.rules_evaluated == base.rules_evaluated + 100


@pytest.mark.slow
def test_inflate_by_thousand_keeps_every_decision(policy):
    inflated = inflate_policy(policy, 1000)
    rng = random.Random(1000)
    users = list(POC_SERVICES) + [INFLATED_IDENTITY]
    for _ in range(10000):
        request = _random_request(rng, users)
        base, bigger = evaluate(policy, request), evaluate(inflated, request)
        assert (base.verdict, base.matched_rule_index) == (bigger.verdict, bigger.matched_rule_index)
        assert bigger.rules_evaluated == len(policy.allow_rules) + 1000


def test_inflate_rejects_negative(policy):
    with pytest.raises(PolicyError):
        inflate_policy(policy, -1)


def allowed_hours(policy, user, dst):
    return {h for h in range(24) if evaluate(policy, ctx(user, dst, hour=h)).allowed}


def test_attach_time_constraint_only_narrows(movie_graph):
    policy = compile_from_workflow(movie_graph)
    limited = attach_time_constraint(policy, "C2", TimeWindow(min_hour=9, max_hour=17))
    assert evaluate(limited, ctx("C2", "C3", hour=9)).allowed
    assert not evaluate(limited, ctx("C2", "C3", hour=18)).allowed
    # прочие пользователи не затронуты
    assert evaluate(limited, ctx("O", "C1_0", hour=23)).allowed

    narrower = attach_time_constraint(limited, "C2", TimeWindow(min_hour=12, max_hour=20))
    assert allowed_hours(narrower, "C2", "C3") == set(range(12, 18))

    disjoint = attach_time_constraint(limited, "C2", TimeWindow(min_hour=20, max_hour=22))
    assert allowed_hours(disjoint, "C2", "C3") == set()


def test_attach_time_constraint_inside_night_window():
    # ночное окно 17-8 пересекается с 6-20 двумя отрезками
    limited = attach_time_constraint(poc_policy(), "color", TimeWindow(min_hour=6, max_hour=20))
    assert allowed_hours(limited, "color", "hdr") == {6, 7, 8, 17, 18, 19, 20}


def test_attach_two_wrapped_windows(poc_graph):
    policy = compile_from_workflow(poc_graph)
    policy = attach_time_constraint(policy, "owner", TimeWindow(min_hour=20, max_hour=4))
    policy = attach_time_constraint(policy, "owner", TimeWindow(min_hour=2, max_hour=22))
    assert allowed_hours(policy, "owner", "vfx-1") == {2, 3, 4, 20, 21, 22}


def test_full_day_window_changes_nothing(policy):
    for user in POC_SERVICES:
        limited = attach_time_constraint(policy, user, TimeWindow(min_hour=0, max_hour=23))
        for dst in POC_SERVICES:
            for method in ("GET", "POST"):
                for hour in range(24):
                    request = ctx(user, dst, method, hour=hour)
                    assert evaluate(limited, request).verdict == evaluate(policy, request).verdict


@pytest.mark.parametrize("h", range(24))
def test_zero_width_window_allows_single_hour(movie_graph, h):
    limited = attach_time_constraint(compile_from_workflow(movie_graph), "C2", TimeWindow(min_hour=h, max_hour=h))
    assert allowed_hours(limited, "C2", "C3") == {h}


def test_time_constraints_only_restrict(movie_graph):
    compiled = compile_from_workflow(movie_graph)
    names = [a.agent for a in movie_graph.agents]
    rng = random.Random(31)
    for _ in range(1000):
        user = rng.choice(names)
        windows = [TimeWindow(min_hour=rng.randrange(24), max_hour=rng.randrange(24)) for _ in range(rng.randint(1, 3))]
        limited = compiled
        for window in windows:
            limited = attach_time_constraint(limited, user, window)
        src = rng.choice(names + ["mallory"])
        request = ctx(src, rng.choice(names), rng.choice(["GET", "POST"]), hour=rng.randrange(24))
        before, after = evaluate(compiled, request).allowed, evaluate(limited, request).allowed
        if after:
            assert before
        # у каждого пользователя скомпилированной политики одно правило
        in_windows = all(w.contains(request.clock_hour) for w in windows)
        assert after == (before and (src != user or in_windows))

    poc = poc_policy()
    for _ in range(1000):
        user = rng.choice(POC_SERVICES)
        limited = attach_time_constraint(poc, user, TimeWindow(min_hour=rng.randrange(24), max_hour=rng.randrange(24)))
        request = _random_request(rng, list(POC_SERVICES))
        if evaluate(limited, request).allowed:
            assert evaluate(poc, request).allowed


def test_attach_time_constraint_unknown_user(policy):
    with pytest.raises(UnknownIdentityError):
        attach_time_constraint(policy, "mallory", TimeWindow(min_hour=0, max_hour=1))


def test_add_permission_opens_exactly_one_cell(policy):
    rogue = add_permission(policy, "owner", Permission(method=HttpMethod.POST, path=path_of("color")))
    assert evaluate(rogue, ctx("owner", "color")).allowed
    assert not evaluate(rogue, ctx("owner", "color", "GET")).allowed
    assert not evaluate(rogue, ctx("owner", "hdr")).allowed


def test_policy_store_swap(policy):
    store = PolicyStore(policy)
    request = ctx("owner", "color")
    assert not store.decide(request).allowed
    rogue = add_permission(policy, "owner", Permission(method=HttpMethod.POST, path=path_of("color")))
    assert store.swap(rogue) == len(rogue.allow_rules)
    assert store.decide(request).allowed
    assert PolicyStore(policy, allow_all=True).decide(ctx("hdr", "vfx-1", "GET")).allowed


def test_compiled_policy_matches_edges_on_random_workflows(workflow_factory):
    rng = random.Random(23)
    for _ in range(200):
        graph = workflow_factory(rng, rng.randint(2, 6))
        policy = compile_from_workflow(graph)
        edges = {(e.src, e.dst) for e in graph.edges}
        assert permission_count(policy) == len(edges)
        names = graph.agent_names()
        for src in names:
            for dst in names:
                if src == dst:
                    continue
                for method in ("GET", "POST", "PUT", "DELETE"):
                    expected = (src, dst) in edges and method == "POST"
                    assert evaluate(policy, ctx(src, dst, method, hour=rng.randrange(24))).allowed == expected
