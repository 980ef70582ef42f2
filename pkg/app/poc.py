"""
Эталонные данные: workflow производства фильма (владелец O, подрядчики
C1..C4) и политика proof-of-concept с именами сервисов owner, vfx-1..3,
color, sound, hdr.
"""
from app.schemas import (
    AgentId, AllowRule, AttributeCondition, Comparator, HttpMethod, Permission,
    PolicyDocument, TimeWindow, WorkflowEdge, WorkflowGraph,
)
from app.policy import path_of

POC_SERVICES = ("owner", "vfx-1", "vfx-2", "vfx-3", "color", "sound", "hdr")

# Разрешённые POST (строка — источник, значение — получатели)
POC_MATRIX = {
    "owner": ["vfx-1"],
    "vfx-1": ["vfx-2", "vfx-3"],
    "vfx-2": ["color"],
    "vfx-3": ["sound"],
    "color": ["hdr"],
    "sound": ["owner"],
    "hdr": ["owner"],
}

POC_TENURE = {
    "owner": 8,
    "vfx-1": 3,
    "vfx-2": 12,
    "vfx-3": 7,
    "color": 3,
    "sound": 4,
    "hdr": 5,
}


def movie_workflow() -> WorkflowGraph:
    agents = [
        AgentId(actor="O", agent="O"),
        AgentId(actor="C1", agent="C1_0"),
        AgentId(actor="C1", agent="C1_1"),
        AgentId(actor="C1", agent="C1_2"),
        AgentId(actor="C2", agent="C2"),
        AgentId(actor="C3", agent="C3"),
        AgentId(actor="C4", agent="C4"),
    ]
    edges = [
        ("O", "C1_0"), ("C1_0", "C1_1"), ("C1_0", "C1_2"), ("C1_1", "C2"),
        ("C1_2", "C4"), ("C2", "C3"), ("C3", "O"), ("C4", "O"),
    ]
    return WorkflowGraph(
        owner="O",
        agents=agents,
        edges=[WorkflowEdge(src=s, dst=d) for s, d in edges],
    )


def poc_workflow() -> WorkflowGraph:
    """Тот же workflow в именах развёрнутых сервисов."""
    actors = {"owner": "owner", "vfx-1": "vfx", "vfx-2": "vfx", "vfx-3": "vfx",
              "color": "color", "sound": "sound", "hdr": "hdr"}
    return WorkflowGraph(
        owner="owner",
        agents=[AgentId(actor=actors[name], agent=name) for name in POC_SERVICES],
        edges=[
            WorkflowEdge(src=src, dst=dst)
            for src, dsts in POC_MATRIX.items()
            for dst in dsts
        ],
    )


def poc_policy(literal_time_windows: bool = False) -> PolicyDocument:
    """
    Полная политика PoC: RBAC по ролям плюс атрибут tenure и окна времени.
    Окна color/sound (hour <= 8 и hour >= 17) по умолчанию читаются как окно
    через полночь; literal_time_windows=True оставляет их невыполнимыми.
    """
    business_hours = TimeWindow(min_hour=8, max_hour=17)
    night_hours = TimeWindow(min_hour=17, max_hour=8, literal=literal_time_windows)
    senior = [AttributeCondition(attribute="tenure", comparator=Comparator.GT, value=10)]

    rules = [
        AllowRule(user="owner"),
        AllowRule(user="vfx-1"),
        AllowRule(user="vfx-2", attribute_conditions=senior),
        AllowRule(user="vfx-2", time_windows=[business_hours]),
        AllowRule(user="vfx-3", attribute_conditions=senior),
        AllowRule(user="vfx-3", time_windows=[business_hours]),
        AllowRule(user="color", time_windows=[night_hours]),
        AllowRule(user="sound", time_windows=[night_hours]),
        AllowRule(user="hdr", time_windows=[business_hours]),
    ]
    return PolicyDocument(
        user_roles={name: [name] for name in POC_SERVICES},
        role_permissions={
            src: [Permission(method=HttpMethod.POST, path=path_of(dst)) for dst in dsts]
            for src, dsts in POC_MATRIX.items()
        },
        user_attributes={name: {"tenure": tenure} for name, tenure in POC_TENURE.items()},
        allow_rules=rules,
    )
