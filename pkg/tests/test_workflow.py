import random

import pytest

from app.exceptions import WorkflowError, WorkflowValidationError
from app.schemas import AgentId, WorkflowEdge, WorkflowGraph
from app.workflow import (
    agents_of, dump_workflow, load_workflow, number_edges, region_of, regions, validate_workflow,
)


def make_graph(owner, names, edges, metadata=None):
    return WorkflowGraph(
        owner=owner,
        agents=[AgentId(actor=n, agent=n) for n in names],
        edges=[WorkflowEdge(src=s, dst=d) for s, d in edges],
        metadata=metadata or {},
    )


def test_movie_workflow_is_valid(movie_graph):
    result = validate_workflow(movie_graph)
    assert result.ok
    assert result.defects == []
    assert result.warnings == []


def test_movie_edges_numbered_in_flow_order(movie_graph):
    numbered = number_edges(movie_graph)
    assert [(e.index, e.src, e.dst) for e in numbered] == [
        (1, "O", "C1_0"),
        (2, "C1_0", "C1_1"),
        (3, "C1_0", "C1_2"),
        (4, "C1_1", "C2"),
        (5, "C1_2", "C4"),
        (6, "C2", "C3"),
        (7, "C3", "O"),
        (8, "C4", "O"),
    ]


def test_numbering_ignores_input_order(movie_graph):
    shuffled = movie_graph.model_copy(update={"edges": list(reversed(movie_graph.edges))})
    assert number_edges(shuffled) == number_edges(movie_graph)


def test_return_to_owner_is_not_a_cycle():
    graph = make_graph("O", ["O", "A"], [("O", "A"), ("A", "O")])
    assert validate_workflow(graph).ok


@pytest.mark.parametrize("edges,defect", [
    ([("O", "A"), ("A", "A")], "self-loop: A"),
    ([("O", "A"), ("A", "B"), ("B", "A")], "cycle: A,B"),
    ([("O", "A"), ("A", "X")], "unknown agent in edge: A->X"),
    ([("O", "A"), ("O", "A"), ("A", "B")], "duplicate edge: O->A"),
    ([("O", "A")], "unreachable from owner: B"),
])
def test_defects_are_reported(edges, defect):
    graph = make_graph("O", ["O", "A", "B"], edges)
    result = validate_workflow(graph)
    assert not result.ok
    assert defect in result.defects


def test_duplicate_agent_and_unknown_owner():
    graph = make_graph("Z", ["O", "O"], [])
    defects = validate_workflow(graph).defects
    assert "duplicate agent: O" in defects
    assert "unknown owner: Z" in defects


def test_warnings_do_not_make_workflow_invalid():
    graph = make_graph("O", ["O", "A"], [("O", "A")])
    result = validate_workflow(graph)
    assert result.ok
    assert result.warnings == ["owner unreachable from: A"]

    lonely = make_graph("O", ["O"], [])
    result = validate_workflow(lonely)
    assert result.ok
    assert "no contractor edges" in result.warnings


def test_number_edges_rejects_invalid_workflow():
    graph = make_graph("O", ["O", "A", "B"], [("O", "A"), ("A", "B"), ("B", "A")])
    with pytest.raises(WorkflowValidationError) as exc:
        number_edges(graph)
    assert "cycle: A,B" in exc.value.defects


def test_agents_of_and_regions(poc_graph):
    assert {a.agent for a in agents_of(poc_graph, "vfx")} == {"vfx-1", "vfx-2", "vfx-3"}
    placed = regions(poc_graph)
    assert placed["hdr"] == placed["sound"] == "us-west2-b"
    assert placed["owner"] == placed["vfx-2"] == "us-central1-f"


def test_region_from_metadata_prefers_agent_over_actor():
    graph = WorkflowGraph(
        owner="O",
        agents=[AgentId(actor="C1", agent="C1_0"), AgentId(actor="O", agent="O")],
        edges=[WorkflowEdge(src="O", dst="C1_0")],
        metadata={"region.C1": "eu-west1", "region.C1_0": "asia-east1"},
    )
    assert region_of(graph, "C1_0") == "asia-east1"
    assert region_of(graph.model_copy(update={"metadata": {"region.C1": "eu-west1"}}), "C1_0") == "eu-west1"


def test_load_and_dump(tmp_path, movie_graph):
    path = tmp_path / "workflow.json"
    path.write_text(dump_workflow(movie_graph), encoding="utf-8")
    assert load_workflow(path) == movie_graph


def test_load_rejects_unknown_fields(tmp_path):
    path = tmp_path / "workflow.json"
    path.write_text('{"owner": "O", "agents": [], "edges": [], "extra": 1}', encoding="utf-8")
    with pytest.raises(WorkflowError):
        load_workflow(path)
    with pytest.raises(WorkflowError):
        load_workflow(tmp_path / "missing.json")


def _has_cycle(owner, names, edges):
    """Перебор путей без networkx; рёбра в владельца уходят в отдельный сток."""
    adjacency = {n: [] for n in names}
    for s, d in edges:
        if s != d and d != owner:
            adjacency[s].append(d)

    def reaches(start, node, seen):
        for nxt in adjacency[node]:
            if nxt == start:
                return True
            if nxt not in seen and reaches(start, nxt, seen | {nxt}):
                return True
        return False

    return any(reaches(n, n, {n}) for n in names)


def test_cycle_detection_matches_path_enumeration():
    rng = random.Random(11)
    for _ in range(1000):
        n = rng.randint(2, 5)
        names = [f"a{i}" for i in range(n)]
        edges = {(rng.choice(names), rng.choice(names)) for _ in range(rng.randint(0, 8))}
        edges = sorted((s, d) for s, d in edges if s != d)
        graph = make_graph("a0", names, edges)
        reported = any(d.startswith("cycle") for d in validate_workflow(graph).defects)
        assert reported == _has_cycle("a0", names, edges), edges


def test_numbering_respects_data_flow(workflow_factory):
    rng = random.Random(5)
    for _ in range(1000):
        graph = workflow_factory(rng, rng.randint(2, 7))
        numbered = number_edges(graph)
        assert [e.index for e in numbered] == list(range(1, len(graph.edges) + 1))
        assert {(e.src, e.dst) for e in numbered} == {(e.src, e.dst) for e in graph.edges}
        position = {(e.src, e.dst): e.index for e in numbered}
        for (s1, d1), i1 in position.items():
            for (s2, _), i2 in position.items():
                if d1 == s2 and d1 != graph.owner:
                    assert i1 < i2
