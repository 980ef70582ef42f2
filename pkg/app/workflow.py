import json
import logging
from collections import Counter
from pathlib import Path
from typing import Dict, List, Set, Tuple

import networkx as nx
from pydantic import ValidationError

import config
from app.exceptions import WorkflowError, WorkflowValidationError
from app.schemas import AgentId, NumberedEdge, ValidationResult, WorkflowGraph

logger = logging.getLogger(__name__)

# Узел графа: (имя агента, is_return). Владелец раздваивается на исток
# (owner, False) и сток (owner, True): данные уходят от владельца и к нему
# же возвращаются, поэтому рёбра "C3 -> O" не образуют цикла.
Node = Tuple[str, bool]


def _node_key(node: Node) -> str:
    name, is_return = node
    return name + ("\uffff" if is_return else "")


def _split_graph(graph: WorkflowGraph) -> nx.DiGraph:
    names = set(graph.agent_names())
    g = nx.DiGraph()
    for name in sorted(names):
        g.add_node((name, False))
    g.add_node((graph.owner, True))
    for edge in graph.edges:
        if edge.src == edge.dst or edge.src not in names or edge.dst not in names:
            continue
        g.add_edge((edge.src, False), (edge.dst, edge.dst == graph.owner))
    return g


def validate_workflow(graph: WorkflowGraph) -> ValidationResult:
    """
    Проверяет инварианты workflow. Дефекты возвращаются как данные,
    исключений нет; недостижимость владельца из агента — только предупреждение.
    """
    defects: List[str] = []
    warnings: List[str] = []
    names = graph.agent_names()
    known = set(names)

    for name, count in sorted(Counter(names).items()):
        if count > 1:
            defects.append(f"duplicate agent: {name}")

    if graph.owner not in known:
        defects.append(f"unknown owner: {graph.owner}")

    seen: Set[Tuple[str, str]] = set()
    for edge in graph.edges:
        pair = (edge.src, edge.dst)
        if edge.src == edge.dst:
            defects.append(f"self-loop: {edge.src}")
        for end in pair:
            if end not in known:
                defects.append(f"unknown agent in edge: {edge.src}->{edge.dst}")
                break
        if pair in seen:
            defects.append(f"duplicate edge: {edge.src}->{edge.dst}")
        seen.add(pair)

    g = _split_graph(graph)
    for component in sorted(nx.strongly_connected_components(g), key=lambda c: sorted(c)):
        if len(component) > 1:
            defects.append("cycle: " + ",".join(sorted(name for name, _ in component)))

    if graph.owner in known:
        reachable = nx.descendants(g, (graph.owner, False)) | {(graph.owner, False)}
        for name in sorted(known):
            if (name, False) not in reachable:
                defects.append(f"unreachable from owner: {name}")

        returning = nx.ancestors(g, (graph.owner, True))
        for name in sorted(known - {graph.owner}):
            if (name, False) not in returning:
                warnings.append(f"owner unreachable from: {name}")

    if not graph.edges:
        warnings.append("no contractor edges")

    return ValidationResult(defects=defects, warnings=warnings)


def number_edges(graph: WorkflowGraph) -> List[NumberedEdge]:
    """
    Нумерует рёбра 1..|E|: по позиции источника в лексикографической
    топологической сортировке, затем по имени получателя.
    """
    result = validate_workflow(graph)
    if not result.ok:
        raise WorkflowValidationError(result.defects)

    g = _split_graph(graph)
    rank = {node: i for i, node in enumerate(nx.lexicographical_topological_sort(g, key=_node_key))}
    ordered = sorted(graph.edges, key=lambda e: (rank[(e.src, False)], e.dst))
    return [NumberedEdge(index=i, src=e.src, dst=e.dst) for i, e in enumerate(ordered, start=1)]


def agents_of(graph: WorkflowGraph, actor: str) -> Set[AgentId]:
    return {a for a in graph.agents if a.actor == actor}


def region_of(graph: WorkflowGraph, agent: str) -> str:
    """Регион pod-а: metadata 'region.<agent>' или 'region.<actor>', иначе значения по умолчанию."""
    actor = graph.actor_of(agent) or agent
    for key in (f"region.{agent}", f"region.{actor}"):
        if key in graph.metadata:
            return graph.metadata[key]
    return config.REGIONS.get(actor, config.DEFAULT_REGION)


def regions(graph: WorkflowGraph) -> Dict[str, str]:
    return {name: region_of(graph, name) for name in graph.agent_names()}


def load_workflow(path) -> WorkflowGraph:
    try:
        text = Path(path).read_text(encoding="utf-8")
        return WorkflowGraph.model_validate_json(text)
    except (OSError, ValidationError) as e:
        raise WorkflowError(f"не удалось прочитать workflow {path}: {e}") from e


def dump_workflow(graph: WorkflowGraph) -> str:
    return json.dumps(graph.model_dump(mode="json"), indent=2, ensure_ascii=False) + "\n"
