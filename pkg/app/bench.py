"""
Бенчмарки поверх симуляции: время старта pod-ов (PodScheduled -> Ready)
и время round trip разрешённых запросов на разных уровнях политики.
Уровни используют одни и те же потоки случайных чисел, поэтому разница
между уровнями определяется только самим уровнем.
"""
import csv
import io
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import config
from app.exceptions import BenchError, PolicyError
from app.mesh import deploy, send
from app.policy import inflate_policy
from app.schemas import HttpMethod, PolicyDocument, SimConfig, WorkflowGraph

logger = logging.getLogger(__name__)

INTRA = "intra"
INTER = "inter"


@dataclass(frozen=True)
class BenchRow:
    label: str
    value: float
    tag: str  # pod для startup, intra/inter для request


def level_setup(level: str, policy: PolicyDocument) -> Tuple[PolicyDocument, Dict[str, bool]]:
    """Уровень бенчмарка -> (политика, переопределения SimConfig)."""
    if level == "no-sidecar":
        return policy, {"no_policy_sidecar": True}
    if level == "all-allow":
        return policy, {"allow_all": True}
    if level == "minimal":
        return policy, {}
    if level.startswith("+"):
        try:
            extra = int(level[1:])
            return inflate_policy(policy, extra), {}
        except (ValueError, PolicyError) as e:
            raise BenchError(f"некорректный уровень {level!r}: {e}") from e
    raise BenchError(f"неизвестный уровень {level!r}, ожидается один из {', '.join(config.BENCH_LEVELS)}")


def _check_samples(samples: int):
    if samples < 1:
        raise BenchError(f"число наблюдений должно быть >= 1, передано {samples}")


def startup_bench(graph: WorkflowGraph, policy: PolicyDocument, levels: Sequence[str],
                  samples: int = config.STARTUP_SAMPLES, seed: int = config.SIM_SEED) -> List[BenchRow]:
    """samples развёртываний на уровень, одно наблюдение на pod за развёртывание."""
    _check_samples(samples)
    rows: List[BenchRow] = []
    for level in levels:
        level_policy, overrides = level_setup(level, policy)
        for i in range(samples):
            sim = SimConfig(seed=seed + i, capture=False, **overrides)
            mesh = deploy(graph, level_policy, sim)
            try:
                rows.extend(BenchRow(label=level, value=pod.startup_duration, tag=pod.name)
                            for pod in mesh.pods.values())
            finally:
                mesh.close()
        logger.info(f"startup {level}: {samples} развёртываний")
    return rows


def request_bench(graph: WorkflowGraph, policy: PolicyDocument, levels: Sequence[str],
                  samples: int = config.REQUEST_SAMPLES, seed: int = config.SIM_SEED,
                  method: HttpMethod = HttpMethod(config.DEFAULT_METHOD)) -> List[BenchRow]:
    """samples запросов на каждое ребро workflow на уровень, с меткой intra/inter."""
    _check_samples(samples)
    edges = [(e.src, e.dst) for e in graph.edges]
    if not edges:
        raise BenchError("в workflow нет рёбер для измерения")

    rows: List[BenchRow] = []
    for level in levels:
        level_policy, overrides = level_setup(level, policy)
        mesh = deploy(graph, level_policy, SimConfig(seed=seed, capture=False, **overrides))
        try:
            for _ in range(samples):
                for src, dst in edges:
                    response = mesh_send_checked(mesh, src, dst, method)
                    tag = INTRA if mesh.pod(src).region == mesh.pod(dst).region else INTER
                    rows.append(BenchRow(label=level, value=response.elapsed, tag=tag))
        finally:
            mesh.close()
        logger.info(f"request {level}: {samples * len(edges)} запросов")
    return rows


def mesh_send_checked(mesh, src: str, dst: str, method: HttpMethod):
    response = send(mesh, src, dst, method)
    if response.status >= 300:
        raise BenchError(f"коммуникация {src}->{dst} не разрешена политикой ({response.status})")
    return response


def rows_to_csv(rows: Sequence[BenchRow], tag_column: str) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["label", "value", tag_column])
    for row in rows:
        writer.writerow([row.label, repr(row.value), row.tag])
    return buffer.getvalue()
