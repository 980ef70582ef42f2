import random

import numpy as np
import pytest

from app import identity
from app.crypto import make_signer
from app.mesh import deploy
from app.poc import movie_workflow, poc_policy, poc_workflow
from app.schemas import AgentId, SimConfig, WorkflowEdge, WorkflowGraph


@pytest.fixture
def movie_graph():
    return movie_workflow()


@pytest.fixture
def poc_graph():
    return poc_workflow()


@pytest.fixture
def policy():
    return poc_policy()


@pytest.fixture
def make_mesh():
    """Фабрика mesh-ей; всё, что создано в тесте, закрывается после него."""
    created = []

    def factory(graph=None, pol=None, **sim_kwargs):
        mesh = deploy(graph or poc_workflow(), pol or poc_policy(), SimConfig(**sim_kwargs))
        created.append(mesh)
        return mesh

    yield factory
    for mesh in created:
        mesh.close()


@pytest.fixture
def mesh(make_mesh):
    return make_mesh()


def random_workflow(rng: random.Random, n: int, return_edges: bool = True) -> WorkflowGraph:
    """
    Случайный корректный workflow: владелец a0, у каждого агента есть
    родитель среди предыдущих, дополнительные рёбра только вперёд
    и, возможно, возвраты к владельцу.
    """
    names = [f"a{i}" for i in range(n)]
    edges = set()
    for i in range(1, n):
        edges.add((names[rng.randrange(i)], names[i]))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.3:
                edges.add((names[i], names[j]))
    if return_edges:
        for i in range(1, n):
            if rng.random() < 0.4:
                edges.add((names[i], names[0]))
    ordered = sorted(edges)
    rng.shuffle(ordered)
    return WorkflowGraph(
        owner=names[0],
        agents=[AgentId(actor=name, agent=name) for name in names],
        edges=[WorkflowEdge(src=s, dst=d) for s, d in ordered],
    )


@pytest.fixture
def workflow_factory():
    return random_workflow


class Pki:
    """Набор CA/control plane/контроллер узлов для тестов идентичности."""

    def __init__(self, seed: int = 7, scheme: str = "hmac"):
        self.rng = np.random.default_rng(seed)
        self.audit = identity.IdentityAudit()
        self.naming = identity.SecureNaming()
        self.control_plane = identity.ControlPlane(self.rng)
        self.ca = identity.CertificateAuthority(
            signer=make_signer(scheme, self.rng),
            control_plane=self.control_plane,
            audit=self.audit,
            secure_naming=self.naming,
            lifetime=1000,
        )
        self.controller = identity.NodeController(self.ca)

    def operational_node(self, name: str = "node-vfx", now: int = 0) -> identity.Kubelet:
        node = identity.Kubelet(name=name, controller=self.controller)
        token = self.controller.create_bootstrap_token(self.rng, now)
        identity.kubelet_bootstrap(node, token, now, self.rng)
        return node

    def proxy(self, subject: str = "vfx-1", node: identity.Kubelet = None) -> identity.ProxyIdentity:
        node = node or self.operational_node()
        self.naming.register(subject, f"{subject}.svc")
        return identity.ProxyIdentity(
            subject=subject,
            service_name=f"{subject}.svc",
            node_agent=identity.NodeAgent(node, self.ca, self.rng),
        )


@pytest.fixture
def pki():
    return Pki()


@pytest.fixture
def make_pki():
    return Pki
