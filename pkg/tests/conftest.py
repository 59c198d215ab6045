import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from motionavg.graph import CameraNode, CameraPose, RelativePoseEdge, ViewGraph, relative_from_absolute
from motionavg.so3 import random_rotation
from motionavg.synth import SceneConfig, generate_scene

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def graph_from_poses(rotations, centers, pairs) -> ViewGraph:
    """Noise-free graph with the given absolute poses and edge list."""
    gt = {i: CameraPose.from_matrix(R, c) for i, (R, c) in enumerate(zip(rotations, centers))}
    nodes = tuple(CameraNode(i) for i in range(len(rotations)))
    edges = tuple(RelativePoseEdge.from_matrix(i, j, *relative_from_absolute(gt, i, j)) for i, j in pairs)
    return ViewGraph(nodes, edges, gt)


def random_poses(n: int, rng) -> tuple[list, list]:
    return [random_rotation(rng) for _ in range(n)], list(rng.uniform(-2, 2, size=(n, 3)))


def min_degree(g: ViewGraph) -> int:
    deg = {i: 0 for i in g.node_ids}
    for e in g.edges:
        deg[e.i] += 1
        deg[e.j] += 1
    return min(deg.values())


def rigid_scenes(count: int, start: int = 0, **kw) -> list[ViewGraph]:
    """Default-shaped clean scenes whose every camera has two or more neighbors."""
    out, seed = [], start
    while len(out) < count:
        g = generate_scene(SceneConfig(seed=seed, **kw))
        seed += 1
        if min_degree(g) >= 2:
            out.append(g)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def edge_disjoint_paths(g: ViewGraph, k: int) -> int:
    """Edge-disjoint paths joining the ends of edge k once it is removed (unit-capacity max flow)."""
    src, dst = g.edges[k].i, g.edges[k].j
    cap: dict[int, dict[int, int]] = {i: {} for i in g.node_ids}
    for q, e in enumerate(g.edges):
        if q != k:
            cap[e.i][e.j] = cap[e.i].get(e.j, 0) + 1
            cap[e.j][e.i] = cap[e.j].get(e.i, 0) + 1
    flow = 0
    while True:
        prev = {src: None}
        stack = [src]
        while stack:
            u = stack.pop()
            for v, c in cap[u].items():
                if c > 0 and v not in prev:
                    prev[v] = u
                    stack.append(v)
        if dst not in prev:
            return flow
        v = dst
        while prev[v] is not None:
            u = prev[v]
            cap[u][v] -= 1
            cap[v][u] = cap[v].get(u, 0) + 1
            v = u
        flow += 1


def outliers_identifiable(g: ViewGraph, outliers: set[int]) -> bool:
    """
    Whether a robust cost can tell the outlier edges apart: each has two
    edge-disjoint detours, and clean edges hold a strict majority at every node.
    """
    for i in g.node_ids:
        at = [q for q, e in enumerate(g.edges) if i in e.key]
        if 2 * sum(q in outliers for q in at) >= len(at) and any(q in outliers for q in at):
            return False
    return all(edge_disjoint_paths(g, q) >= 2 for q in outliers)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
