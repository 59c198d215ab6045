"""View-graph data model, connectivity and evaluation-time alignment.

Pose convention: ``R_i`` maps world coordinates into camera ``i`` and camera
centers ``C_i`` live in world coordinates. An edge (i, j) stores

    R_ij = R_i R_jᵀ                 (maps camera-j coordinates into camera i)
    T_ij = R_i (C_j - C_i) / |C_j - C_i|   (unit baseline in camera-i coordinates)

so the world-frame baseline direction is ``R_iᵀ T_ij`` and the reverse edge
is (R_ijᵀ, -R_ijᵀ T_ij).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    CoincidentCenters,
    DegenerateConfiguration,
    DuplicateEdge,
    NodeSetMismatch,
    UnknownNodeRef,
)
from .so3 import UnitQuaternion, nearest_rotation

_UNIT_SLACK = 1e-14


def _unit_tuple(v) -> tuple[float, float, float]:
    a = np.asarray(v, dtype=float).reshape(3)
    n = float(np.linalg.norm(a))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("direction must be a finite nonzero vector")
    if abs(n - 1.0) > _UNIT_SLACK:
        a = a / n
    return (float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class CameraNode:
    id: int
    focal: float = 525.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError(f"node {self.id}: focal must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"node {self.id}: image size must be positive")


@dataclass(frozen=True)
class DetectionBox:
    x: float
    y: float
    bb_w: float
    bb_h: float

    def __post_init__(self):
        if not (self.bb_w > 0 and self.bb_h > 0):
            raise ValueError("box width and height must be positive")

    def inside(self, node: CameraNode) -> bool:
        return (self.x >= 0 and self.y >= 0
                and self.x + self.bb_w <= node.width and self.y + self.bb_h <= node.height)


@dataclass(frozen=True)
class RelativePoseEdge:
    i: int
    j: int
    rotation: UnitQuaternion
    translation: tuple[float, float, float]
    boxes: tuple[tuple[DetectionBox, DetectionBox], ...] = ()

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError(f"self-loop on node {self.i}")
        object.__setattr__(self, "translation", _unit_tuple(self.translation))
        object.__setattr__(self, "boxes", tuple(tuple(b) for b in self.boxes))

    @classmethod
    def from_matrix(cls, i: int, j: int, R: np.ndarray, t, boxes=()) -> "RelativePoseEdge":
        return cls(i, j, UnitQuaternion.from_matrix(R), _unit_tuple(t), boxes)

    @property
    def key(self) -> tuple[int, int]:
        return (self.i, self.j)

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)


@dataclass(frozen=True)
class CameraPose:
    """Absolute pose stored in serialization-exact form."""

    rotation: UnitQuaternion
    center: tuple[float, float, float]

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) != 3:
            raise ValueError("center must have three components")
        object.__setattr__(self, "center", c)

    @classmethod
    def from_matrix(cls, R: np.ndarray, center) -> "CameraPose":
        return cls(UnitQuaternion.from_matrix(R), tuple(np.asarray(center, dtype=float)))

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)


GroundTruthPoses = Mapping[int, CameraPose]


@dataclass(frozen=True)
class ViewGraph:
    nodes: tuple[CameraNode, ...]
    edges: tuple[RelativePoseEdge, ...]
    ground_truth: dict[int, CameraPose] | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")
        known = set(ids)
        seen = set()
        for e in self.edges:
            for end in (e.i, e.j):
                if end not in known:
                    raise UnknownNodeRef(f"edge {e.i}-{e.j} refers to unknown node {end}")
            pair = frozenset((e.i, e.j))
            if pair in seen:
                raise DuplicateEdge(f"more than one edge between {e.i} and {e.j}")
            seen.add(pair)
        by_id = {n.id: n for n in self.nodes}
        for e in self.edges:
            for bi, bj in e.boxes:
                if not (bi.inside(by_id[e.i]) and bj.inside(by_id[e.j])):
                    warnings.warn(f"edge {e.i}-{e.j}: detection box outside the image", stacklevel=3)
        if self.ground_truth is not None:
            gt = dict(self.ground_truth)
            if set(gt) != known:
                raise ValueError("ground truth must cover every node")
            object.__setattr__(self, "ground_truth", gt)

    @property
    def node_ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def connectivity(self) -> float:
        pairs = self.n * (self.n - 1) / 2
        return len(self.edges) / pairs if pairs else 0.0

    def replace_edges(self, edges: Iterable[RelativePoseEdge]) -> "ViewGraph":
        return ViewGraph(self.nodes, tuple(edges), self.ground_truth)

    def oriented(self, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Relative pose (R_ij, T_ij) in the i->j direction, reversing the stored edge if needed."""
        for e in self.edges:
            if e.key == (i, j):
                return e.R, e.t
            if e.key == (j, i):
                return reverse_relative(e.R, e.t)
        raise KeyError(f"no edge between {i} and {j}")


def reverse_relative(R: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Rt = R.T
    return Rt, -(Rt @ t)


class Gauge:
    RAW = "raw"
    ALIGNED = "aligned"
    ANCHORED = "anchored"


@dataclass
class AbsolutePoseSet:
    rotations: dict[int, np.ndarray]
    centers: dict[int, np.ndarray] = field(default_factory=dict)
    gauge: str = Gauge.RAW
    anchor: int | None = None

    def __post_init__(self):
        if not self.centers:
            self.centers = {i: np.zeros(3) for i in self.rotations}
        if set(self.centers) != set(self.rotations):
            raise ValueError("rotations and centers must cover the same nodes")
        if self.gauge == Gauge.ANCHORED:
            if self.anchor not in self.rotations:
                raise ValueError("anchored gauge needs an anchor node present in the set")
            if np.max(np.abs(self.rotations[self.anchor] - np.eye(3))) > 1e-10:
                raise ValueError("anchor rotation must be the identity")

    @property
    def node_ids(self) -> list[int]:
        return sorted(self.rotations)

    @classmethod
    def from_ground_truth(cls, gt: GroundTruthPoses) -> "AbsolutePoseSet":
        return cls({i: p.R for i, p in gt.items()}, {i: p.c for i, p in gt.items()}, Gauge.RAW)


def relative_from_absolute(gt: GroundTruthPoses, i: int, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact relative pose (R_ij, T_ij) implied by absolute poses."""
    Ri, Rj = gt[i].R, gt[j].R
    base = gt[j].c - gt[i].c
    n = np.linalg.norm(base)
    if n < 1e-12:
        raise CoincidentCenters(f"nodes {i} and {j} share a center")
    return Ri @ Rj.T, Ri @ (base / n)


def connected_components(g: ViewGraph) -> list[set[int]]:
    parent = {i: i for i in g.node_ids}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in g.edges:
        ra, rb = find(e.i), find(e.j)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    comps: dict[int, set[int]] = {}
    for i in g.node_ids:
        comps.setdefault(find(i), set()).add(i)
    return sorted(comps.values(), key=min)


def is_single_component(g: ViewGraph) -> bool:
    return len(connected_components(g)) == 1


def _check_nodes(pred: AbsolutePoseSet, gt: GroundTruthPoses) -> list[int]:
    if set(pred.rotations) != set(gt):
        raise NodeSetMismatch("prediction and ground truth cover different nodes")
    return sorted(gt)


def gauge_align_rotations(pred: AbsolutePoseSet, gt: GroundTruthPoses) -> AbsolutePoseSet:
    """Right-multiply every predicted rotation by the S minimizing Σ ||R_i S - R̂_i||_F²."""
    ids = _check_nodes(pred, gt)
    S = nearest_rotation(sum(pred.rotations[i].T @ gt[i].R for i in ids))
    return AbsolutePoseSet({i: pred.rotations[i] @ S for i in ids},
                           {i: pred.centers[i].copy() for i in ids}, Gauge.ALIGNED)


def umeyama(src: np.ndarray, dst: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Least-squares similarity (s, R, o) minimizing Σ ||s R src_k + o - dst_k||².

    Args:
        src: (N, 3) source points.
        dst: (N, 3) target points, at least 3 and not collinear.

    Returns:
        scale, rotation (3x3), offset (3,)
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sd = np.linalg.svd(xd, compute_uv=False)
    if len(dst) < 3 or sd[1] <= 1e-9 * max(sd[0], 1e-300):
        raise DegenerateConfiguration("ground-truth centers are collinear")
    var_s = np.sum(xs * xs) / len(src)
    if var_s <= 1e-300:
        raise DegenerateConfiguration("predicted centers coincide")
    cov = xd.T @ xs / len(src)
    U, d, Vt = np.linalg.svd(cov)
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2] = -1.0
    R = U @ np.diag(D) @ Vt
    s = float(np.dot(d, D) / var_s)
    o = mu_d - s * R @ mu_s
    return s, R, o


def similarity_align_translations(pred: AbsolutePoseSet, gt: GroundTruthPoses) -> AbsolutePoseSet:
    ids = _check_nodes(pred, gt)
    src = np.array([pred.centers[i] for i in ids])
    dst = np.array([gt[i].c for i in ids])
    s, R, o = umeyama(src, dst)
    return AbsolutePoseSet({i: pred.rotations[i].copy() for i in ids},
                           {i: s * R @ pred.centers[i] + o for i in ids}, Gauge.ALIGNED)
