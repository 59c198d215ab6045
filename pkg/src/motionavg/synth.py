"""Synthetic scenes and view graphs with a chirality-aware noise model."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationFailed, MissingGroundTruth
from .graph import (
    CameraNode,
    CameraPose,
    DetectionBox,
    RelativePoseEdge,
    ViewGraph,
    is_single_component,
    relative_from_absolute,
)
from .so3 import random_perpendicular, random_unit_vector, rot_about_axis, unit

FLIP_KINDS = ("twist", "negate-t", "twist-and-negate")
MAX_CONNECTIVITY_RETRIES = 100


@dataclass(frozen=True)
class SceneConfig:
    n_nodes: int = 8
    target_connectivity: float = 0.5536
    radius: float = 2.0
    look_at_jitter: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 3:
            raise ValueError("n_nodes must be at least 3")
        if not 0 < self.target_connectivity <= 1:
            raise ValueError("target_connectivity must be in (0, 1]")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.look_at_jitter < 0:
            raise ValueError("look_at_jitter must be nonnegative")

    @property
    def n_edges(self) -> int:
        pairs = self.n_nodes * (self.n_nodes - 1) // 2
        # 1e-9 guards against 1.0 * 28 landing a hair above an integer
        return min(pairs, math.ceil(self.target_connectivity * pairs - 1e-9))


@dataclass(frozen=True)
class NoiseModel:
    """Angles in degrees. Flips are drawn before the continuous noise."""

    rot_sigma: float = 5.0
    dir_sigma: float = 5.0
    chirality_flip_prob: float = 0.15
    flip_kind_weights: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.rot_sigma < 0 or self.dir_sigma < 0:
            raise ValueError("noise sigmas must be nonnegative")
        if not 0 <= self.chirality_flip_prob <= 1:
            raise ValueError("chirality_flip_prob must be in [0, 1]")
        w = tuple(float(v) for v in self.flip_kind_weights)
        if len(w) != 3 or any(v < 0 for v in w):
            raise ValueError("flip_kind_weights must be three nonnegative numbers")
        if self.chirality_flip_prob > 0 and sum(w) == 0:
            raise ValueError("flip_kind_weights cannot all be zero when flips are enabled")
        object.__setattr__(self, "flip_kind_weights", w)


def _look_at(center: np.ndarray, target: np.ndarray, jitter_deg: float, rng) -> np.ndarray:
    """World-to-camera rotation whose optical (+z) axis points near ``target``."""
    z = unit(target - center)
    if jitter_deg > 0:
        z = rot_about_axis(random_perpendicular(z, rng), np.radians(abs(rng.normal(0, jitter_deg)))) @ z
    x = random_perpendicular(z, rng)
    y = np.cross(z, x)
    # rows are the camera axes expressed in world coordinates
    return np.stack([x, y, z])


def _random_boxes(node_i: CameraNode, node_j: CameraNode, rng) -> tuple:
    def box(node):
        w = rng.uniform(0.1, 0.4) * node.width
        h = rng.uniform(0.1, 0.4) * node.height
        return DetectionBox(rng.uniform(0, node.width - w), rng.uniform(0, node.height - h), w, h)

    return tuple((box(node_i), box(node_j)) for _ in range(int(rng.integers(1, 4))))


def generate_scene(cfg: SceneConfig, with_boxes: bool = False) -> ViewGraph:
    """Random single-component view graph with ground truth and exact relative poses."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_nodes
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = dirs * (cfg.radius * rng.random(n) ** (1.0 / 3.0))[:, None]
    centroid = centers.mean(axis=0)
    gt = {}
    for i in range(n):
        R = _look_at(centers[i], centroid, cfg.look_at_jitter, rng)
        gt[i] = CameraPose.from_matrix(R, centers[i])
    nodes = tuple(CameraNode(i) for i in range(n))

    pairs = list(itertools.combinations(range(n), 2))
    m = cfg.n_edges
    for _ in range(MAX_CONNECTIVITY_RETRIES):
        chosen = sorted(rng.choice(len(pairs), size=m, replace=False))
        skeleton = ViewGraph(nodes, tuple(RelativePoseEdge(pairs[k][0], pairs[k][1], gt[0].rotation, (1.0, 0.0, 0.0))
                                          for k in chosen))
        if is_single_component(skeleton):
            break
    else:
        raise GenerationFailed(f"no single-component graph with {m} edges after {MAX_CONNECTIVITY_RETRIES} tries")

    edges = []
    for k in chosen:
        i, j = pairs[k]
        R_ij, t_ij = relative_from_absolute(gt, i, j)
        boxes = _random_boxes(nodes[i], nodes[j], rng) if with_boxes else ()
        edges.append(RelativePoseEdge.from_matrix(i, j, R_ij, t_ij, boxes))
    return ViewGraph(nodes, tuple(edges), gt)


def apply_noise(g: ViewGraph, nm: NoiseModel, seed: int) -> ViewGraph:
    """
    Corrupt every edge independently.

    Each edge draws the same number of random variates whatever the model
    parameters, so two models sharing a seed differ only where they must.
    """
    if g.ground_truth is None:
        raise MissingGroundTruth("apply_noise needs a graph with ground truth")
    rng = np.random.default_rng(seed)
    weights = np.asarray(nm.flip_kind_weights, dtype=float)
    probs = weights / weights.sum() if weights.sum() > 0 else np.array([1.0, 0.0, 0.0])
    rot_sigma, dir_sigma = np.radians(nm.rot_sigma), np.radians(nm.dir_sigma)

    out = []
    for e in g.edges:
        u_flip = rng.random()
        kind = FLIP_KINDS[int(rng.choice(3, p=probs))]
        rot_axis = random_unit_vector(rng)
        rot_angle = abs(rng.normal(0.0, 1.0)) * rot_sigma
        dir_axis = random_perpendicular(e.t, rng)
        dir_angle = abs(rng.normal(0.0, 1.0)) * dir_sigma

        flipped = u_flip < nm.chirality_flip_prob
        if not flipped and rot_angle == 0.0 and dir_angle == 0.0:
            out.append(e)
            continue
        R, t = e.R, e.t
        if flipped and kind in ("twist", "twist-and-negate"):
            R = (2.0 * np.outer(t, t) - np.eye(3)) @ R
        if flipped and kind in ("negate-t", "twist-and-negate"):
            t = -t
        if rot_angle > 0:
            R = rot_about_axis(rot_axis, rot_angle) @ R
        if dir_angle > 0:
            t = rot_about_axis(dir_axis, dir_angle) @ t
        out.append(RelativePoseEdge.from_matrix(e.i, e.j, R, t, e.boxes))
    return g.replace_edges(out)
