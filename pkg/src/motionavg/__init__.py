"""Motion averaging for small view graphs of noisy relative poses.

Rotations are world-to-camera, centers are in world coordinates, and an
edge (i, j) stores R_ij = R_i R_jᵀ with the unit baseline direction
T_ij = R_i (C_j - C_i) / |C_j - C_i| expressed in camera i.
"""

from .chirality import RepairConfig, repair_graph, transfer_matrix
from .evaluation import MetricsReport, evaluate_dataset, graph_rotation_error, graph_translation_error, histogram
from .graph import AbsolutePoseSet, CameraNode, CameraPose, RelativePoseEdge, ViewGraph
from .graph_io import parse_graph, parse_graphs, serialize_graph, serialize_graphs
from .pipeline import StageConfig, run_graph
from .robust import RobustLoss
from .rotavg import RotAvgConfig, solve_rotations
from .so3 import UnitQuaternion
from .synth import NoiseModel, SceneConfig, apply_noise, generate_scene
from .transavg import TransAvgConfig, bata_solve

__all__ = [
    "AbsolutePoseSet", "CameraNode", "CameraPose", "MetricsReport", "NoiseModel", "RelativePoseEdge",
    "RepairConfig", "RobustLoss", "RotAvgConfig", "SceneConfig", "StageConfig", "TransAvgConfig",
    "UnitQuaternion", "ViewGraph", "apply_noise", "bata_solve", "evaluate_dataset", "generate_scene",
    "graph_rotation_error", "graph_translation_error", "histogram", "parse_graph", "parse_graphs",
    "repair_graph", "run_graph", "serialize_graph", "serialize_graphs", "solve_rotations",
    "transfer_matrix",
]
