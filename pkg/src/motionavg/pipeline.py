"""Per-graph pipeline: repair, rotation averaging, translation averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

from .chirality import RepairConfig, RepairReport, repair_graph
from .errors import MotionAveragingError
from .graph import AbsolutePoseSet, ViewGraph, is_single_component
from .rotavg import RotAvgConfig, SolverTrace, solve_rotations
from .transavg import BataTrace, TransAvgConfig, bata_solve


@dataclass(frozen=True)
class StageConfig:
    repair: RepairConfig = RepairConfig()
    rotavg: RotAvgConfig = RotAvgConfig()
    transavg: TransAvgConfig = TransAvgConfig()
    solver: str = "iterative"
    skip_repair: bool = False


@dataclass
class GraphRun:
    poses: AbsolutePoseSet | None
    repaired: ViewGraph | None = None
    repair_report: RepairReport | None = None
    rotation_trace: SolverTrace = field(default_factory=SolverTrace)
    translation_trace: BataTrace = field(default_factory=BataTrace)
    status: str = "ok"
    reason: str = ""

    def traces(self) -> dict:
        return {
            "status": self.status,
            "reason": self.reason,
            "repair": self.repair_report.to_dict() if self.repair_report else None,
            "rotation": self.rotation_trace.to_dict(),
            "translation": self.translation_trace.to_dict(),
        }


def run_graph(g: ViewGraph, cfg: StageConfig = StageConfig()) -> GraphRun:
    """Run every stage on one graph; solver errors are captured, not raised."""
    if not is_single_component(g):
        return GraphRun(None, status="skipped", reason="multiple components")
    run = GraphRun(None)
    try:
        work = g
        if not cfg.skip_repair:
            work, run.repair_report = repair_graph(g, cfg.repair)
        run.repaired = work
        rotations = solve_rotations(work, cfg.solver, cfg.rotavg, run.rotation_trace)
        run.poses = bata_solve(work, rotations, cfg=cfg.transavg, trace=run.translation_trace)
    except (MotionAveragingError, ValueError) as exc:
        run.poses = None
        run.status = "failed"
        run.reason = f"{type(exc).__name__}: {exc}"
    return run
