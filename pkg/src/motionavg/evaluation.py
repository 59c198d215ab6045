"""Per-graph pose errors, dataset-level threshold tables and error histograms."""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, LengthMismatch
from .graph import (
    AbsolutePoseSet,
    GroundTruthPoses,
    ViewGraph,
    _check_nodes,
    gauge_align_rotations,
    is_single_component,
    similarity_align_translations,
)
from .so3 import geodesic_angle

ROTATION_THRESHOLDS_DEG = (3.0, 5.0, 10.0, 30.0, 45.0)
TRANSLATION_THRESHOLDS_M = (0.05, 0.1, 0.25, 0.5, 0.75)
CSV_HEADER = ("rot_3deg,rot_5deg,rot_10deg,rot_30deg,rot_45deg,rot_median_deg,"
              "trans_0.05m,trans_0.1m,trans_0.25m,trans_0.5m,trans_0.75m,trans_median_m")


def graph_rotation_error(pred: AbsolutePoseSet, gt: GroundTruthPoses) -> float:
    """Mean geodesic error in degrees after removing the global rotation."""
    aligned = gauge_align_rotations(pred, gt)
    ids = _check_nodes(pred, gt)
    return float(np.mean([math.degrees(geodesic_angle(aligned.rotations[i], gt[i].R)) for i in ids]))


def graph_translation_error(pred: AbsolutePoseSet, gt: GroundTruthPoses, align: bool = True) -> float:
    """
    Mean center error in meters.

    Args:
        pred: predicted poses in any gauge.
        gt: ground truth keyed by node id.
        align: fit a similarity to the ground-truth centers first. With
            ``align=False`` the raw predicted centers are compared.

    Raises:
        DegenerateConfiguration: the ground-truth centers are collinear.
    """
    ids = _check_nodes(pred, gt)
    if align:
        pred = similarity_align_translations(pred, gt)
    return float(np.mean([np.linalg.norm(pred.centers[i] - gt[i].c) for i in ids]))


@dataclass(frozen=True)
class ErrorSummary:
    median: float
    pct_under: dict[float, float]


def summarize(errors, thresholds) -> ErrorSummary:
    """Median plus the percentage of values strictly below each threshold."""
    errors = [float(e) for e in errors]
    if not errors:
        return ErrorSummary(math.nan, {t: math.nan for t in thresholds})
    n = len(errors)
    pct = {t: 100.0 * sum(e < t for e in errors) / n for t in thresholds}
    return ErrorSummary(float(statistics.median(errors)), pct)


@dataclass(frozen=True)
class GraphResult:
    index: int
    status: str  # "ok", "skipped" or "failed"
    rotation_deg: float = math.nan
    translation_m: float = math.nan
    reason: str = ""


@dataclass(frozen=True)
class MetricsReport:
    rotation: ErrorSummary
    translation: ErrorSummary
    n_evaluated: int
    n_skipped: int
    n_failed: int = 0
    per_graph: tuple[GraphResult, ...] = field(default=(), compare=False)

    def row(self) -> list[float]:
        r, t = self.rotation, self.translation
        return ([r.pct_under[k] for k in ROTATION_THRESHOLDS_DEG] + [r.median]
                + [t.pct_under[k] for k in TRANSLATION_THRESHOLDS_M] + [t.median])

    def to_csv(self) -> str:
        return CSV_HEADER + "\n" + ",".join("%.6f" % v for v in self.row()) + "\n"

    def to_dict(self) -> dict:
        def part(s: ErrorSummary, unit: str):
            return {f"median_{unit}": s.median, "pct_under": {f"{k:g}": v for k, v in s.pct_under.items()}}

        return {
            "rotation": part(self.rotation, "deg"),
            "translation": part(self.translation, "m"),
            "n_graphs_evaluated": self.n_evaluated,
            "n_graphs_skipped_multicomponent": self.n_skipped,
            "n_graphs_failed": self.n_failed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def per_graph_csv(self, names=None) -> str:
        lines = ["graph,status,rotation_deg,translation_m,reason"]
        for r in self.per_graph:
            name = names[r.index] if names is not None else str(r.index)
            lines.append(f"{name},{r.status},{r.rotation_deg:.6f},{r.translation_m:.6f},{r.reason}")
        return "\n".join(lines) + "\n"


def evaluate_graph(index: int, g: ViewGraph, pred: AbsolutePoseSet | None, align_translations: bool = True,
                   reason: str = "") -> GraphResult:
    if not is_single_component(g):
        return GraphResult(index, "skipped", reason="multiple components")
    if pred is None:
        return GraphResult(index, "failed", reason=reason or "no prediction")
    return GraphResult(index, "ok", graph_rotation_error(pred, g.ground_truth),
                       graph_translation_error(pred, g.ground_truth, align_translations))


def evaluate_dataset(graphs, predictions, align_translations: bool = True, reasons=None) -> MetricsReport:
    """
    Threshold table over a dataset of graphs.

    Graphs with more than one connected component are skipped and counted.
    A ``None`` prediction marks a graph whose solve failed; it is counted
    separately and left out of the medians and percentages.

    Raises:
        EmptyDataset: no graphs were given.
        LengthMismatch: graphs and predictions differ in length.
    """
    graphs, predictions = list(graphs), list(predictions)
    if not graphs:
        raise EmptyDataset("cannot evaluate an empty dataset")
    if len(graphs) != len(predictions):
        raise LengthMismatch(f"{len(graphs)} graphs but {len(predictions)} predictions")
    reasons = reasons or [""] * len(graphs)
    results = tuple(evaluate_graph(k, g, p, align_translations, reasons[k])
                    for k, (g, p) in enumerate(zip(graphs, predictions)))
    ok = [r for r in results if r.status == "ok"]
    return MetricsReport(
        summarize([r.rotation_deg for r in ok], ROTATION_THRESHOLDS_DEG),
        summarize([r.translation_m for r in ok], TRANSLATION_THRESHOLDS_M),
        n_evaluated=len(ok),
        n_skipped=sum(r.status == "skipped" for r in results),
        n_failed=sum(r.status == "failed" for r in results),
        per_graph=results,
    )


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    scale: str = "linear"

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def values(self) -> np.ndarray:
        """Counts, or log10 counts with NaN on empty bins."""
        if self.scale == "linear":
            return self.counts.astype(float)
        out = np.full(len(self.counts), np.nan)
        nz = self.counts > 0
        out[nz] = np.log10(self.counts[nz])
        return out

    def to_csv(self) -> str:
        lines = ["bin_center,count"]
        for c, v in zip(self.centers, self.values):
            lines.append(f"{c:g},{'nan' if np.isnan(v) else '%.6f' % v}")
        return "\n".join(lines) + "\n"


def histogram(errors, bin_width: float, max_value: float, scale: str = "linear") -> Histogram:
    """Uniform bins on [0, max_value]; values past the end land in the last bin."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    if scale not in ("linear", "log10"):
        raise ValueError("scale must be 'linear' or 'log10'")
    n_bins = max(1, math.ceil(max_value / bin_width - 1e-9))
    edges = bin_width * np.arange(n_bins + 1, dtype=float)
    idx = np.floor(np.asarray(errors, dtype=float) / bin_width).astype(int)
    counts = np.bincount(np.clip(idx, 0, n_bins - 1), minlength=n_bins)
    return Histogram(edges, counts, scale)
