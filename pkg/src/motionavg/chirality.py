"""Chirality repair by choosing, per edge, among the four essential-matrix decompositions.

An essential matrix fixes a relative pose only up to the translation sign
and the twisted pair R_tw = rot(t, π) R. The repair picks one candidate per
edge so that triangles close up: the rotation loop composes to the identity
and the three baselines are coplanar with positive coefficients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch
from .graph import RelativePoseEdge, ViewGraph, relative_from_absolute
from .so3 import geodesic_angle

N_CANDIDATES = 4
SIGN_PENALTY = math.pi / 2
EXHAUSTIVE_MAX_EDGES = 8
ELIMINATION_MAX_WIDTH = 10  # largest intermediate table is 4**width entries
SEARCHES = ("exact", "icm")


def twist(t: np.ndarray) -> np.ndarray:
    """rot(t, π) = 2ttᵀ - I."""
    return 2.0 * np.outer(t, t) - np.eye(3)


@dataclass
class CandidateSet:
    key: tuple[int, int]
    candidates: list[tuple[np.ndarray, np.ndarray]]
    selected: int = 0


def candidate_poses(R: np.ndarray, t: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    R_tw = twist(t) @ R
    return [(R, t), (R, -t), (R_tw, t), (R_tw, -t)]


def enumerate_candidates(edge: RelativePoseEdge) -> CandidateSet:
    return CandidateSet(edge.key, candidate_poses(edge.R, edge.t))


def triangles(g: ViewGraph) -> list[tuple[int, int, int]]:
    """Triangles as (edge index ab, bc, ac) for node triples a < b < c."""
    index = {frozenset(e.key): k for k, e in enumerate(g.edges)}
    adj: dict[int, set[int]] = {i: set() for i in g.node_ids}
    for e in g.edges:
        adj[e.i].add(e.j)
        adj[e.j].add(e.i)
    out = []
    for a in sorted(adj):
        for b in sorted(x for x in adj[a] if x > a):
            for c in sorted(x for x in adj[a] & adj[b] if x > b):
                out.append((index[frozenset((a, b))], index[frozenset((b, c))], index[frozenset((a, c))]))
    return out


def _oriented(R, t, stored, wanted):
    """Candidate arrays oriented from wanted[0] to wanted[1]."""
    if stored == wanted:
        return R, t
    Rt = np.swapaxes(R, -1, -2)
    return Rt, -np.einsum("...ij,...j->...i", Rt, t)


def _triangle_table(g: ViewGraph, cands: list, tri: tuple[int, int, int], lambda_t: float) -> np.ndarray:
    """Cost of one triangle for all 4x4x4 candidate combinations, indexed [ab, bc, ac]."""
    e_ab, e_bc, e_ac = (g.edges[k] for k in tri)
    a, b = sorted(e_ab.key)
    c = max(e_bc.key)
    Rs, ts = [], []
    for k, e, wanted in zip(tri, (e_ab, e_bc, e_ac), ((a, b), (b, c), (a, c))):
        R = np.stack([p[0] for p in cands[k]])
        t = np.stack([p[1] for p in cands[k]])
        R, t = _oriented(R, t, e.key, wanted)
        Rs.append(R)
        ts.append(t)
    R_ab = Rs[0][:, None, None]
    R_bc = Rs[1][None, :, None]
    R_ac = Rs[2][None, None, :]
    # R_ab R_bc R_ca with R_ca = R_acᵀ; identity for a consistent loop
    loop = R_ab @ R_bc @ np.swapaxes(R_ac, -1, -2)
    cos = np.clip((np.trace(loop, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    skew = loop - np.swapaxes(loop, -1, -2)
    sin = 0.5 * np.sqrt(skew[..., 2, 1] ** 2 + skew[..., 0, 2] ** 2 + skew[..., 1, 0] ** 2)
    rot_term = np.arctan2(sin, cos)

    # baselines a->b, b->c, c->a in camera-a coordinates
    d_ab = np.broadcast_to(ts[0][:, None, None], (4, 4, 4, 3))
    d_bc = np.broadcast_to(np.einsum("aij,bj->abi", Rs[0], ts[1])[:, :, None], (4, 4, 4, 3))
    d_ca = np.broadcast_to(-ts[2][None, None, :], (4, 4, 4, 3))
    M = np.stack([d_ab, d_bc, d_ca], axis=-1)
    _, s, Vt = np.linalg.svd(M)
    null = Vt[..., -1, :]
    mixed = ~(np.all(null > 0, axis=-1) | np.all(null < 0, axis=-1))
    trans_term = s[..., -1] + SIGN_PENALTY * mixed
    return rot_term + lambda_t * trans_term


class _CycleCost:
    """Triangle costs tabulated once; assignments then cost table lookups only."""

    def __init__(self, g: ViewGraph, lambda_t: float):
        self.g = g
        self.cands = [candidate_poses(e.R, e.t) for e in g.edges]
        self.tris = triangles(g)
        self.tables = [_triangle_table(g, self.cands, tri, lambda_t) for tri in self.tris]
        self.edge_tris: list[list[int]] = [[] for _ in g.edges]
        for k, tri in enumerate(self.tris):
            for e in tri:
                self.edge_tris[e].append(k)

    def total(self, assign) -> float:
        return float(sum(tab[assign[t[0]], assign[t[1]], assign[t[2]]] for t, tab in zip(self.tris, self.tables)))

    def local(self, assign, e: int) -> np.ndarray:
        costs = np.zeros(N_CANDIDATES)
        for k in self.edge_tris[e]:
            tri, tab = self.tris[k], self.tables[k]
            for c in range(N_CANDIDATES):
                a = [assign[x] if x != e else c for x in tri]
                costs[c] += tab[a[0], a[1], a[2]]
        return costs


def triangle_cycle_cost(g: ViewGraph, assignment=None, lambda_t: float = 1.0) -> float:
    """Summed triangle inconsistency for a per-edge candidate assignment (default: all observed)."""
    if assignment is None:
        assignment = [0] * len(g.edges)
    if len(assignment) != len(g.edges):
        raise LengthMismatch("assignment needs one candidate index per edge")
    return _CycleCost(g, lambda_t).total(list(assignment))


@dataclass(frozen=True)
class RepairConfig:
    max_sweeps: int = 50
    restarts: int = 8
    lambda_t: float = 1.0
    seed: int = 0
    exhaustive_max_edges: int = EXHAUSTIVE_MAX_EDGES
    search: str = "exact"

    def __post_init__(self):
        if self.search not in SEARCHES:
            raise ValueError(f"search must be one of {SEARCHES}")
        if min(self.max_sweeps, self.restarts + 1) < 1:
            raise ValueError("max_sweeps must be positive and restarts nonnegative")


@dataclass
class EdgeRepair:
    key: tuple[int, int]
    input_index: int
    output_index: int
    input_error: float | None = None
    output_error: float | None = None


@dataclass
class RepairReport:
    edges: list[EdgeRepair]
    triangle_count: int
    cost_before: float
    cost_after: float
    iterations: int
    converged: bool
    method: str
    restart_costs: list[float] = field(default_factory=list)

    @property
    def changed(self) -> int:
        return sum(r.input_index != r.output_index for r in self.edges)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "triangles": self.triangle_count,
            "cost_before": self.cost_before,
            "cost_after": self.cost_after,
            "iterations": self.iterations,
            "converged": self.converged,
            "changed_edges": self.changed,
            "edges": [
                {"i": r.key[0], "j": r.key[1], "input": r.input_index, "output": r.output_index,
                 "input_error_deg": r.input_error, "output_error_deg": r.output_error}
                for r in self.edges
            ],
        }


TIE_TOL = 1e-9


def _first_min(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Lowest index whose value is within TIE_TOL of the minimum along axis.

    A plain argmin lets rounding noise choose among exactly tied candidates, so
    a change of world frame could change the repair. Lower indices are closer
    to the measured edge, so they win ties.
    """
    near = x <= np.min(x, axis=axis, keepdims=True) + TIE_TOL
    return np.argmax(near, axis=axis)


def _icm(cost: _CycleCost, assign: list[int], active: list[int], max_sweeps: int) -> tuple[list[int], int, bool]:
    for sweep in range(1, max_sweeps + 1):
        changed = False
        for e in active:
            local = cost.local(assign, e)
            best = int(_first_min(local))
            if best != assign[e] and local[best] < local[assign[e]] - TIE_TOL:
                assign[e] = best
                changed = True
        if not changed:
            return assign, sweep, True
    return assign, max_sweeps, False


def _exhaustive(cost: _CycleCost, active: list[int]) -> list[int]:
    n = len(active)
    total = np.zeros((N_CANDIDATES,) * n)
    pos = {e: k for k, e in enumerate(active)}
    for tri, tab in zip(cost.tris, cost.tables):
        axes = [pos[e] for e in tri]
        # lay the 4x4x4 table along the three edge axes of the full grid
        shape = [1] * n
        for ax in axes:
            shape[ax] = N_CANDIDATES
        total = total + np.transpose(tab, np.argsort(axes)).reshape(shape)
    best = np.unravel_index(int(_first_min(total.ravel())), total.shape)
    assign = [0] * len(cost.g.edges)
    for e, c in zip(active, best):
        assign[e] = int(c)
    return assign


def _elimination_order(cost: _CycleCost, active: list[int], max_width: int) -> list[int] | None:
    """Greedy min-fill-in order over the edge interaction graph, or None if too wide."""
    nbrs = {e: set() for e in active}
    for tri in cost.tris:
        for e in tri:
            nbrs[e].update(x for x in tri if x != e)
    order = []
    while nbrs:
        v = min(nbrs, key=lambda x: (len(nbrs[x]), x))
        if len(nbrs[v]) + 1 > max_width:
            return None
        for x in nbrs[v]:
            nbrs[x].update(y for y in nbrs[v] if y != x)
            nbrs[x].discard(v)
        del nbrs[v]
        order.append(v)
    return order


def _eliminate(cost: _CycleCost, order: list[int]) -> list[int]:
    """Exact min-sum variable elimination over the triangle factors."""
    factors = [(tuple(tri), tab) for tri, tab in zip(cost.tris, cost.tables)]
    steps = []
    for v in order:
        touching = [f for f in factors if v in f[0]]
        factors = [f for f in factors if v not in f[0]]
        scope = sorted({x for vars_, _ in touching for x in vars_} - {v}) + [v]
        total = np.zeros((N_CANDIDATES,) * len(scope))
        for vars_, tab in touching:
            axes = [scope.index(x) for x in vars_]
            shape = [1] * len(scope)
            for ax in axes:
                shape[ax] = N_CANDIDATES
            total = total + np.transpose(tab, np.argsort(axes)).reshape(shape)
        steps.append((v, scope[:-1], _first_min(total)))
        factors.append((tuple(scope[:-1]), np.min(total, axis=-1)))
    assign = [0] * len(cost.g.edges)
    for v, rest, best in reversed(steps):
        assign[v] = int(best[tuple(assign[x] for x in rest)])
    return assign


def edge_rotation_errors(g: ViewGraph) -> list[float]:
    """Per-edge geodesic error in degrees against the ground-truth relative rotation."""
    if g.ground_truth is None:
        raise ValueError("graph has no ground truth")
    out = []
    for e in g.edges:
        R_gt, _ = relative_from_absolute(g.ground_truth, e.i, e.j)
        out.append(math.degrees(geodesic_angle(e.R, R_gt)))
    return out


def repair_graph(g: ViewGraph, config: RepairConfig = RepairConfig()) -> tuple[ViewGraph, RepairReport]:
    """
    Select one decomposition candidate per edge minimizing the triangle cycle cost.

    Graphs whose triangle-bearing edges number at most 8 are solved by
    enumeration. Larger ones are solved exactly by variable elimination
    when the interaction graph is narrow enough (``search="exact"``);
    otherwise, or with ``search="icm"``, iterated conditional modes runs from
    the observed assignment plus seeded random restarts and keeps the
    cheapest. Edges in no triangle keep their observed pose.
    """
    cost = _CycleCost(g, config.lambda_t)
    active = sorted({e for tri in cost.tris for e in tri})
    start = [0] * len(g.edges)
    cost_before = cost.total(start)

    if not active:
        best, iters, converged, method, restart_costs = start, 0, True, "none", []
    elif len(active) <= config.exhaustive_max_edges:
        best = _exhaustive(cost, active)
        iters, converged, method, restart_costs = 1, True, "exhaustive", []
    elif config.search == "exact" and (order := _elimination_order(cost, active, ELIMINATION_MAX_WIDTH)):
        best = _eliminate(cost, order)
        iters, converged, method, restart_costs = 1, True, "elimination", []
    else:
        method = "icm"
        best, iters, converged = _icm(cost, list(start), active, config.max_sweeps)
        best_cost = cost.total(best)
        restart_costs = [best_cost]
        for r in range(1, config.restarts + 1):
            rng = np.random.default_rng([config.seed, r])
            init = list(start)
            for e in active:
                init[e] = int(rng.integers(N_CANDIDATES))
            cand, it, conv = _icm(cost, init, active, config.max_sweeps)
            c = cost.total(cand)
            restart_costs.append(c)
            if c < best_cost - TIE_TOL:
                best, best_cost, iters, converged = cand, c, it, conv

    cost_after = cost.total(best)
    edges_out = []
    for k, e in enumerate(g.edges):
        if best[k] == 0:
            edges_out.append(e)
        else:
            R, t = cost.cands[k][best[k]]
            edges_out.append(RelativePoseEdge.from_matrix(e.i, e.j, R, t, e.boxes))
    out = g.replace_edges(edges_out)

    before_err = after_err = [None] * len(g.edges)
    if g.ground_truth is not None:
        before_err, after_err = edge_rotation_errors(g), edge_rotation_errors(out)
    report = RepairReport(
        edges=[EdgeRepair(e.key, 0, best[k], before_err[k], after_err[k]) for k, e in enumerate(g.edges)],
        triangle_count=len(cost.tris),
        cost_before=cost_before,
        cost_after=cost_after,
        iterations=iters,
        converged=converged,
        method=method,
        restart_costs=restart_costs,
    )
    return out, report


# ---------------------------------------------------------------------------
# Transfer matrix

BIN_WIDTH = 5.0
N_BINS = 36
BIN_CENTERS = [1.0 + BIN_WIDTH * k for k in range(N_BINS)]


def error_bin(err_deg: float) -> int:
    """Bin of width 5° centered at 1° + 5k; anything from 178.5° up lands in the last bin."""
    k = math.floor((err_deg + 1.5) / BIN_WIDTH)
    return min(max(k, 0), N_BINS - 1)


@dataclass
class TransferMatrix:
    counts: np.ndarray  # (36, 36) int; rows = before, cols = after

    @property
    def log10(self) -> np.ndarray:
        """log10 of the counts with empty cells as NaN."""
        with np.errstate(divide="ignore"):
            out = np.log10(self.counts.astype(float))
        out[self.counts == 0] = np.nan
        return out

    def to_csv(self) -> str:
        lines = ["before\\after," + ",".join(f"{c:g}" for c in BIN_CENTERS)]
        for r, center in enumerate(BIN_CENTERS):
            lines.append(f"{center:g}," + ",".join(str(int(v)) for v in self.counts[r]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({"bin_centers": BIN_CENTERS, "counts": self.counts.astype(int).tolist()},
                          sort_keys=True)

    def mass_moved(self, row_above: float, col_below: float) -> float:
        """Fraction of the rows centered above ``row_above`` that ends in columns centered below ``col_below``."""
        rows = [k for k, c in enumerate(BIN_CENTERS) if c > row_above]
        cols = [k for k, c in enumerate(BIN_CENTERS) if c < col_below]
        total = self.counts[rows].sum()
        if total == 0:
            return float("nan")
        return float(self.counts[np.ix_(rows, cols)].sum() / total)


def transfer_matrix(before, after) -> TransferMatrix:
    if len(before) != len(after):
        raise LengthMismatch(f"{len(before)} errors before vs {len(after)} after")
    counts = np.zeros((N_BINS, N_BINS), dtype=np.int64)
    for b, a in zip(before, after):
        counts[error_bin(b), error_bin(a)] += 1
    return TransferMatrix(counts)
