"""Absolute rotation recovery from relative rotations R_ij ≈ R_i R_jᵀ.

Three solvers, all anchored at a reference node on exit:

- ``spectral_init``: leading eigenvectors of the block matrix of relatives.
- ``irls_solve``: robust chordal averaging by iteratively reweighted node updates.
- ``iterative_refine``: alternating node and edge passes, where each edge
  carries a rectified relative and an outlier score that sets its weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMatrix, EigenFailure, NotConnected, UnknownNode
from .graph import AbsolutePoseSet, Gauge, ViewGraph, connected_components
from .robust import RobustLoss
from .so3 import chordal_mean, geodesic_midpoint, nearest_rotation, random_rotation

SOLVERS = ("spectral", "irls", "iterative")


@dataclass(frozen=True)
class RotAvgConfig:
    robust_loss: RobustLoss = RobustLoss("huber", 0.1)
    max_irls_iters: int = 50
    irls_tol: float = 1e-8
    k_n: int = 2
    k_e: int = 2
    rounds: int = 8
    temperature: float = 0.5
    anchor: int | None = None
    init: str = "spectral"
    seed: int = 0

    def __post_init__(self):
        if min(self.max_irls_iters, self.k_n, self.k_e, self.rounds) < 1:
            raise ValueError("iteration counts must be at least 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.init not in ("spectral", "random"):
            raise ValueError("init must be 'spectral' or 'random'")


@dataclass
class SolverTrace:
    """Per-iteration diagnostics filled in by a solver when passed one."""

    costs: list[float] = field(default_factory=list)
    surrogate: list[float] = field(default_factory=list)
    weights: dict[tuple[int, int], float] = field(default_factory=dict)
    scores: dict[tuple[int, int], float] = field(default_factory=dict)
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "costs": self.costs,
            "surrogate": self.surrogate,
            "iterations": self.iterations,
            "edges": [{"i": i, "j": j, "weight": w, "score": self.scores.get((i, j))}
                      for (i, j), w in sorted(self.weights.items())],
        }


def _require_connected(g: ViewGraph):
    if len(connected_components(g)) != 1:
        raise NotConnected("rotation averaging needs a single-component graph")


def _anchor_id(g: ViewGraph, anchor: int | None) -> int:
    return min(g.node_ids) if anchor is None else anchor


def fix_gauge(poses: AbsolutePoseSet, anchor: int) -> AbsolutePoseSet:
    """Right-multiply every rotation by R_anchorᵀ so the anchor becomes the identity."""
    if anchor not in poses.rotations:
        raise UnknownNode(f"anchor {anchor} not in pose set")
    S = poses.rotations[anchor].T
    rots = {i: (np.eye(3) if i == anchor else R @ S) for i, R in poses.rotations.items()}
    return AbsolutePoseSet(rots, {i: c.copy() for i, c in poses.centers.items()}, Gauge.ANCHORED, anchor)


class _Topology:
    """Index-based view of a graph: oriented neighbor lists and stored edges."""

    def __init__(self, g: ViewGraph):
        self.ids = sorted(g.node_ids)
        self.index = {nid: k for k, nid in enumerate(self.ids)}
        self.keys = [e.key for e in g.edges]
        self.ends = np.array([(self.index[e.i], self.index[e.j]) for e in g.edges], dtype=int).reshape(-1, 2)
        self.observed = np.array([e.R for e in g.edges]).reshape(-1, 3, 3)
        self.nbrs: list[list[tuple[int, int, bool]]] = [[] for _ in self.ids]
        for k, (a, b) in enumerate(self.ends):
            self.nbrs[a].append((b, k, False))
            self.nbrs[b].append((a, k, True))

    def rel(self, rels: np.ndarray, k: int, reverse: bool) -> np.ndarray:
        return rels[k].T if reverse else rels[k]

    def residuals(self, R: np.ndarray, rels: np.ndarray | None = None) -> np.ndarray:
        rels = self.observed if rels is None else rels
        return np.array([np.linalg.norm(rels[k] - R[a] @ R[b].T) for k, (a, b) in enumerate(self.ends)])

    def node_sweep(self, R: np.ndarray, rels: np.ndarray, w: np.ndarray):
        for i in range(len(self.ids)):
            preds = [self.rel(rels, k, rev) @ R[j] for j, k, rev in self.nbrs[i]]
            if not preds:
                continue
            try:
                R[i] = chordal_mean(preds, [w[k] for _, k, _ in self.nbrs[i]])
            except DegenerateMatrix as exc:
                raise DegenerateMatrix(f"node {self.ids[i]}: {exc}") from exc

    def to_poses(self, R: np.ndarray, anchor: int) -> AbsolutePoseSet:
        raw = AbsolutePoseSet({nid: R[k].copy() for k, nid in enumerate(self.ids)})
        return fix_gauge(raw, anchor)

    def stack(self, poses: AbsolutePoseSet) -> np.ndarray:
        missing = set(self.ids) - set(poses.rotations)
        if missing:
            raise UnknownNode(f"initial poses miss nodes {sorted(missing)}")
        return np.array([poses.rotations[nid] for nid in self.ids], dtype=float)


def _top_eigenvectors(M: np.ndarray, count: int, shift: float, tol: float, max_iters: int) -> np.ndarray:
    """
    Orthonormal basis of the leading ``count``-dimensional eigenspace of M.

    Block power iteration on M + shift·I (the shift makes the spectrum
    nonnegative), re-orthonormalized by QR each step and started from the
    first canonical basis vectors. Noise splits the leading eigenvalues into
    a tight cluster, so convergence is measured on the subspace projector
    rather than on individual vectors.
    """
    n = M.shape[0]
    Ms = M + shift * np.eye(n)
    V = np.eye(n, count)
    for _ in range(max_iters):
        W, _ = np.linalg.qr(Ms @ V)
        if not np.all(np.isfinite(W)):
            raise EigenFailure("power iteration produced non-finite values")
        # sin of the largest principal angle between old and new subspaces
        gap = np.linalg.norm(W - V @ (V.T @ W), ord=2)
        V = W
        if gap < tol:
            return V
    raise EigenFailure(f"power iteration did not converge in {max_iters} iterations")


def spectral_init(g: ViewGraph, anchor: int | None = None, tol: float = 1e-10,
                  max_iters: int = 10_000) -> AbsolutePoseSet:
    """
    Rotations from the 3 leading eigenvectors of the 3n×3n block matrix with
    identity diagonal blocks and R_ij / R_ijᵀ off-diagonal blocks per edge.
    """
    _require_connected(g)
    top = _Topology(g)
    n = len(top.ids)
    M = np.zeros((3 * n, 3 * n))
    for k in range(n):
        M[3 * k:3 * k + 3, 3 * k:3 * k + 3] = np.eye(3)
    for k, (a, b) in enumerate(top.ends):
        M[3 * a:3 * a + 3, 3 * b:3 * b + 3] = top.observed[k]
        M[3 * b:3 * b + 3, 3 * a:3 * a + 3] = top.observed[k].T
    max_deg = max(len(nb) for nb in top.nbrs) if n > 1 else 0
    V = _top_eigenvectors(M, 3, max(0.0, max_deg - 1.0), tol, max_iters)
    blocks = V.reshape(n, 3, 3)
    if sum(np.linalg.det(B) for B in blocks) < 0:
        blocks[:, :, 2] *= -1.0
    R = np.array([nearest_rotation(B) for B in blocks])
    return top.to_poses(R, _anchor_id(g, anchor))


def random_init(g: ViewGraph, seed: int = 0, anchor: int | None = None) -> AbsolutePoseSet:
    rng = np.random.default_rng(seed)
    ids = sorted(g.node_ids)
    return fix_gauge(AbsolutePoseSet({i: random_rotation(rng) for i in ids}), _anchor_id(g, anchor))


def robust_rotation_cost(g: ViewGraph, poses: AbsolutePoseSet, loss: RobustLoss) -> float:
    top = _Topology(g)
    return loss.total(top.residuals(top.stack(poses)))


def irls_solve(g: ViewGraph, init: AbsolutePoseSet, cfg: RotAvgConfig = RotAvgConfig(),
               trace: SolverTrace | None = None) -> AbsolutePoseSet:
    """
    Robust chordal rotation averaging.

    Each iteration recomputes weights ψ(r)/r from the chordal residuals
    r_ij = ||R_ij - R_i R_jᵀ||_F, then sweeps the nodes in id order replacing
    R_i by the weighted chordal mean of its neighbors' predictions R_ij R_j.
    The sweep minimizes a majorizer of Σ ρ(r_ij), so the robust cost never
    increases. Stops when a sweep lowers the weighted cost by less than
    ``cfg.irls_tol``.
    """
    top = _Topology(g)
    R = top.stack(init)
    loss = cfg.robust_loss
    trace = trace if trace is not None else SolverTrace()
    r = top.residuals(R)
    trace.costs.append(loss.total(r))
    w = loss.weight(r)
    for it in range(1, cfg.max_irls_iters + 1):
        w = loss.weight(r)
        before = float(np.sum(w * r**2))
        top.node_sweep(R, top.observed, w)
        r = top.residuals(R)
        after = float(np.sum(w * r**2))
        trace.costs.append(loss.total(r))
        trace.surrogate.append(after)
        trace.iterations = it
        if before - after < cfg.irls_tol:
            break
    final_w = loss.weight(r)
    trace.weights = {key: float(final_w[k]) for k, key in enumerate(top.keys)}
    trace.scores = {key: float(r[k]) for k, key in enumerate(top.keys)}
    return top.to_poses(R, _anchor_id(g, cfg.anchor))


@dataclass
class RotAvgState:
    """Iterate of the alternating refinement, keyed by node id and stored edge key."""

    rotations: dict[int, np.ndarray]
    observed: dict[tuple[int, int], np.ndarray]
    working: dict[tuple[int, int], np.ndarray]
    scores: dict[tuple[int, int], float]
    temperature: float = 0.5
    k: int = 0

    @classmethod
    def start(cls, g: ViewGraph, init: AbsolutePoseSet, temperature: float = 0.5) -> "RotAvgState":
        obs = {e.key: e.R for e in g.edges}
        state = cls({i: init.rotations[i].copy() for i in g.node_ids}, obs,
                    {k: R.copy() for k, R in obs.items()}, {k: 0.0 for k in obs}, temperature)
        for key in obs:
            state.working[key], state.scores[key] = edge_rectify_and_score(state, key)
        return state

    @property
    def weights(self) -> dict[tuple[int, int], float]:
        return {k: math.exp(-d / self.temperature) for k, d in self.scores.items()}

    def relative(self, i: int, j: int, which: str = "working") -> np.ndarray:
        table = self.working if which == "working" else self.observed
        if (i, j) in table:
            return table[(i, j)]
        return table[(j, i)].T


def node_cost(state: RotAvgState, i: int) -> float:
    """Mean chordal disagreement (1/|N_i|) Σ_j ||R_i - R̃_ij R_j|| over the working relatives."""
    nbrs = [k[1] if k[0] == i else k[0] for k in state.working if i in k]
    if not nbrs:
        return 0.0
    Ri = state.rotations[i]
    return sum(np.linalg.norm(Ri - state.relative(i, j) @ state.rotations[j]) for j in nbrs) / len(nbrs)


def edge_rectify_and_score(state: RotAvgState, key: tuple[int, int]) -> tuple[np.ndarray, float]:
    """
    Rectified relative for edge ``key`` and its outlier score.

    Candidates are the observed relative, the relative implied by the current
    absolutes, and their geodesic midpoint, tried in that order; the first
    minimizer of ||X - R_i R_jᵀ|| + ||X - R̃_ij|| wins and that sum is the score.
    """
    i, j = key
    implied = state.rotations[i] @ state.rotations[j].T
    obs = state.observed[key]
    best, best_cost = None, math.inf
    for X in (obs, implied, geodesic_midpoint(implied, obs)):
        c = float(np.linalg.norm(X - implied) + np.linalg.norm(X - obs))
        if c < best_cost:
            best, best_cost = X, c
    return best, best_cost


def _batched_polar(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    flip = np.linalg.det(U @ Vt) < 0
    U[flip, :, 2] *= -1.0
    return U @ Vt


def _rectify_all(top: _Topology, R: np.ndarray, observed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized edge_rectify_and_score over every edge, same candidate order."""
    a, b = top.ends[:, 0], top.ends[:, 1]
    implied = R[a] @ np.swapaxes(R[b], -1, -2)
    # geodesic midpoint of two rotations less than π apart = polar factor of their sum
    mid = _batched_polar(implied + observed)
    cands = np.stack([observed, implied, mid], axis=1)
    cost = (np.linalg.norm(cands - implied[:, None], axis=(-2, -1))
            + np.linalg.norm(cands - observed[:, None], axis=(-2, -1)))
    pick = np.argmin(cost, axis=1)
    rows = np.arange(len(pick))
    return cands[rows, pick], cost[rows, pick]


def iterative_refine(g: ViewGraph, init: AbsolutePoseSet, cfg: RotAvgConfig = RotAvgConfig(),
                     trace: SolverTrace | None = None) -> AbsolutePoseSet:
    """
    Alternating node/edge refinement.

    Each round runs ``k_n`` node sweeps, R_i <- chordal mean of R_ij^k R_j
    weighted by exp(-d_ij/τ), then ``k_e`` edge sweeps refreshing every
    rectified relative R_ij^k and score d_ij. Consistent input is a fixed point.
    """
    top = _Topology(g)
    state = RotAvgState.start(g, AbsolutePoseSet({nid: R for nid, R in zip(top.ids, top.stack(init))}),
                              cfg.temperature)
    trace = trace if trace is not None else SolverTrace()
    R = top.stack(AbsolutePoseSet(state.rotations))
    rels = np.array([state.working[key] for key in top.keys]).reshape(-1, 3, 3)
    scores = np.array([state.scores[key] for key in top.keys])
    for _ in range(cfg.rounds):
        w = np.exp(-scores / cfg.temperature)
        for _ in range(cfg.k_n):
            top.node_sweep(R, rels, w)
            state.k += 1
        for _ in range(cfg.k_e):
            rels, scores = _rectify_all(top, R, top.observed)
        trace.costs.append(float(scores.sum()))
    state.rotations = {nid: R[k].copy() for k, nid in enumerate(top.ids)}
    state.working = {key: rels[k] for k, key in enumerate(top.keys)}
    state.scores = {key: float(scores[k]) for k, key in enumerate(top.keys)}
    trace.iterations = state.k
    trace.weights = dict(state.weights)
    trace.scores = dict(state.scores)
    return top.to_poses(R, _anchor_id(g, cfg.anchor))


def solve_rotations(g: ViewGraph, method: str = "iterative", cfg: RotAvgConfig = RotAvgConfig(),
                    trace: SolverTrace | None = None) -> AbsolutePoseSet:
    """Run the named solver; ``irls`` and ``iterative`` start from the configured initializer."""
    if method not in SOLVERS:
        raise ValueError(f"unknown rotation solver {method!r}")
    anchor = _anchor_id(g, cfg.anchor)
    if method == "spectral" or cfg.init == "spectral":
        init = spectral_init(g, anchor)
    else:
        _require_connected(g)
        init = random_init(g, cfg.seed, anchor)
    if method == "spectral":
        return init
    if method == "irls":
        return irls_solve(g, init, cfg, trace)
    return iterative_refine(g, init, cfg, trace)
