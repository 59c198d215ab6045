"""Translation averaging with a bilinear objective (BATA).

Minimizes Σ μ(||(C_j - C_i) d_ij - u_ij||) over centers C and per-edge scales
d_ij >= 0, where u_ij is the edge's unit baseline direction lifted to world
coordinates with the estimated rotations. Two linear constraints fix the
gauge: Σ C_i = 0 removes the offset and Σ <C_j - C_i, u_ij> = 1 fixes scale.

IRLS alternates weight updates from a combined translation/rotation residual
with inner blocks of exact scale updates and equality-constrained weighted
least squares solves for the centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoRotations, NotConnected, SingularKKT
from .graph import AbsolutePoseSet, Gauge, ViewGraph, connected_components
from .robust import RobustLoss

# relative size below which an edge no longer constrains the centers
_EFFECTIVE_WEIGHT = 1e-12


@dataclass(frozen=True)
class TransAvgConfig:
    m_estimator: RobustLoss = RobustLoss("cauchy", 0.1)
    outer_irls_iters: int = 20
    inner_alternations: int = 10
    tol: float = 1e-10  # relative objective decrease
    d_floor: float = 1e-9
    rotation_residual_on: bool = True
    init: str = "unit_scale"
    joint_steps: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.init not in ("unit_scale", "random"):
            raise ValueError("init must be 'unit_scale' or 'random'")
        if self.m_estimator.kind == "geman_mcclure":
            raise ValueError("translation M-estimator must be l2, huber or cauchy")
        if min(self.outer_irls_iters, self.inner_alternations) < 1:
            raise ValueError("iteration counts must be at least 1")
        if not self.d_floor > 0:
            raise ValueError("d_floor must be positive")


@dataclass
class TransAvgState:
    centers: np.ndarray  # (n, 3)
    d: np.ndarray  # (m,)
    weights: np.ndarray  # (m,)
    u: np.ndarray  # (m, 3) world-frame directions


@dataclass
class BataTrace:
    robust_objective: list[float] = field(default_factory=list)
    weighted_objective: list[list[float]] = field(default_factory=list)
    constraint_offset: float = float("nan")
    constraint_scale: float = float("nan")
    weights: dict[tuple[int, int], float] = field(default_factory=dict)
    scales: dict[tuple[int, int], float] = field(default_factory=dict)
    floored_edges: int = 0

    def to_dict(self) -> dict:
        return {
            "robust_objective": self.robust_objective,
            "weighted_objective": self.weighted_objective,
            "constraint_offset": self.constraint_offset,
            "constraint_scale": self.constraint_scale,
            "floored_edges": self.floored_edges,
            "edges": [{"i": i, "j": j, "weight": w, "d": self.scales[(i, j)]}
                      for (i, j), w in sorted(self.weights.items())],
        }


def scale_update(ci: np.ndarray, cj: np.ndarray, u: np.ndarray, d_floor: float = 1e-9) -> tuple[float, bool]:
    """
    Exact minimizer over d >= d_floor of ||(cj - ci) d - u||².

    Returns:
        (d, coincident) where ``coincident`` flags a zero baseline, for which
        d_floor is returned.
    """
    diff = cj - ci
    nn = float(np.dot(diff, diff))
    if nn == 0.0:
        return d_floor, True
    return max(d_floor, float(np.dot(diff, u)) / nn), False


def combined_residual(diff: np.ndarray, d: float, u: np.ndarray, R_obs: np.ndarray | None = None,
                      R_i: np.ndarray | None = None, R_j: np.ndarray | None = None) -> float:
    """sqrt(||diff·d - u||² + ||R_obs - R_i R_jᵀ||_F²); the rotation term is skipped when R_obs is None."""
    t = diff * d - u
    s = float(np.dot(t, t))
    if R_obs is not None:
        s += float(np.sum((R_obs - R_i @ R_j.T) ** 2))
    return float(np.sqrt(s))


class _Problem:
    def __init__(self, g: ViewGraph, rotations: AbsolutePoseSet, dirs):
        self.ids = sorted(g.node_ids)
        idx = {nid: k for k, nid in enumerate(self.ids)}
        self.keys = [e.key for e in g.edges]
        self.a = np.array([idx[e.i] for e in g.edges])
        self.b = np.array([idx[e.j] for e in g.edges])
        self.n, self.m = len(self.ids), len(g.edges)
        R = {nid: rotations.rotations[nid] for nid in self.ids}
        t = np.array(dirs, dtype=float).reshape(self.m, 3)
        self.u = np.array([R[e.i].T @ t[k] for k, e in enumerate(g.edges)])
        rot_sq = [float(np.sum((e.R - R[e.i] @ R[e.j].T) ** 2)) for e in g.edges]
        self.rot_sq = np.array(rot_sq)
        C = np.zeros((4, 3 * self.n))
        for k in range(self.n):
            C[0:3, 3 * k:3 * k + 3] = np.eye(3)
        for k in range(self.m):
            C[3, 3 * self.b[k]:3 * self.b[k] + 3] += self.u[k]
            C[3, 3 * self.a[k]:3 * self.a[k] + 3] -= self.u[k]
        self.C = C
        self.c = np.array([0.0, 0.0, 0.0, 1.0])

    def diffs(self, T: np.ndarray) -> np.ndarray:
        return T[self.b] - T[self.a]

    def trans_residuals(self, T: np.ndarray, d: np.ndarray) -> np.ndarray:
        return self.diffs(T) * d[:, None] - self.u

    def weighted(self, T, d, w) -> float:
        r = self.trans_residuals(T, d)
        return float(np.sum(w * np.sum(r * r, axis=1)))

    def eps(self, T, d, use_rot: bool) -> np.ndarray:
        r = self.trans_residuals(T, d)
        s = np.sum(r * r, axis=1)
        if use_rot:
            s = s + self.rot_sq
        return np.sqrt(s)

    def scales(self, T: np.ndarray, d_floor: float) -> tuple[np.ndarray, int]:
        diff = self.diffs(T)
        nn = np.sum(diff * diff, axis=1)
        coincident = nn == 0.0
        dots = np.sum(diff * self.u, axis=1)
        d = np.where(coincident, d_floor, dots / np.where(coincident, 1.0, nn))
        return np.maximum(d, d_floor), int(coincident.sum())

    def project(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection of flattened centers onto {Cx = c}."""
        C = self.C
        lam = np.linalg.solve(C @ C.T, C @ x - self.c)
        return x - C.T @ lam

    def solve_centers(self, d: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Equality-constrained weighted least squares through the dense KKT system."""
        n3 = 3 * self.n
        s = w * d**2
        if not _spans(self.n, self.a, self.b, s > _EFFECTIVE_WEIGHT * max(float(s.max()), 1e-300)):
            raise SingularKKT("edges with non-negligible weight do not connect all cameras")
        L = np.zeros((self.n, self.n))
        np.add.at(L, (self.a, self.a), s)
        np.add.at(L, (self.b, self.b), s)
        np.add.at(L, (self.a, self.b), -s)
        np.add.at(L, (self.b, self.a), -s)
        g = (w * d)[:, None] * self.u
        rhs = np.zeros((self.n, 3))
        np.add.at(rhs, self.b, g)
        np.add.at(rhs, self.a, -g)
        K = np.zeros((n3 + 4, n3 + 4))
        K[:n3, :n3] = np.kron(L, np.eye(3))
        K[:n3, n3:] = self.C.T
        K[n3:, :n3] = self.C
        try:
            sol = np.linalg.solve(K, np.concatenate([rhs.reshape(-1), self.c]))
        except np.linalg.LinAlgError as exc:
            raise SingularKKT(str(exc)) from exc
        if not np.all(np.isfinite(sol)):
            raise SingularKKT("non-finite KKT solution")
        return sol[:n3].reshape(self.n, 3)


    def joint_step(self, T: np.ndarray, d: np.ndarray, w: np.ndarray, d_floor: float):
        """
        Gauss-Newton step on (centers, scales) jointly, with backtracking.

        The T/d alternation converges linearly because baseline lengths and
        scales trade off against each other; a joint step removes that
        coupling. Returns the input unchanged unless the weighted objective drops.
        """
        n3, m = 3 * self.n, self.m
        diff = self.diffs(T)
        r = (diff * d[:, None] - self.u).reshape(-1)
        J = np.zeros((3 * m, n3 + m))
        rows = np.arange(3 * m).reshape(m, 3)
        for k in range(3):
            J[rows[:, k], 3 * self.a + k] = -d
            J[rows[:, k], 3 * self.b + k] = d
        J[rows, n3 + np.arange(m)[:, None]] = diff
        W = np.repeat(w, 3)
        A = J.T @ (W[:, None] * J)
        A[np.diag_indices_from(A)] += 1e-12 * max(float(np.trace(A)), 1e-300) / A.shape[0]
        g = J.T @ (W * r)
        K = np.zeros((n3 + m + 4, n3 + m + 4))
        K[:n3 + m, :n3 + m] = A
        K[:n3, n3 + m:] = self.C.T
        K[n3 + m:, :n3] = self.C
        try:
            step = np.linalg.solve(K, np.concatenate([-g, np.zeros(4)]))[:n3 + m]
        except np.linalg.LinAlgError:
            return T, d
        if not np.all(np.isfinite(step)):
            return T, d
        dT, dd = step[:n3].reshape(self.n, 3), step[n3:]
        base = self.weighted(T, d, w)
        alpha = 1.0
        for _ in range(12):
            T_new, d_new = T + alpha * dT, np.maximum(d + alpha * dd, d_floor)
            if self.weighted(T_new, d_new, w) < base:
                return T_new, d_new
            alpha *= 0.5
        return T, d

def _spans(n: int, a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> bool:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    groups = n
    for i, j in zip(a[mask], b[mask]):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[ri] = rj
            groups -= 1
    return groups == 1


def _converged(prev: float, cur: float, tol: float) -> bool:
    return prev - cur <= tol * max(prev, 1e-300)


def is_parallel_rigid(g: ViewGraph, rotations: AbsolutePoseSet, dirs=None) -> bool:
    """True when the directions fix all centers up to one offset and one scale."""
    if dirs is None:
        dirs = [e.t for e in g.edges]
    prob = _Problem(g, rotations, dirs)
    A = np.zeros((3 * prob.m, 3 * prob.n))
    for k in range(prob.m):
        P = np.eye(3) - np.outer(prob.u[k], prob.u[k])
        A[3 * k:3 * k + 3, 3 * prob.b[k]:3 * prob.b[k] + 3] = P
        A[3 * k:3 * k + 3, 3 * prob.a[k]:3 * prob.a[k] + 3] = -P
    s = np.linalg.svd(A, compute_uv=False)
    null = 3 * prob.n - int(np.sum(s > 1e-9 * s[0]))
    return null == 4


def bata_solve(g: ViewGraph, rotations: AbsolutePoseSet | None, refined_dirs=None,
               cfg: TransAvgConfig = TransAvgConfig(), trace: BataTrace | None = None) -> AbsolutePoseSet:
    """
    Camera centers from relative directions and absolute rotations.

    Args:
        g: single-component graph with at least 3 nodes.
        rotations: absolute rotations covering every node.
        refined_dirs: per-edge unit directions in camera-i coordinates, one per
            edge of ``g`` in order; defaults to the edges' own directions.
        cfg: solver settings.
        trace: optional sink for objective histories and final weights.

    Returns:
        Poses carrying the input rotations and the recovered centers, in the
        raw frame fixed by the two constraints.
    """
    if rotations is None or not rotations.rotations:
        raise NoRotations("translation averaging needs absolute rotations")
    if set(rotations.rotations) != set(g.node_ids):
        raise NoRotations("rotations must cover every node")
    if len(connected_components(g)) != 1:
        raise NotConnected("translation averaging needs a single-component graph")
    if g.n < 3:
        raise ValueError("translation averaging needs at least 3 nodes")
    if refined_dirs is None:
        refined_dirs = [e.t for e in g.edges]
    trace = trace if trace is not None else BataTrace()

    prob = _Problem(g, rotations, refined_dirs)
    loss = cfg.m_estimator
    if cfg.init == "unit_scale":
        T = prob.solve_centers(np.ones(prob.m), np.ones(prob.m))
    else:
        rng = np.random.default_rng(cfg.seed)
        x = rng.normal(size=3 * prob.n)
        T = prob.project(x).reshape(prob.n, 3)
    d, _ = prob.scales(T, cfg.d_floor)

    prev_robust = None
    for _ in range(cfg.outer_irls_iters):
        eps = prob.eps(T, d, cfg.rotation_residual_on)
        robust = loss.total(eps)
        trace.robust_objective.append(robust)
        if prev_robust is not None and _converged(prev_robust, robust, cfg.tol):
            break
        prev_robust = robust
        w = loss.weight(eps)
        inner = [prob.weighted(T, d, w)]
        for _ in range(cfg.inner_alternations):
            T = prob.solve_centers(d, w)
            d, _ = prob.scales(T, cfg.d_floor)
            if cfg.joint_steps:
                T, d = prob.joint_step(T, d, w, cfg.d_floor)
                d, _ = prob.scales(T, cfg.d_floor)
            inner.append(prob.weighted(T, d, w))
            if _converged(inner[-2], inner[-1], cfg.tol):
                break
        trace.weighted_objective.append(inner)
    else:
        trace.robust_objective.append(loss.total(prob.eps(T, d, cfg.rotation_residual_on)))

    eps = prob.eps(T, d, cfg.rotation_residual_on)
    w = loss.weight(eps)
    x = T.reshape(-1)
    trace.constraint_offset = float(np.max(np.abs(prob.C[:3] @ x)))
    trace.constraint_scale = float(prob.C[3] @ x - 1.0)
    trace.weights = {key: float(w[k]) for k, key in enumerate(prob.keys)}
    trace.scales = {key: float(d[k]) for k, key in enumerate(prob.keys)}
    trace.floored_edges = int(np.sum(d <= cfg.d_floor))
    return AbsolutePoseSet({nid: rotations.rotations[nid].copy() for nid in prob.ids},
                           {nid: T[k].copy() for k, nid in enumerate(prob.ids)}, Gauge.RAW)
