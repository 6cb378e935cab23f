"""RSSI-range relative localization over (expanded) relative position measurement graphs."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .world import RssiChannel

MIN_RANGE_VAR = 1e-6
GRAPH_CAP = 64


@dataclass(frozen=True)
class RangeMeasurement:
    range: float
    variance: float
    rssi: float


@dataclass
class Rpmg:
    vertices: list[int]
    adjacency: np.ndarray
    measurements: dict[tuple[int, int], RangeMeasurement]
    disconnected: bool = False
    n_components: int = 1

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.degrees) - self.adjacency

    def edges(self) -> list[tuple[int, int]]:
        """Edges as vertex *indices* (i < j)."""
        n = len(self.vertices)
        return [(i, j) for i in range(n) for j in range(i + 1, n) if self.adjacency[i, j] > 0]

    def measurement(self, i: int, j: int) -> RangeMeasurement:
        a, b = self.vertices[i], self.vertices[j]
        return self.measurements[(min(a, b), max(a, b))]


@dataclass
class Erpmg:
    rpmg: Rpmg
    candidates: list[np.ndarray]     # per vertex, (k_i, 2)
    scores: list[np.ndarray]         # per vertex, (k_i,) annulus misfit (lower is better)
    graphs: list[tuple[int, ...]]    # candidate index per vertex
    graph_costs: list[float]
    anchor: int = 0                  # vertex index held fixed (gauge)
    priors: dict[int, tuple[np.ndarray, float]] = field(default_factory=dict)
    bounds: tuple[float, float, float, float] | None = None


@dataclass
class PositionEstimate:
    robot_id: int
    position: np.ndarray
    belief: float
    graph: int = 0
    residual: float = 0.0


@dataclass
class OptimizeResult:
    estimates: list[PositionEstimate]
    positions: np.ndarray            # (G, n, 2) optimized geometry per candidate graph
    residuals: np.ndarray            # (G,)
    beliefs: np.ndarray              # (G,)
    best: int
    converged: bool
    history: list[np.ndarray] = field(default_factory=list)

    def for_robot(self, robot_id: int) -> list[PositionEstimate]:
        return [e for e in self.estimates if e.robot_id == robot_id]

    def mean_position(self, robot_id: int) -> np.ndarray:
        ests = self.for_robot(robot_id)
        w = np.array([e.belief for e in ests])
        p = np.array([e.position for e in ests])
        return (w[:, None] * p).sum(axis=0) / w.sum()


def rssi_to_range(rssi: float, channel: RssiChannel) -> tuple[float, float]:
    """Invert the log-distance model; variance by first-order propagation of shadowing."""
    n = channel.path_loss_exponent
    exponent = max(channel.p0_dbm - rssi, 0.0) / (10.0 * n)
    d = channel.d0 * 10.0 ** exponent
    sd = d * math.log(10.0) * channel.shadowing_sigma_db / (10.0 * n)
    return d, max(sd * sd, MIN_RANGE_VAR)


def build_rpmg(ranges: dict[tuple[int, int], RangeMeasurement],
               connectivity_threshold: float = -75.0,
               vertices: list[int] | None = None) -> Rpmg:
    """Undirected weighted graph from per-pair ranges; a_ij = 1/variance."""
    merged: dict[tuple[int, int], list[RangeMeasurement]] = {}
    ids = set(vertices or [])
    for (a, b), m in ranges.items():
        if a == b:
            continue
        ids.update((a, b))
        merged.setdefault((min(a, b), max(a, b)), []).append(m)
    order = sorted(ids) if vertices is None else list(vertices)
    index = {v: i for i, v in enumerate(order)}
    n = len(order)
    adj = np.zeros((n, n))
    meas = {}
    for key, ms in merged.items():
        rssi = float(np.mean([m.rssi for m in ms]))
        if rssi < connectivity_threshold:
            continue
        r = float(np.mean([m.range for m in ms]))
        var = float(np.mean([m.variance for m in ms])) / len(ms)
        meas[key] = RangeMeasurement(r, var, rssi)
        i, j = index[key[0]], index[key[1]]
        adj[i, j] = adj[j, i] = 1.0 / max(var, MIN_RANGE_VAR)
    n_comp = connected_components(adj > 0, directed=False)[0] if n else 0
    return Rpmg(order, adj, meas, disconnected=n_comp > 1, n_components=int(n_comp))


def _annulus_misfit(points: np.ndarray, i: int, rpmg: Rpmg, previous: np.ndarray) -> np.ndarray:
    cost = np.zeros(len(points))
    for j in range(len(rpmg.vertices)):
        a = rpmg.adjacency[i, j]
        if a > 0:
            z = rpmg.measurement(i, j).range
            cost += a * (np.linalg.norm(points - previous[j], axis=1) - z) ** 2
    return cost


def _k_best(scores: list[np.ndarray], cap: int):
    """Assignments in non-decreasing order of summed score (lazy best-first enumeration)."""
    order = [np.argsort(s, kind="stable") for s in scores]
    sorted_scores = [s[o] for s, o in zip(scores, order)]
    start = (0,) * len(scores)
    heap = [(float(sum(s[0] for s in sorted_scores)), start)]
    seen = {start}
    out = []
    while heap and len(out) < cap:
        cost, idx = heapq.heappop(heap)
        out.append((tuple(int(order[v][i]) for v, i in enumerate(idx)), cost))
        for v in range(len(idx)):
            if idx[v] + 1 < len(sorted_scores[v]):
                nxt = idx[:v] + (idx[v] + 1,) + idx[v + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    c = cost - sorted_scores[v][idx[v]] + sorted_scores[v][idx[v] + 1]
                    heapq.heappush(heap, (float(c), nxt))
    return out


def expand_to_erpmg(rpmg: Rpmg, previous: dict[int, np.ndarray], motion: dict,
                    k: int = 3, *, anchor: int | None = None, quantum: float = 0.05,
                    margin: float = 0.1, cap: int = GRAPH_CAP,
                    priors: dict[int, tuple[np.ndarray, float]] | None = None,
                    bounds: tuple[float, float, float, float] | None = None) -> Erpmg:
    """Candidate positions per robot on its motion-reachable disc, scored by range agreement.

    ``previous`` maps robot id to its last known position; ``motion`` carries
    ``v_max`` and ``dt``. ``anchor`` is the ego robot id (defaults to the first vertex).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(rpmg.vertices)
    prev = np.array([np.asarray(previous[v], dtype=float) for v in rpmg.vertices])
    radius = motion["v_max"] * motion["dt"] + margin
    steps = int(math.floor(radius / quantum))
    offs = quantum * np.arange(-steps, steps + 1)
    ox, oy = np.meshgrid(offs, offs)
    disc = np.column_stack([ox.ravel(), oy.ravel()])
    disc = disc[np.hypot(disc[:, 0], disc[:, 1]) <= radius + 1e-12]
    # centre first so ties keep the motion prior
    disc = disc[np.argsort(np.hypot(disc[:, 0], disc[:, 1]), kind="stable")]

    anchor_idx = 0 if anchor is None else rpmg.vertices.index(anchor)
    candidates, scores = [], []
    for i in range(n):
        if i == anchor_idx:
            # the ego vertex stays at its odometry prediction: this removes the gauge freedom
            candidates.append(prev[i][None, :].copy())
            scores.append(np.zeros(1))
            continue
        pts = prev[i] + disc
        if bounds is not None:
            x0, y0, x1, y1 = bounds
            pts = pts[(pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)]
        if len(pts) == 0:
            pts = prev[i][None, :]
        sc = _annulus_misfit(pts, i, rpmg, prev)
        if priors and rpmg.vertices[i] in priors:
            mu, var = priors[rpmg.vertices[i]]
            sc = sc + np.sum((pts - mu) ** 2, axis=1) / var
        keep = np.argsort(sc, kind="stable")[:k]
        candidates.append(pts[keep])
        scores.append(sc[keep])
    ranked = _k_best(scores, cap)
    return Erpmg(rpmg, candidates, scores, [g for g, _ in ranked], [c for _, c in ranked],
                 anchor=anchor_idx, priors=dict(priors or {}), bounds=bounds)


def _residual_terms(x, edges, z, sw, prior_idx, prior_mu, prior_sw):
    """Weighted residual vector for every graph: x is (G, n, 2)."""
    parts = []
    if len(edges):
        d = x[:, edges[:, 0]] - x[:, edges[:, 1]]
        dist = np.linalg.norm(d, axis=2)
        parts.append(sw * (dist - z))
    if len(prior_idx):
        parts.append((prior_sw[:, None] * (x[:, prior_idx] - prior_mu)).reshape(len(x), -1))
    if not parts:
        return np.zeros((len(x), 0))
    return np.concatenate(parts, axis=1)


def _jacobian(x, edges, sw, prior_idx, prior_sw, free):
    g, n, _ = x.shape
    rows = []
    if len(edges):
        d = x[:, edges[:, 0]] - x[:, edges[:, 1]]
        dist = np.maximum(np.linalg.norm(d, axis=2, keepdims=True), 1e-9)
        u = d / dist * sw[None, :, None]
        je = np.zeros((g, len(edges), n, 2))
        ar = np.arange(len(edges))
        je[:, ar, edges[:, 0]] = u
        je[:, ar, edges[:, 1]] = -u
        rows.append(je.reshape(g, len(edges), 2 * n))
    if len(prior_idx):
        jp = np.zeros((len(prior_idx), 2, n, 2))
        for r, v in enumerate(prior_idx):
            jp[r, 0, v, 0] = prior_sw[r]
            jp[r, 1, v, 1] = prior_sw[r]
        rows.append(np.broadcast_to(jp.reshape(1, 2 * len(prior_idx), 2 * n),
                                    (g, 2 * len(prior_idx), 2 * n)))
    j = np.concatenate(rows, axis=1)
    return j[:, :, free]


def optimize_graph(erpmg: Erpmg, max_iter: int = 50, tol: float = 1e-8,
                   ftol: float = 0.0) -> OptimizeResult:
    """Damped Gauss-Newton on range residuals for every candidate graph, ego vertex fixed.

    A graph stops when its gradient or step falls below ``tol``, or when an
    accepted step lowers its cost by less than ``ftol * (1 + cost)``.
    """
    rpmg = erpmg.rpmg
    n = len(rpmg.vertices)
    graphs = erpmg.graphs or [(0,) * n]
    x = np.array([[erpmg.candidates[v][g[v]] for v in range(n)] for g in graphs], dtype=float)
    edges = np.array(rpmg.edges(), dtype=int).reshape(-1, 2)
    z = np.array([rpmg.measurement(i, j).range for i, j in edges])
    sw = np.sqrt(np.array([rpmg.adjacency[i, j] for i, j in edges]))
    prior_idx = np.array([rpmg.vertices.index(r) for r in erpmg.priors
                          if r in rpmg.vertices and rpmg.vertices.index(r) != erpmg.anchor],
                         dtype=int)
    prior_mu = np.array([np.asarray(erpmg.priors[rpmg.vertices[i]][0], dtype=float)
                         for i in prior_idx]).reshape(-1, 2)
    prior_sw = np.array([1.0 / math.sqrt(erpmg.priors[rpmg.vertices[i]][1])
                         for i in prior_idx])

    free_vertices = [v for v in range(n) if v != erpmg.anchor]
    free = np.array([2 * v + c for v in free_vertices for c in (0, 1)], dtype=int)

    def cost(xx):
        r = _residual_terms(xx, edges, z, sw, prior_idx, prior_mu, prior_sw)
        return np.sum(r * r, axis=1)

    def project(xx):
        if erpmg.bounds is not None:
            x0, y0, x1, y1 = erpmg.bounds
            xx[..., 0] = np.clip(xx[..., 0], x0, x1)
            xx[..., 1] = np.clip(xx[..., 1], y0, y1)
        return xx

    f = cost(x)
    history = [f.copy()]
    converged = np.zeros(len(x), dtype=bool)
    if len(free) == 0 or (len(edges) == 0 and len(prior_idx) == 0):
        converged[:] = True
    lam = np.full(len(x), 1e-3)
    eye = np.eye(len(free))
    for _ in range(max_iter):
        if converged.all():
            break
        r = _residual_terms(x, edges, z, sw, prior_idx, prior_mu, prior_sw)
        jac = _jacobian(x, edges, sw, prior_idx, prior_sw, free)
        grad = np.einsum("gej,ge->gj", jac, r)
        gnorm = np.linalg.norm(grad, axis=1)
        converged |= gnorm < tol
        if converged.all():
            break
        h = np.einsum("gei,gej->gij", jac, jac)
        diag = np.einsum("gii->gi", h)
        damped = h + lam[:, None, None] * (np.maximum(diag, 1e-6)[:, :, None] * eye)
        delta = -np.linalg.solve(damped, grad[:, :, None])[:, :, 0]
        x_new = x.copy()
        flat = x_new.reshape(len(x), -1)
        flat[:, free] += np.where(converged[:, None], 0.0, delta)
        x_new = project(flat.reshape(x.shape))
        f_new = cost(x_new)
        accept = (f_new <= f) & ~converged
        x[accept] = x_new[accept]
        small_step = np.linalg.norm(delta, axis=1) < tol
        converged |= accept & small_step
        if ftol > 0:
            converged |= accept & (f - f_new <= ftol * (1.0 + f))
        f = np.where(accept, f_new, f)
        lam = np.where(accept, np.maximum(lam * 0.3, 1e-9), lam * 10.0)
        converged |= lam > 1e12
        history.append(f.copy())

    logits = -0.5 * (f - f.min())
    beliefs = np.exp(logits)
    beliefs /= beliefs.sum()
    best = int(np.argmin(f))
    estimates = []
    for g in range(len(x)):
        for v, rid in enumerate(rpmg.vertices):
            estimates.append(PositionEstimate(rid, x[g, v].copy(), float(beliefs[g]), g, float(f[g])))
    return OptimizeResult(estimates, x, f, beliefs, best, bool(converged.all()), history)


def erpmg_graph_bound(n_robots: int, k: int) -> int:
    """Number of candidate graphs for k candidates per robot (k**n)."""
    return k ** n_robots
