"""Boundary prediction from observations and next-region selection.

Pipeline: convex hull of observed cells -> Hough lines on observed walls near
the hull contour -> predicted corners at line intersections -> re-hull ->
facet half-planes (the linearized hull) -> goal selection among unexplored
cells inside it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .grid import GridGeometry

# prediction-layer states, doubling as PGM gray levels
OBSERVED_FREE = 255
PREDICTED_FREE = 200
UNKNOWN = 128
PREDICTED_WALL = 64
OBSERVED_WALL = 0


class NoFrontier(Exception):
    """No unexplored, reachable cell is left inside the predicted boundary."""


def cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2))))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    return np.array(hull, dtype=float)


def polygon_area(vertices: np.ndarray) -> float:
    if len(vertices) < 3:
        return 0.0
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass
class Line:
    rho: float
    theta: float          # normal angle in [0, pi)
    p0: np.ndarray
    p1: np.ndarray
    votes: int

    @property
    def direction(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    @property
    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])


def _fit_line(pts: np.ndarray) -> tuple[float, float]:
    """Total-least-squares normal form (rho, theta) with theta in [0, pi)."""
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c)
    nrm = vt[-1]
    theta = math.atan2(nrm[1], nrm[0])
    if theta < 0:
        theta += math.pi
    if theta >= math.pi:
        theta -= math.pi
    nrm = np.array([math.cos(theta), math.sin(theta)])
    return float(c @ nrm), theta


def hough_lines(points, resolution: float, rng: np.random.Generator | None = None,
                vote_threshold: int = 8, theta_step_deg: float = 1.0,
                max_gap: float | None = None) -> list[Line]:
    """Progressive probabilistic Hough transform on a point set.

    Points are visited in a seeded random order and vote into a (rho, theta)
    accumulator with rho step ``resolution``. When a bin reaches
    ``vote_threshold`` the supporting points near that line are collected,
    split at gaps, refit and removed from the pool.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return []
    rng = rng or np.random.default_rng(0)
    max_gap = 3 * resolution if max_gap is None else max_gap
    thetas = np.deg2rad(np.arange(0.0, 180.0, theta_step_deg))
    cos_t, sin_t = np.cos(thetas), np.sin(thetas)
    rho_all = pts[:, :1] * cos_t + pts[:, 1:] * sin_t         # (N, T)
    rho_min = rho_all.min() - resolution
    rho_bin = np.round((rho_all - rho_min) / resolution).astype(int)
    acc = np.zeros((rho_bin.max() + 2, len(thetas)), dtype=int)
    t_idx = np.arange(len(thetas))
    alive = np.ones(len(pts), dtype=bool)
    voted = np.zeros(len(pts), dtype=bool)
    lines: list[Line] = []
    for i in rng.permutation(len(pts)):
        if not alive[i]:
            continue
        acc[rho_bin[i], t_idx] += 1
        voted[i] = True
        votes = acc[rho_bin[i], t_idx]
        best = int(np.argmax(votes))
        if votes[best] < vote_threshold:
            continue
        theta = thetas[best]
        rho = rho_min + rho_bin[i, best] * resolution
        nrm = np.array([cos_t[best], sin_t[best]])
        near = alive & (np.abs(pts @ nrm - rho) <= resolution)
        cand = np.nonzero(near)[0]
        direction = np.array([-nrm[1], nrm[0]])
        s = pts[cand] @ direction
        order = np.argsort(s)
        s_sorted = s[order]
        breaks = np.nonzero(np.diff(s_sorted) > max_gap)[0]
        starts = np.concatenate([[0], breaks + 1])
        ends = np.concatenate([breaks + 1, [len(s_sorted)]])
        own = int(np.nonzero(cand[order] == i)[0][0])
        seg = next((a, b) for a, b in zip(starts, ends) if a <= own < b)
        members = cand[order[seg[0]:seg[1]]]
        # release the votes of every consumed point
        for m in members[voted[members]]:
            acc[rho_bin[m], t_idx] -= 1
        alive[members] = False
        if len(members) < vote_threshold:
            continue
        r_fit, th_fit = _fit_line(pts[members])
        nrm = np.array([math.cos(th_fit), math.sin(th_fit)])
        d = np.array([-nrm[1], nrm[0]])
        proj = pts[members] @ d
        base = r_fit * nrm
        lines.append(Line(r_fit, th_fit, base + proj.min() * d, base + proj.max() * d,
                          int(len(members))))
    return lines


def intersect(l1: Line, l2: Line, min_angle_deg: float = 10.0) -> np.ndarray | None:
    a = np.array([l1.normal, l2.normal])
    det = np.linalg.det(a)
    if abs(det) < math.sin(math.radians(min_angle_deg)):
        return None
    return np.linalg.solve(a, np.array([l1.rho, l2.rho]))


def line_intersections(lines: list[Line], max_corner_distance: float,
                       observed_points, geometry: GridGeometry,
                       min_angle_deg: float = 10.0) -> list[tuple[int, int]]:
    """Pairwise wall-line intersections kept when close to an observation and on-grid."""
    obs = np.asarray(observed_points, dtype=float).reshape(-1, 2)
    if len(lines) < 2 or len(obs) == 0:
        return []
    tree = cKDTree(obs)
    out: list[tuple[int, int]] = []
    for a in range(len(lines)):
        for b in range(a + 1, len(lines)):
            p = intersect(lines[a], lines[b], min_angle_deg)
            if p is None:
                continue
            if not (0 <= p[0] < geometry.width_m and 0 <= p[1] < geometry.height_m):
                continue
            d, _ = tree.query(p)
            if d > max_corner_distance:
                continue
            row, col = geometry.to_cell(p[0], p[1])
            cell = (int(row), int(col))
            if cell not in out:
                out.append(cell)
    return out


@dataclass
class Linearization:
    normals: np.ndarray     # (F, 2) outward unit normals a_j
    offsets: np.ndarray     # (F,) b_j; inside means a_j . x <= b_j
    vertices: np.ndarray
    linear: bool            # hull has < 3 vertices: passthrough

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.linear:
            return np.ones(len(pts), dtype=bool)
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=1)

    def depth(self, points) -> np.ndarray:
        """Signed distance inside the polygon (positive inside)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if self.linear:
            return np.zeros(len(pts))
        return np.min(self.offsets - pts @ self.normals.T, axis=1)

    def to_geojson(self) -> str:
        ring = [[float(x), float(y)] for x, y in self.vertices]
        if ring:
            ring.append(ring[0])
        import json
        return json.dumps({"type": "Polygon", "coordinates": [ring]})


def linearize_hull(model) -> Linearization:
    """Facet half-planes a_j . x <= b_j of a CCW hull (or passthrough below 3 vertices)."""
    verts = model.hull_vertices if hasattr(model, "hull_vertices") else np.asarray(model, float)
    verts = np.asarray(verts, dtype=float).reshape(-1, 2)
    if len(verts) < 3:
        return Linearization(np.zeros((0, 2)), np.zeros(0), verts, True)
    edge = np.roll(verts, -1, axis=0) - verts
    normals = np.column_stack([edge[:, 1], -edge[:, 0]])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    offsets = np.einsum("ij,ij->i", normals, verts)
    return Linearization(normals, offsets, verts, False)


@dataclass
class CellSets:
    """Boolean grid masks of observed free/occupied, predicted corners and inflated cells."""

    free: np.ndarray
    occupied: np.ndarray
    corners: np.ndarray = None
    inflated: np.ndarray = None

    def __post_init__(self):
        shape = self.free.shape
        if self.corners is None:
            self.corners = np.zeros(shape, dtype=bool)
        if self.inflated is None:
            self.inflated = np.zeros(shape, dtype=bool)


@dataclass
class HullModel:
    hull_vertices: np.ndarray
    wall_lines: list[Line]
    corners: list[tuple[int, int]]
    linearized: Linearization
    cells: CellSets
    prediction: np.ndarray
    reachable: np.ndarray
    inferred_obstacles: np.ndarray
    observed_hull: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    geometry: GridGeometry | None = None


def inflate(mask: np.ndarray, depth: int) -> np.ndarray:
    if depth <= 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool), iterations=depth)


def _extreme_points(mask: np.ndarray, geometry: GridGeometry) -> np.ndarray:
    """Centers of the leftmost/rightmost set cell in every row: same hull as the full set."""
    rows = np.nonzero(mask.any(axis=1))[0]
    if len(rows) == 0:
        return np.zeros((0, 2))
    sub = mask[rows]
    left = sub.argmax(axis=1)
    right = mask.shape[1] - 1 - sub[:, ::-1].argmax(axis=1)
    rr = np.concatenate([rows, rows])
    cc = np.concatenate([left, right])
    x, y = geometry.cell_center(rr, cc)
    return np.column_stack([x, y])


def predict_boundary(cells: CellSets, geometry: GridGeometry, *, ego=None,
                     inflation_depth: int = 2, max_corner_distance: float = 3.0,
                     vote_threshold: int = 8, contour_band: float | None = None,
                     rng: np.random.Generator | None = None) -> HullModel:
    """Optimistic boundary estimate; never alters directly observed cells."""
    if not cells.free.any():
        raise ValueError("need at least one observed free cell")
    res = geometry.resolution
    observed = cells.free | cells.occupied
    base_pts = _extreme_points(observed, geometry)
    hull0 = convex_hull(base_pts)
    lin0 = linearize_hull(hull0)

    band = 3 * res if contour_band is None else contour_band
    occ_pts = geometry.centers(cells.occupied)
    lines: list[Line] = []
    corners: list[tuple[int, int]] = []
    if len(occ_pts) >= 2 and not lin0.linear:
        on_contour = lin0.depth(occ_pts) <= band
        lines = hough_lines(occ_pts[on_contour], res, rng, vote_threshold)
        if len(lines) >= 2:
            obs_pts = geometry.centers(observed)
            for r, c in line_intersections(lines, max_corner_distance, obs_pts, geometry):
                if not observed[r, c]:
                    corners.append((r, c))
    corner_mask = np.zeros(geometry.shape, dtype=bool)
    for r, c in corners:
        corner_mask[r, c] = True
    if corners:
        cx, cy = geometry.cell_center(np.array([r for r, _ in corners]),
                                      np.array([c for _, c in corners]))
        hull = convex_hull(np.vstack([base_pts, np.column_stack([cx, cy])]))
    else:
        hull = hull0
    lin = linearize_hull(hull)

    centers = geometry.centers()
    if lin.linear:
        inside = np.zeros(geometry.size, dtype=bool)
        contour = np.zeros(geometry.size, dtype=bool)
    else:
        depth = lin.depth(centers)
        inside = depth >= -res / 2
        contour = inside & (depth < res / 2)
    inside = inside.reshape(geometry.shape)
    contour = contour.reshape(geometry.shape)

    prediction = np.full(geometry.shape, UNKNOWN, dtype=np.uint8)
    prediction[inside & ~observed] = PREDICTED_FREE
    prediction[contour & ~observed] = PREDICTED_WALL
    prediction[corner_mask] = PREDICTED_WALL
    prediction[cells.free] = OBSERVED_FREE
    prediction[cells.occupied] = OBSERVED_WALL

    inflated = inflate(cells.occupied | corner_mask, inflation_depth)
    blocked = cells.occupied | corner_mask
    passable = ~blocked & (~inflated | (inside | observed))
    if ego is not None:
        er, ec = geometry.to_cell(ego[0], ego[1])
        er, ec = int(np.clip(er, 0, geometry.rows - 1)), int(np.clip(ec, 0, geometry.cols - 1))
        near_ego = np.zeros(geometry.shape, dtype=bool)
        near_ego[max(er - inflation_depth, 0):er + inflation_depth + 1,
                 max(ec - inflation_depth, 0):ec + inflation_depth + 1] = True
        walk = ~blocked & (~inflated | near_ego)
        labels, _ = ndimage.label(walk, structure=np.ones((3, 3), bool))
        lab = labels[er, ec]
        reachable = labels == lab if lab > 0 else np.zeros(geometry.shape, dtype=bool)
    else:
        reachable = passable
    inferred = inside & ~observed & ~reachable & ~inflated
    out_cells = CellSets(cells.free.copy(), cells.occupied.copy(), corner_mask, inflated)
    return HullModel(hull, lines, corners, lin, out_cells, prediction, reachable, inferred,
                     observed_hull=hull0, geometry=geometry)


def grid_distances(passable: np.ndarray, start: tuple[int, int], resolution: float = 1.0,
                   return_predecessors: bool = False):
    """8-connected shortest-path lengths (meters) from ``start`` over passable cells."""
    rows, cols = passable.shape
    idx = np.arange(rows * cols).reshape(rows, cols)
    src, dst, wts = [], [], []
    for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
        src_sl = (slice(0, rows - dr), slice(max(0, -dc), cols - max(0, dc)))
        dst_sl = (slice(dr, rows), slice(max(0, dc), cols - max(0, -dc)))
        a, b = passable[src_sl], passable[dst_sl]
        ia, ib = idx[src_sl], idx[dst_sl]
        ok = a & b
        src.append(ia[ok])
        dst.append(ib[ok])
        wts.append(np.full(int(ok.sum()), math.hypot(dr, dc) * resolution))
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    wts = np.concatenate(wts)
    n = rows * cols
    graph = coo_matrix((wts, (src, dst)), shape=(n, n)).tocsr()
    start_idx = int(start[0] * cols + start[1])
    res = dijkstra(graph, directed=False, indices=start_idx,
                   return_predecessors=return_predecessors)
    if return_predecessors:
        dist, pred = res
        return dist.reshape(rows, cols), pred
    return res.reshape(rows, cols)


def select_next_region(model: HullModel, belief, poses: dict, ego, *,
                       peer_goals: dict | None = None, lam: float = 0.5,
                       claim_radius: float = 1.0, distance_map: np.ndarray | None = None,
                       blacklist=None, hull_tolerance: float | None = None) -> tuple[int, int]:
    """Goal cell minimizing ``d(ego, c) - lam * d(c, nearest peer pose/goal)``.

    Candidates are unexplored cells inside the linearized hull, outside the
    inflated set and reachable from the ego. Cells within ``claim_radius`` of
    a peer's claimed goal are skipped. Raises NoFrontier when none is left.
    """
    geometry = belief.geometry
    res = geometry.resolution
    tol = res if hull_tolerance is None else hull_tolerance
    cand = ~belief.explored & ~model.cells.inflated & ~model.inferred_obstacles
    cand &= model.reachable & ~model.cells.occupied
    if blacklist is not None:
        cand &= ~blacklist
    if distance_map is not None:
        cand &= np.isfinite(distance_map)
    if not cand.any():
        raise NoFrontier("no unexplored cell left")
    rr, cc = np.nonzero(cand)
    x, y = geometry.cell_center(rr, cc)
    pts = np.column_stack([x, y])
    keep = model.linearized.contains(pts, tol=tol)
    rr, cc, pts = rr[keep], cc[keep], pts[keep]
    if len(pts) == 0:
        raise NoFrontier("no unexplored cell inside the predicted boundary")

    peers = [np.asarray(p, dtype=float)[:2] for rid, p in poses.items() if rid != ego]
    claims = [np.asarray(g, dtype=float)[:2] for rid, g in (peer_goals or {}).items()
              if rid != ego and g is not None]
    if claims:
        dclaim = np.min(np.linalg.norm(pts[:, None, :] - np.array(claims)[None], axis=2), axis=1)
        free_of_claims = dclaim > claim_radius
        if free_of_claims.any():
            rr, cc, pts = rr[free_of_claims], cc[free_of_claims], pts[free_of_claims]
    if distance_map is not None:
        d_ego = distance_map[rr, cc]
    else:
        d_ego = np.linalg.norm(pts - np.asarray(poses[ego], dtype=float)[:2], axis=1)
    others = peers + claims
    if others:
        d_peer = np.min(np.linalg.norm(pts[:, None, :] - np.array(others)[None], axis=2), axis=1)
    else:
        d_peer = np.zeros(len(pts))
    score = d_ego - lam * d_peer
    best = int(np.argmin(score))   # row-major order gives the (row, col) tie-break
    return int(rr[best]), int(cc[best])
