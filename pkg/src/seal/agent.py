"""Per-robot exploration-and-localization loop and the synchronous message bus.

Each agent runs two independent pipelines per step (GP fusion for the
exploration belief, range-graph optimization for the position belief), joins
them in a Rao-Blackwellized update, then predicts the explorable boundary and
drives toward the selected region. Agents see the world only through
:class:`RobotSensors` and each other only through :class:`Message` objects.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gp, hull, raoblackwell as rb, rloc
from .config import ScenarioConfig
from .grid import GridGeometry
from .world import (Pose2D, RssiChannel, SensorSpec, WorldMap, cast_lidar, sample_rssi,
                    wrap_angle)

log = logging.getLogger(__name__)

LOOKAHEAD = 0.5
GOAL_REACHED = 0.4
STUCK_WINDOW = 40
STUCK_DISTANCE = 0.05


# ---------------------------------------------------------------------------
# messages

@dataclass(frozen=True)
class GpShare:
    occupancy: tuple[np.ndarray, np.ndarray, gp.Kernel, float] | None
    rssi: tuple[np.ndarray, np.ndarray, gp.Kernel, float] | None = None


@dataclass(frozen=True)
class RssiBeacon:
    tx: int
    dbm: float = float("nan")       # filled in by the bus at the receiver
    position: tuple[float, float] = (0.0, 0.0)
    variance: float = 1.0
    ranges: tuple = ()              # ((peer, range, variance, rssi), ...) heard by tx


@dataclass(frozen=True)
class HullShare:
    goal: tuple[float, float] | None
    position: tuple[float, float]


KIND_ORDER = {"beacon": 0, "gp": 1, "hull": 2}


@dataclass(frozen=True)
class Message:
    kind: str
    sender: int
    step: int
    payload: object

    @property
    def order_key(self):
        return (self.sender, KIND_ORDER[self.kind])


@dataclass
class Command:
    v: float = 0.0
    w: float = 0.0
    idle: bool = False


# ---------------------------------------------------------------------------
# sensing handle

class RobotSensors:
    """The only window an agent has onto the world: lidar, odometry and the AP signal."""

    def __init__(self, world: WorldMap, spec: SensorSpec, channel: RssiChannel,
                 rng: np.random.Generator, ap: tuple[float, float] | None = None,
                 odom_sigma=(0.02, 0.02)):
        self._world = world
        self._spec = spec
        self._channel = channel
        self._rng = rng
        self._ap = ap
        self._odom_sigma = odom_sigma
        self._pose: Pose2D | None = None
        self._motion: tuple[float, float] | None = None

    def _bind(self, pose: Pose2D, motion: tuple[float, float] | None) -> None:
        self._pose = pose
        self._motion = motion

    @property
    def spec(self) -> SensorSpec:
        return self._spec

    def scan(self):
        """(relative bearings, ranges, hit) of one lidar sweep."""
        s = cast_lidar(self._world, self._pose, self._spec, self._rng)
        return self._spec.beam_angles(), s.ranges, s.hit

    def odometry(self) -> tuple[float, float] | None:
        """Noisy (v, w) for the motion executed during the previous step."""
        if self._motion is None:
            return None
        v, w = self._motion
        return (v + float(self._rng.normal(0.0, self._odom_sigma[0])),
                w + float(self._rng.normal(0.0, self._odom_sigma[1])))

    def ap_rssi(self) -> float | None:
        if self._ap is None:
            return None
        return sample_rssi(self._channel, Pose2D(*self._ap), self._pose, self._rng)


# ---------------------------------------------------------------------------
# observation construction

def scan_observations(angles, ranges, hit, resolution: float, map_stride: int,
                      loc_stride: int, evidence_hit: float, evidence_free: float):
    """Robot-frame evidence points: a dense set for mapping and a sparse one for localization."""
    def build(stride, dense):
        a = angles[::stride]
        r = ranges[::stride]
        h = hit[::stride]
        pts, ev = [], []
        if dense:
            n = int(math.ceil(r.max() / resolution)) if len(r) else 0
            t = resolution * np.arange(1, n + 1)
            ok = t[None, :] < (r[:, None] - 0.75 * resolution)
            ok &= t[None, :] <= r[:, None]
            tt = np.broadcast_to(t, ok.shape)[ok]
            aa = np.broadcast_to(a[:, None], ok.shape)[ok]
            pts.append(np.column_stack([tt * np.cos(aa), tt * np.sin(aa)]))
            ev.append(np.full(len(tt), evidence_free))
        else:
            back = np.maximum(r - resolution, 0.0)
            pts.append(np.column_stack([back * np.cos(a), back * np.sin(a)]))
            ev.append(np.full(len(a), evidence_free))
        # a measured range ends on the wall face; half a cell further is inside the wall
        ah, rh = a[h], r[h] + 0.5 * resolution
        pts.append(np.column_stack([rh * np.cos(ah), rh * np.sin(ah)]))
        ev.append(np.full(len(ah), evidence_hit))
        return rb.Observation(np.vstack(pts), np.concatenate(ev))

    return build(map_stride, True), build(loc_stride, False)


# ---------------------------------------------------------------------------
# agent

@dataclass
class GpResult:
    explored: np.ndarray
    occupied: np.ndarray
    belief: np.ndarray
    rssi_field: object = None
    mixture_weight: float = 1.0


@dataclass
class RlocResult:
    neighbors: dict = field(default_factory=dict)     # id -> (position, range, variance)
    ranges: dict = field(default_factory=dict)        # id -> RangeMeasurement
    residual: float = 0.0
    belief: float = 1.0
    n_graphs: int = 0
    converged: bool = True

    def loglik(self, xy: np.ndarray) -> np.ndarray:
        out = np.zeros(len(xy))
        for pos, z, var in self.neighbors.values():
            d = np.linalg.norm(xy - pos, axis=1)
            out += -0.5 * (d - z) ** 2 / var
        return out


class RobotAgent:
    def __init__(self, robot_id: int, cfg: ScenarioConfig, geometry: GridGeometry,
                 start: Pose2D, rng: np.random.Generator, world_bounds=None):
        self.id = robot_id
        self.cfg = cfg
        self.geometry = geometry
        self.rng = rng
        self.bounds = world_bounds or (0.0, 0.0, geometry.width_m, geometry.height_m)
        start_arr = np.array([start.x, start.y, start.theta])
        poses = np.repeat(start_arr[None, :], cfg.n_hypotheses, axis=0)
        self.joint = rb.JointBelief(rb.PoseBelief.uniform(poses),
                                    gp.BeliefGrid.blank(geometry, 0.5))
        self.rloc_only = rb.PoseBelief.uniform(poses.copy())
        self.dead_reckoning = start_arr.copy()
        self.estimate = start_arr.copy()
        self.entropy = 0.0
        self.psi = 1.0
        self.log_psi = 0.0
        self.received: dict[int, GpShare] = {}
        self._remote_models: dict[int, tuple[int, gp.GpModel | None, gp.GpModel | None]] = {}
        self._share_step: dict[int, int] = {}
        self.occ_model: gp.GpModel | None = None
        self.occ_bin = geometry.resolution
        self.rssi_model: gp.GpModel | None = None
        self.rssi_samples: list[tuple[float, float, float]] = []
        self.gp_result = GpResult(np.zeros(geometry.shape, bool), np.zeros(geometry.shape, bool),
                                  np.zeros(geometry.shape))
        self.rloc_result = RlocResult()
        self.peer_goals: dict[int, tuple[float, float] | None] = {}
        self.peer_poses: dict[int, tuple[float, float]] = {}
        self.goal: tuple[int, int] | None = None
        self.path: list[np.ndarray] = []
        self.last_plan = -10 ** 9
        self.blacklist = np.zeros(geometry.shape, dtype=bool)
        self.idle = False
        self.hull_model: hull.HullModel | None = None
        self.progress: list[np.ndarray] = []
        self.events: list[str] = []
        self.last_cmd = Command()

    def initialize(self, sensors: RobotSensors) -> None:
        """Integrate one scan at the known start pose before the first step."""
        cfg = self.cfg
        angles, ranges, hit = sensors.scan()
        map_obs, _ = scan_observations(angles, ranges, hit, self.geometry.resolution,
                                       cfg.map_beam_stride, cfg.loc_beam_stride,
                                       cfg.evidence_hit, cfg.evidence_free)
        single = rb.PoseBelief(self.estimate[None, :], np.ones(1))
        self.joint.map = rb.update_map_belief(self.joint.map, single, map_obs,
                                              sigma=cfg.likelihood_sigma, clamp=cfg.map_clamp)

    # -- views --------------------------------------------------------------
    def explored(self) -> np.ndarray:
        return self.joint.map.explored | self.gp_result.explored

    def believed_occupied(self) -> np.ndarray:
        own = self.joint.map.explored & (self.joint.map.values >= 0.5)
        other = self.gp_result.explored & ~self.joint.map.explored & self.gp_result.occupied
        return own | other

    def pose_variance(self) -> float:
        pb = self.joint.pose
        d = pb.poses[:, :2] - pb.mean()[:2]
        return float(max(pb.weights @ np.sum(d * d, axis=1) / 2.0, 0.01))

    # -- pipeline A: GP fusion ----------------------------------------------
    def _remote(self, sender: int) -> tuple[gp.GpModel | None, gp.GpModel | None]:
        step = self._share_step[sender]
        cached = self._remote_models.get(sender)
        if cached is not None and cached[0] == step:
            return cached[1], cached[2]
        share = self.received[sender]
        occ = rssi = None
        if share.occupancy is not None:
            x, y, k, _ = share.occupancy
            occ = gp.fit_gp(x, y, k)
        if share.rssi is not None:
            x, y, k, _ = share.rssi
            rssi = gp.fit_gp(x, y, k)
        self._remote_models[sender] = (step, occ, rssi)
        return occ, rssi

    def pipeline_gp(self, step: int) -> GpResult:
        """Refit local GPs from the current map belief and fuse the latest received models."""
        cfg = self.cfg
        if step % cfg.gp_every != 0 and self.occ_model is not None:
            return self.gp_result
        m = self.joint.map
        mask = m.explored
        if not mask.any():
            return self.gp_result
        pos = self.geometry.centers(mask)
        val = m.values[mask]
        x, y, bin_size = gp.downsample(pos, val, cfg.gp_cap, self.geometry.resolution)
        self.occ_model = gp.fit_gp(x, y, cfg.kernel)
        self.occ_bin = bin_size
        if self.rssi_samples:
            s = np.array(self.rssi_samples)
            rx, ry, _ = gp.downsample(s[:, :2], s[:, 2], cfg.gp_cap, 0.5)
            self.rssi_model = gp.fit_gp(rx, ry, cfg.rssi_kernel)

        remote = [self._remote(j) for j in sorted(self.received)]
        occ_remote = [r[0] for r in remote if r[0] is not None]
        if cfg.mode == "frontier":
            occ_remote = []
        radius = 0.75 * max([self.occ_bin] + [self.received[j].occupancy[3]
                                              for j in sorted(self.received)
                                              if self.received[j].occupancy is not None])
        models = [self.occ_model, *occ_remote]
        all_centers = self.geometry.centers()
        # cells the robot has sensed itself need no inference
        support = np.zeros(self.geometry.size, dtype=bool)
        unknown = ~mask.ravel()
        for mdl in models:
            support[unknown] |= mdl.support(all_centers[unknown], radius)
        q = all_centers[support]
        field_ = gp.fuse_gps(self.occ_model, occ_remote, q, iters=cfg.em_iters,
                             observations=(x, y), support_radius=radius)
        grid = gp.exploration_grid(field_, cfg.theta, self.geometry)
        occupied = np.zeros(self.geometry.size, dtype=bool)
        occupied[support] = field_.mean >= 0.5
        own_weight = float(field_.mixture_weights[0].mean()) if len(q) else 1.0

        rssi_field = None
        if self.rssi_model is not None:
            rssi_remote = [r[1] for r in remote if r[1] is not None]
            if cfg.mode == "frontier":
                rssi_remote = []
            rssi_field = self._rssi_window(rssi_remote)
        return GpResult(grid.explored, occupied.reshape(self.geometry.shape), grid.values,
                        rssi_field, own_weight)

    def _rssi_window(self, remote):
        """Fused AP-signal field on a small window around the current estimate."""
        res = self.geometry.resolution
        half = 1.5
        cx, cy = self.estimate[:2]
        xs = np.arange(cx - half, cx + half + 1e-9, res)
        ys = np.arange(cy - half, cy + half + 1e-9, res)
        gx, gy = np.meshgrid(xs, ys)
        q = np.column_stack([gx.ravel(), gy.ravel()])
        s = np.array(self.rssi_samples[-200:])
        fld = gp.fuse_gps(self.rssi_model, remote, q, iters=self.cfg.em_iters,
                          observations=(s[:, :2], s[:, 2]), support_radius=3.0)
        mean = fld.mean.reshape(gx.shape)
        var = fld.variance.reshape(gx.shape) + self.rssi_model.kernel.noise_var
        x0, y0 = xs[0], ys[0]

        def lookup(xy):
            c = np.round((xy[:, 0] - x0) / res).astype(int)
            r = np.round((xy[:, 1] - y0) / res).astype(int)
            inside = (r >= 0) & (r < mean.shape[0]) & (c >= 0) & (c < mean.shape[1])
            rr, cc = np.clip(r, 0, mean.shape[0] - 1), np.clip(c, 0, mean.shape[1] - 1)
            mu = np.where(inside, mean[rr, cc], np.nan)
            vv = np.where(inside, var[rr, cc], np.nan)
            return mu, vv
        return lookup

    # -- pipeline B: relative localization ----------------------------------
    def pipeline_rloc(self, beacons: list[RssiBeacon], prediction: np.ndarray) -> RlocResult:
        cfg = self.cfg
        if cfg.mode == "frontier" or not beacons:
            return RlocResult()
        ranges: dict[tuple[int, int], rloc.RangeMeasurement] = {}
        previous = {self.id: prediction[:2]}
        priors = {}
        heard = {}
        for b in beacons:
            d, var = rloc.rssi_to_range(b.dbm, cfg.channel)
            m = rloc.RangeMeasurement(d, var, b.dbm)
            ranges[(self.id, b.tx)] = m
            heard[b.tx] = m
            previous[b.tx] = np.array(b.position)
            priors[b.tx] = (np.array(b.position), b.variance)
        ids = set(previous)
        for b in beacons:
            for peer, rr, var, rssi in b.ranges:
                if peer in ids and peer != b.tx:
                    ranges[(b.tx, peer)] = rloc.RangeMeasurement(rr, var, rssi)
        graph = rloc.build_rpmg(ranges, cfg.connectivity_threshold, vertices=sorted(ids))
        erpmg = rloc.expand_to_erpmg(graph, previous, {"v_max": 0.2, "dt": cfg.dt},
                                     cfg.k_candidates, anchor=self.id,
                                     quantum=cfg.rloc_quantum, margin=cfg.rloc_margin,
                                     cap=cfg.graph_cap, priors=priors, bounds=self.bounds)
        result = rloc.optimize_graph(erpmg, max_iter=30, ftol=1e-6)
        neighbors = {}
        ego_idx = graph.vertices.index(self.id)
        for j in graph.vertices:
            if j == self.id:
                continue
            jdx = graph.vertices.index(j)
            if graph.adjacency[ego_idx, jdx] <= 0:
                continue
            pos = result.mean_position(j)
            m = heard[j]
            neighbors[j] = (pos, m.range, (m.variance + priors[j][1]) / cfg.rloc_temper)
        return RlocResult(neighbors, heard, float(result.residuals[result.best]),
                          float(result.beliefs[result.best]), len(result.residuals),
                          result.converged)

    # -- helpers --------------------------------------------------------------
    def _propagate(self, odo):
        cfg = self.cfg
        if odo is None:
            return
        v, w = odo
        sv, sw = cfg.pf_spread * cfg.odom_sigma_v, cfg.pf_spread * cfg.odom_sigma_w
        self.joint.pose = rb.propagate(self.joint.pose, v, w, cfg.dt, self.rng, sv, sw)
        self.rloc_only = rb.propagate(self.rloc_only, v, w, cfg.dt, self.rng, sv, sw)
        dr = self.dead_reckoning
        nxt, _ = _integrate(Pose2D(*dr), v, w, cfg.dt)
        self.dead_reckoning = np.array([nxt.x, nxt.y, nxt.theta])

    def _plan(self, step: int) -> None:
        cfg = self.cfg
        geo = self.geometry
        explored = self.explored()
        occupied = self.believed_occupied()
        free = explored & ~occupied
        if not free.any():
            return
        est = self.estimate
        rng = np.random.default_rng([cfg.seed, self.id, step])
        model = hull.predict_boundary(hull.CellSets(free, occupied), geo, ego=est[:2],
                                      inflation_depth=cfg.inflation_depth,
                                      max_corner_distance=cfg.max_corner_distance,
                                      vote_threshold=cfg.vote_threshold, rng=rng)
        self.hull_model = model
        er, ec = (int(v) for v in geo.to_cell(est[0], est[1]))
        er = min(max(er, 0), geo.rows - 1)
        ec = min(max(ec, 0), geo.cols - 1)
        passable = model.reachable.copy()
        passable[er, ec] = True
        dist, pred = hull.grid_distances(passable, (er, ec), geo.resolution,
                                         return_predecessors=True)
        belief = gp.BeliefGrid(geo, self.gp_result.belief, explored)
        if cfg.mode == "frontier":
            model = _passthrough(model)
            poses = {self.id: est[:2]}
            claims = {}
            lam = 0.0
        else:
            poses = {self.id: est[:2], **{j: np.array(p) for j, p in self.peer_poses.items()}}
            claims = {j: g for j, g in self.peer_goals.items() if g is not None}
            lam = cfg.peer_weight
        try:
            goal = hull.select_next_region(model, belief, poses, self.id, peer_goals=claims,
                                           lam=lam, claim_radius=cfg.claim_radius,
                                           distance_map=dist, blacklist=self.blacklist)
        except hull.NoFrontier:
            if not self.idle:
                self.events.append(f"{step} robot {self.id} no frontier")
            self.idle = True
            self.goal = None
            self.path = []
            self.last_plan = step
            return
        self.idle = False
        if goal != self.goal:
            self.events.append(f"{step} robot {self.id} goal {goal}")
        self.goal = goal
        self.last_plan = step
        self.progress = []
        # walk predecessors back from the goal
        cells = []
        node = goal[0] * geo.cols + goal[1]
        start = er * geo.cols + ec
        while node >= 0 and node != start and len(cells) < geo.size:
            cells.append(node)
            node = pred[node]
        cells.reverse()
        rr, cc = np.divmod(np.array(cells, dtype=int), geo.cols)
        xs, ys = geo.cell_center(rr, cc)
        self.path = [np.array([x, y]) for x, y in zip(np.atleast_1d(xs), np.atleast_1d(ys))]

    def _steer(self) -> Command:
        est = self.estimate
        while self.path and np.linalg.norm(self.path[0] - est[:2]) < 0.25 and len(self.path) > 1:
            self.path.pop(0)
        if not self.path:
            return Command(0.0, 0.8 if not self.idle else 0.0, self.idle)
        target = self.path[-1]
        for p in self.path:
            if np.linalg.norm(p - est[:2]) >= LOOKAHEAD:
                target = p
                break
        dx, dy = target - est[:2]
        err = wrap_angle(math.atan2(dy, dx) - est[2])
        w = float(np.clip(2.0 * err, -0.8, 0.8))
        if abs(err) > 0.6:
            return Command(0.0, w)
        return Command(0.2 * max(math.cos(err), 0.0), w)

    def _goal_xy(self):
        if self.goal is None:
            return None
        x, y = self.geometry.cell_center(*self.goal)
        return (float(x), float(y))

    def _check_progress(self, step: int) -> bool:
        """True when the robot has been trying to move but is not getting anywhere."""
        if self.last_cmd.v <= 0:
            return False
        self.progress.append(self.estimate[:2].copy())
        if len(self.progress) < STUCK_WINDOW:
            return False
        moved = np.linalg.norm(self.progress[-1] - self.progress[-STUCK_WINDOW])
        return moved < STUCK_DISTANCE

    def beacon(self) -> RssiBeacon:
        rr = tuple((j, m.range, m.variance, m.rssi)
                   for j, m in sorted(self.rloc_result.ranges.items()))
        return RssiBeacon(self.id, position=(float(self.estimate[0]), float(self.estimate[1])),
                          variance=self.pose_variance(), ranges=rr)

    def share(self) -> GpShare:
        occ = rssi = None
        if self.occ_model is not None:
            occ = (self.occ_model.inputs, self.occ_model.targets, self.occ_model.kernel,
                   self.occ_bin)
        if self.rssi_model is not None:
            rssi = (self.rssi_model.inputs, self.rssi_model.targets, self.rssi_model.kernel, 0.5)
        return GpShare(occ, rssi)


def _passthrough(model: hull.HullModel) -> hull.HullModel:
    lin = hull.Linearization(np.zeros((0, 2)), np.zeros(0), model.hull_vertices, True)
    return hull.HullModel(model.hull_vertices, model.wall_lines, model.corners, lin,
                          model.cells, model.prediction, model.reachable,
                          model.inferred_obstacles, model.observed_hull, model.geometry)


def _integrate(pose: Pose2D, v: float, w: float, dt: float):
    from .world import step_kinematics
    return step_kinematics(pose, (v, w), dt, None, v_max=math.inf, w_max=math.inf)


def agent_step(agent: RobotAgent, inbox: list[Message], sensors: RobotSensors, step: int,
               *, order: str = "ab") -> tuple[Command, list[Message]]:
    """One synchronous round of the loop for one robot.

    ``order`` chooses how the two pipelines run before the join: "ab", "ba"
    or "concurrent"; they share no state so the result is the same.
    """
    cfg = agent.cfg
    agent._propagate(sensors.odometry())
    prediction = agent.joint.pose.mean()

    angles, ranges, hit = sensors.scan()
    map_obs, loc_obs = scan_observations(angles, ranges, hit, agent.geometry.resolution,
                                         cfg.map_beam_stride, cfg.loc_beam_stride,
                                         cfg.evidence_hit, cfg.evidence_free)
    ap = sensors.ap_rssi()

    beacons = []
    for msg in sorted(inbox, key=lambda m: m.order_key):
        if msg.kind == "beacon":
            beacons.append(msg.payload)
        elif msg.kind == "gp":
            agent.received[msg.sender] = msg.payload
            agent._share_step[msg.sender] = msg.step
        elif msg.kind == "hull":
            agent.peer_goals[msg.sender] = msg.payload.goal
            agent.peer_poses[msg.sender] = msg.payload.position

    if order == "concurrent":
        with ThreadPoolExecutor(max_workers=2) as pool:
            fa = pool.submit(agent.pipeline_gp, step)
            fb = pool.submit(agent.pipeline_rloc, beacons, prediction)
            res_a, res_b = fa.result(), fb.result()
    elif order == "ba":
        res_b = agent.pipeline_rloc(beacons, prediction)
        res_a = agent.pipeline_gp(step)
    else:
        res_a = agent.pipeline_gp(step)
        res_b = agent.pipeline_rloc(beacons, prediction)
    agent.gp_result = res_a
    agent.rloc_result = res_b

    # join: relative-localization prior, then the map-weighted pose and map updates
    pose_kw = {"sigma": cfg.likelihood_sigma, "known_only": cfg.known_support}
    if ap is not None and res_a.rssi_field is not None and cfg.mode != "frontier":
        loc_obs.rssi = ap
        pose_kw["rssi_field"] = _nan_safe(res_a.rssi_field)
    if cfg.mode == "frontier":
        dr = agent.dead_reckoning
        single = rb.PoseBelief(dr[None, :], np.ones(1))
        new_map = rb.update_map_belief(agent.joint.map, single, map_obs,
                                       sigma=cfg.likelihood_sigma, clamp=cfg.map_clamp)
        agent.joint = rb.JointBelief(agent.joint.pose, new_map)
        agent.estimate = dr.copy()
        agent.entropy = 0.0
    else:
        prior = rb.reweight(agent.joint.pose, res_b.loglik(agent.joint.pose.poses[:, :2]))
        agent.rloc_only = rb.reweight(agent.rloc_only, res_b.loglik(agent.rloc_only.poses[:, :2]))
        if rb.effective_sample_size(agent.rloc_only) < agent.rloc_only.n / 2:
            agent.rloc_only = rb.resample(agent.rloc_only, agent.rng)
        agent.joint = rb.joint_update(rb.JointBelief(prior, agent.joint.map), loc_obs,
                                      map_obs=map_obs, pose_kw=pose_kw,
                                      sigma=cfg.likelihood_sigma,
                                      confidence_max=cfg.confidence_max, clamp=cfg.map_clamp,
                                      min_weight=cfg.map_min_weight)
        agent.entropy = rb.pose_entropy(agent.joint.pose)
        agent.psi = agent.joint.pose.psi
        agent.log_psi = agent.joint.pose.log_psi
        agent.estimate = agent.joint.pose.mean()
        if rb.effective_sample_size(agent.joint.pose) < agent.joint.pose.n / 2:
            agent.joint.pose = rb.resample(agent.joint.pose, agent.rng)
    if ap is not None:
        agent.rssi_samples.append((float(agent.estimate[0]), float(agent.estimate[1]), ap))

    # boundary prediction and next region
    stuck = agent._check_progress(step)
    if stuck and agent.goal is not None:
        agent.events.append(f"{step} robot {agent.id} stuck, dropping goal {agent.goal}")
        _blacklist_around(agent, agent.goal)
        agent.goal = None
    if agent.goal is not None:
        gx, gy = agent._goal_xy()
        if math.hypot(gx - agent.estimate[0], gy - agent.estimate[1]) < GOAL_REACHED and \
                not agent.explored()[agent.goal]:
            _blacklist_around(agent, agent.goal)
            agent.goal = None
    explored = agent.explored()
    if (agent.goal is None or explored[agent.goal] or agent.blacklist[agent.goal]
            or step - agent.last_plan >= cfg.replan_every):
        agent._plan(step)
    cmd = agent._steer()
    agent.last_cmd = cmd

    outbox = [Message("beacon", agent.id, step, agent.beacon()),
              Message("hull", agent.id, step,
                      HullShare(agent._goal_xy(),
                                (float(agent.estimate[0]), float(agent.estimate[1]))))]
    if step % cfg.k_share == 0 and cfg.mode != "frontier":
        outbox.append(Message("gp", agent.id, step, agent.share()))
    return cmd, outbox


def _nan_safe(field_fn):
    def f(xy):
        mu, var = field_fn(xy)
        bad = ~np.isfinite(mu)
        # hypotheses outside the field window get a flat likelihood
        return np.where(bad, 0.0, mu), np.where(bad, 1e12, var)
    return f


def _blacklist_around(agent: RobotAgent, cell, radius: int = 1):
    r, c = cell
    agent.blacklist[max(r - radius, 0):r + radius + 1, max(c - radius, 0):c + radius + 1] = True


def run_simulation(cfg: ScenarioConfig, out_dir=None, **kw):
    """Run the synchronous multi-robot loop; see :mod:`seal.sim`."""
    from .sim import run_simulation as _run
    return _run(cfg, out_dir, **kw)
