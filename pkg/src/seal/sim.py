"""Synchronous multi-robot simulation driver and run artifacts."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import gp
from .agent import Command, Message, RobotAgent, RobotSensors, RssiBeacon, agent_step
from .config import ScenarioConfig, validate
from .grid import GridGeometry
from .metrics import RunReport, ale, ate, belief_ssim, explored_pct, map_ssim
from .world import (PoseInsideObstacle, Pose2D, WorldMap, sample_rssi, step_kinematics,
                    wrap_angle, write_pgm)


@dataclass
class TeamMap:
    """Evaluation-only merge of the robots' own map beliefs."""
    values: np.ndarray
    explored: np.ndarray


def merge_maps(agents: list[RobotAgent]) -> TeamMap:
    acc = np.zeros(agents[0].geometry.shape)
    count = np.zeros(agents[0].geometry.shape)
    for a in agents:
        m = a.joint.map
        acc += np.where(m.explored, m.values, 0.0)
        count += m.explored
    explored = count > 0
    values = np.where(explored, acc / np.maximum(count, 1), 0.5)
    return TeamMap(values, explored)


class Bus:
    """Routes each round's outbox to the next round's inboxes.

    A message reaches a receiver only if the signal it measures from the
    sender is at or above the connectivity threshold; beacons get that
    measured value filled in. Inboxes are ordered by (sender id, kind).
    """

    def __init__(self, cfg: ScenarioConfig, rngs: list[np.random.Generator]):
        self.cfg = cfg
        self.rngs = rngs
        self.pending: list[Message] = []

    def post(self, messages: list[Message]) -> None:
        self.pending.extend(messages)

    def deliver(self, poses: list[Pose2D]) -> list[list[Message]]:
        n = len(poses)
        cfg = self.cfg
        rssi = np.full((n, n), -np.inf)
        for rx in range(n):
            for tx in range(n):
                if tx != rx:
                    rssi[tx, rx] = sample_rssi(cfg.channel, poses[tx], poses[rx], self.rngs[rx])
        inboxes: list[list[Message]] = [[] for _ in range(n)]
        for msg in self.pending:
            for rx in range(n):
                if rx == msg.sender or rssi[msg.sender, rx] < cfg.connectivity_threshold:
                    continue
                if msg.kind == "beacon":
                    p = msg.payload
                    heard = RssiBeacon(p.tx, float(rssi[msg.sender, rx]), p.position,
                                       p.variance, p.ranges)
                    inboxes[rx].append(Message("beacon", msg.sender, msg.step, heard))
                else:
                    inboxes[rx].append(msg)
        self.pending = []
        for box in inboxes:
            box.sort(key=lambda m: m.order_key)
        return inboxes


@dataclass
class SimState:
    world: WorldMap
    agents: list[RobotAgent]
    sensors: list[RobotSensors]
    poses: list[Pose2D]
    bus: Bus
    motions: list = field(default_factory=list)


def build_simulation(cfg: ScenarioConfig, world: WorldMap | None = None) -> SimState:
    validate(cfg)
    world = world if world is not None else cfg.load_world()
    geo = GridGeometry.like(world)
    starts = cfg.start_poses()
    for i, p in enumerate(starts):
        if not world.is_free(p.x, p.y):
            raise PoseInsideObstacle(f"start pose of robot {i} is inside an obstacle")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3 * cfg.robots)
    rng = [np.random.default_rng(s) for s in seeds]
    n = cfg.robots
    bounds = (0.0, 0.0, world.width_m, world.height_m)
    agents = [RobotAgent(i, cfg, geo, starts[i], rng[3 * i], bounds) for i in range(n)]
    sensors = [RobotSensors(world, cfg.sensor, cfg.channel, rng[3 * i + 1], cfg.access_point,
                            (cfg.odom_sigma_v, cfg.odom_sigma_w)) for i in range(n)]
    bus = Bus(cfg, [rng[3 * i + 2] for i in range(n)])
    state = SimState(world, agents, sensors, list(starts), bus, [None] * n)
    for a, s, p in zip(agents, sensors, starts):
        s._bind(p, None)
        a.initialize(s)
    return state


def advance(state: SimState, step: int, order: str = "ab") -> list[Command]:
    """One synchronous round: deliver, sense and decide, then move every robot."""
    cfg = state.agents[0].cfg
    inboxes = state.bus.deliver(state.poses)
    commands = []
    for i, agent in enumerate(state.agents):
        state.sensors[i]._bind(state.poses[i], state.motions[i])
        cmd, out = agent_step(agent, inboxes[i], state.sensors[i], step, order=order)
        state.bus.post(out)
        commands.append(cmd)
    for i, cmd in enumerate(commands):
        old = state.poses[i]
        new, _ = step_kinematics(old, (cmd.v, cmd.w), cfg.dt, state.world)
        # odometry reports what the wheels actually achieved
        v = math.hypot(new.x - old.x, new.y - old.y) / cfg.dt
        w = wrap_angle(new.theta - old.theta) / cfg.dt
        state.poses[i] = new
        state.motions[i] = (v, w)
    return commands


def run_simulation(cfg: ScenarioConfig, out_dir: str | Path | None = None, *,
                   order: str = "ab", world: WorldMap | None = None,
                   progress=None) -> RunReport:
    state = build_simulation(cfg, world)
    world = state.world
    n = cfg.robots
    true_traj = [[] for _ in range(n)]
    est_traj = [[] for _ in range(n)]
    dr_traj = [[] for _ in range(n)]
    rl_traj = [[] for _ in range(n)]
    rows = []
    explored_series = []
    distance = 0.0
    idle_run = 0
    completed = False
    step = 0
    for step in range(cfg.steps):
        before = list(state.poses)
        commands = advance(state, step, order)
        for i, a in enumerate(state.agents):
            p = before[i]
            true_traj[i].append((p.x, p.y))
            est_traj[i].append(a.estimate[:2].copy())
            dr_traj[i].append(a.dead_reckoning[:2].copy())
            rl_traj[i].append(a.rloc_only.mean()[:2])
            rows.append((step, i, float(a.estimate[0]), float(a.estimate[1]),
                         float(a.rloc_result.belief), float(a.rloc_result.residual),
                         p.x, p.y, float(a.entropy), float(a.log_psi)))
            distance += state.poses[i].distance_to(p)
        team = merge_maps(state.agents)
        explored_series.append(explored_pct(team.explored, world))
        if progress is not None:
            progress(step, explored_series[-1])
        if all(c.idle for c in commands):
            idle_run += 1
            if idle_run >= cfg.completion_steps:
                completed = True
                step += 1
                break
        else:
            idle_run = 0
    else:
        step = cfg.steps

    team = merge_maps(state.agents)
    report = RunReport(steps=step, completed=completed, seed=cfg.seed, mode=cfg.mode,
                       scenario=cfg.world if len(cfg.world) < 64 else Path(cfg.world).name)
    report.mapping_time = step * cfg.dt
    report.total_distance = distance
    report.explored_pct = explored_pct(team.explored, world)
    report.map_ssim = map_ssim(team.values, team.explored, world)
    report.belief_ssim = belief_ssim(team.values, team.explored, world)
    if step > 0:
        gt = np.vstack([np.array(t) for t in true_traj])
        report.ale = ale(np.vstack(est_traj), gt)
        report.ale_dead_reckoning = ale(np.vstack(dr_traj), gt)
        report.ale_rloc_only = ale(np.vstack(rl_traj), gt)
        report.ate = float(np.mean([ate(np.array(e), np.array(t))
                                    for e, t in zip(est_traj, true_traj)]))
        for i in range(n):
            report.per_robot.append({
                "robot": i,
                "ale_m": ale(np.array(est_traj[i]), np.array(true_traj[i])),
                "ate_m": ate(np.array(est_traj[i]), np.array(true_traj[i])),
                "explored_pct": explored_pct(state.agents[i].joint.map.explored, world),
            })
    report.series = {"explored_pct": explored_series}
    if out_dir is not None:
        write_artifacts(Path(out_dir), state, report, rows)
    return report


def occupancy_image(agent: RobotAgent) -> np.ndarray:
    """Free 255, occupied 0, unknown 128; top row first."""
    m = agent.joint.map
    img = np.full(m.values.shape, 128, dtype=np.uint8)
    img[m.explored & (m.values < 0.5)] = 255
    img[m.explored & (m.values >= 0.5)] = 0
    return img[::-1]


def write_artifacts(out: Path, state: SimState, report: RunReport, rows) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for a in state.agents:
        write_pgm(out / f"map_{a.id}.pgm", occupancy_image(a))
        belief = gp.BeliefGrid(a.geometry, np.maximum(a.gp_result.belief,
                                                      a.joint.map.explored.astype(float)),
                              a.explored())
        write_pgm(out / f"belief_{a.id}.pgm", gp.grid_to_image(belief))
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "robot_id", "x_est", "y_est", "belief", "residual",
                    "x_true", "y_true", "entropy", "log_psi"])
        for r in rows:
            w.writerow([r[0], r[1]] + [f"{v:.6f}" for v in r[2:]])
    with open(out / "explored.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "explored_pct"])
        for i, v in enumerate(report.series["explored_pct"]):
            w.writerow([i, f"{v:.6f}"])
    report.series_files = {"explored_pct": "explored.csv", "trajectory": "trajectory.csv"}
    (out / "metrics.json").write_text(report.to_metrics_json())
    events = sorted((e for a in state.agents for e in a.events),
                    key=lambda e: int(e.split(" ", 1)[0]))
    if report.completed:
        events.append(f"{report.steps} all robots idle, exploration complete")
    (out / "events.log").write_text("".join(e + "\n" for e in events))


def load_metrics(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "metrics.json"
    return json.loads(path.read_text())
