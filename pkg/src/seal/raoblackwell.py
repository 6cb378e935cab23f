"""Joint pose/map belief: map-weighted pose update, pose entropy and entropy-gated map update.

The map belief is a per-cell occupancy probability ``b``. An observation is a
set of points in the robot frame, each carrying occupancy evidence ``e`` in
[0, 1] (1 for a beam endpoint, 0 along the free part of a beam). Evidence is
modelled as ``e ~ N(o, sigma^2)`` with ``o`` the binary occupancy of the cell
the point falls in under a given pose hypothesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .gp import BeliefGrid
from .world import wrap_angle

LIKELIHOOD_SIGMA = 0.2
DENSE_LIMIT = 4_000_000
_LOG_2PI = math.log(2.0 * math.pi)


class DegenerateBelief(RuntimeWarning):
    pass


@dataclass
class PoseBelief:
    poses: np.ndarray            # (N, 3): x, y, theta
    weights: np.ndarray          # (N,)
    psi: float = 1.0
    log_psi: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        self.poses = np.atleast_2d(np.asarray(self.poses, dtype=float))
        if self.poses.shape[1] == 2:
            self.poses = np.column_stack([self.poses, np.zeros(len(self.poses))])
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if len(self.weights) != len(self.poses) or len(self.poses) < 1:
            raise ValueError("need one weight per hypothesis and at least one hypothesis")

    @classmethod
    def uniform(cls, poses) -> "PoseBelief":
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        return cls(poses, np.full(len(poses), 1.0 / len(poses)))

    @property
    def n(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        w = self.weights
        xy = w @ self.poses[:, :2]
        th = math.atan2(w @ np.sin(self.poses[:, 2]), w @ np.cos(self.poses[:, 2]))
        return np.array([xy[0], xy[1], th])

    def map_pose(self) -> np.ndarray:
        return self.poses[int(np.argmax(self.weights))]

    def copy(self) -> "PoseBelief":
        return PoseBelief(self.poses.copy(), self.weights.copy(), self.psi, self.log_psi,
                          self.degenerate)


@dataclass
class Observation:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    evidence: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rssi: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        self.evidence = np.asarray(self.evidence, dtype=float).ravel()

    def __len__(self) -> int:
        return len(self.evidence)

    def cells(self, poses: np.ndarray, geometry) -> np.ndarray:
        """Flat cell index of every point under every pose, shape (N, M); -1 off-grid."""
        poses = np.atleast_2d(poses)
        c = np.cos(poses[:, 2])[:, None]
        s = np.sin(poses[:, 2])[:, None]
        px, py = self.points[:, 0][None, :], self.points[:, 1][None, :]
        wx = poses[:, 0][:, None] + c * px - s * py
        wy = poses[:, 1][:, None] + s * px + c * py
        return geometry.flat_index(wx, wy)


@dataclass
class JointBelief:
    pose: PoseBelief
    map: BeliefGrid

    def copy(self) -> "JointBelief":
        return JointBelief(self.pose.copy(), self.map.copy())


def _cell_log_likelihoods(obs: Observation, poses: np.ndarray, geometry, sigma: float):
    """Summed log N(e; 1) and log N(e; 0) per observed (hypothesis, cell) pair.

    Returns ``(hyp, cell, s1, s0)`` over the distinct pairs, so repeated hits
    on a cell under one hypothesis combine exactly.
    """
    size = geometry.size
    idx = obs.cells(poses, geometry)
    ok = idx >= 0
    keys = (np.arange(len(poses))[:, None] * size + idx)[ok]
    e = np.broadcast_to(obs.evidence, idx.shape)[ok]
    const = -0.5 * (_LOG_2PI + 2.0 * math.log(sigma))
    l1 = const - 0.5 * (e - 1.0) ** 2 / sigma ** 2
    l0 = const - 0.5 * e ** 2 / sigma ** 2
    total = len(poses) * size
    if total <= DENSE_LIMIT:
        # dense counting is cheaper than sorting for moderate grids
        uniq = np.flatnonzero(np.bincount(keys, minlength=total))
        s1 = np.bincount(keys, weights=l1, minlength=total)[uniq]
        s0 = np.bincount(keys, weights=l0, minlength=total)[uniq]
    else:
        uniq, inv = np.unique(keys, return_inverse=True)
        s1 = np.bincount(inv, weights=l1, minlength=len(uniq))
        s0 = np.bincount(inv, weights=l0, minlength=len(uniq))
    hyp, cell = np.divmod(uniq, size)
    return hyp, cell, s1, s0


def _cell_terms(b: np.ndarray, cell: np.ndarray, s1: np.ndarray, s0: np.ndarray):
    bc = b[cell]
    with np.errstate(divide="ignore"):
        a1 = np.log(bc) + s1
        a0 = np.log1p(-bc) + s0
    return a1, a0


def common_support(obs: Observation, poses: np.ndarray, map_belief: BeliefGrid) -> Observation:
    """Keep only the points that land on explored cells under every hypothesis.

    Unknown cells score differently from known ones, so hypotheses that push
    fewer points past the map frontier would otherwise win for that alone.
    """
    idx = obs.cells(poses, map_belief.geometry)
    known = np.where(idx >= 0, map_belief.explored.ravel()[np.maximum(idx, 0)], False)
    keep = known.all(axis=0)
    return Observation(obs.points[keep], obs.evidence[keep], obs.rssi)


def log_sample_weights(poses, map_belief: BeliefGrid, obs: Observation,
                       sigma: float = LIKELIHOOD_SIGMA, rssi_field=None,
                       rssi_sigma: float = 0.0, known_only: bool = False) -> np.ndarray:
    """Log of the per-hypothesis marginal observation likelihood.

    ``known_only`` scores every hypothesis on the same explored-cell support.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    out = np.zeros(len(poses))
    if known_only and len(obs):
        obs = common_support(obs, poses, map_belief)
    if len(obs):
        b = np.clip(map_belief.values.ravel(), 0.0, 1.0)
        hyp, cell, s1, s0 = _cell_log_likelihoods(obs, poses, map_belief.geometry, sigma)
        a1, a0 = _cell_terms(b, cell, s1, s0)
        out += np.bincount(hyp, weights=np.logaddexp(a1, a0), minlength=len(poses))
    if obs.rssi is not None and rssi_field is not None:
        mu, var = rssi_field(poses[:, :2])
        var = np.asarray(var) + rssi_sigma ** 2
        out += -0.5 * (np.log(2 * np.pi * var) + (obs.rssi - np.asarray(mu)) ** 2 / var)
    return out


def sample_weights(poses, map_belief: BeliefGrid, obs: Observation, **kw) -> np.ndarray:
    """Integrand mass per hypothesis: the map-marginalized likelihood of the observation.

    All-zero mass falls back to uniform weights.
    """
    poses = poses.poses if isinstance(poses, PoseBelief) else poses
    w = np.exp(log_sample_weights(poses, map_belief, obs, **kw))
    if not np.any(w > 0) or not np.all(np.isfinite(w)):
        return np.full(len(w), 1.0 / len(w))
    return w


def update_pose_belief(prior: PoseBelief, map_belief: BeliefGrid, obs: Observation,
                       **kw) -> PoseBelief:
    """Posterior weight of each hypothesis: prior weight times marginal observation likelihood."""
    logw = log_sample_weights(prior.poses, map_belief, obs, **kw)
    with np.errstate(divide="ignore"):
        logp = np.log(prior.weights) + logw
    if not np.any(np.isfinite(logp)):
        n = prior.n
        return PoseBelief(prior.poses.copy(), np.full(n, 1.0 / n), 0.0, -math.inf, True)
    log_psi = float(logsumexp(logp))
    w = np.exp(logp - log_psi)
    w /= w.sum()
    return PoseBelief(prior.poses.copy(), w, math.exp(min(log_psi, 700.0)), log_psi, False)


def pose_entropy(belief: PoseBelief) -> float:
    w = belief.weights
    w = w[w > 0]
    return float(max(-(w * np.log(w)).sum(), 0.0))


def entropy_attenuation(entropy: float, n_hypotheses: int) -> float:
    """exp(-H / log N_s): 1 for a certain pose, e^-1 for a uniform belief."""
    if n_hypotheses <= 1:
        return 1.0
    return math.exp(-entropy / math.log(n_hypotheses))


def update_map_belief(map_belief: BeliefGrid, pose_belief: PoseBelief, obs: Observation, *,
                      entropy: float | None = None, confidence_max: float = 1.0,
                      sigma: float = LIKELIHOOD_SIGMA, gate: bool = True,
                      clamp: tuple[float, float] | None = None,
                      min_weight: float = 0.0) -> BeliefGrid:
    """Write observation evidence into the map, averaged over pose hypotheses by weight.

    The per-hypothesis cell posterior is exact; the step toward it is scaled by
    ``confidence_max * exp(-H / log N_s)`` when ``gate`` is set. Hypotheses
    lighter than ``min_weight`` times the heaviest one are skipped (0 keeps all).
    """
    out = map_belief.copy()
    if len(obs) == 0:
        return out
    if gate:
        h = pose_entropy(pose_belief) if entropy is None else entropy
        rate = confidence_max * entropy_attenuation(h, pose_belief.n)
    else:
        rate = confidence_max
    geometry = map_belief.geometry
    live = pose_belief.weights >= min_weight * pose_belief.weights.max()
    poses = pose_belief.poses[live]
    w = pose_belief.weights[live]
    w = w / w.sum()
    b = np.clip(map_belief.values.ravel(), 0.0, 1.0)
    hyp, cell, s1, s0 = _cell_log_likelihoods(obs, poses, geometry, sigma)
    a1, a0 = _cell_terms(b, cell, s1, s0)
    post = np.exp(a1 - np.logaddexp(a1, a0))
    size = geometry.size
    change = np.bincount(cell, weights=w[hyp] * (post - b[cell]), minlength=size)
    new = b + rate * change
    if clamp is not None:
        touched = np.zeros(size, dtype=bool)
        touched[cell] = True
        new = np.where(touched, np.clip(new, clamp[0], clamp[1]), new)
    out.values = np.clip(new, 0.0, 1.0).reshape(geometry.shape)
    observed_mass = np.bincount(cell, weights=w[hyp], minlength=size)
    out.explored |= (observed_mass >= 0.5 - 1e-12).reshape(geometry.shape)
    return out


def joint_update(joint: JointBelief, obs: Observation, *, map_obs: Observation | None = None,
                 pose_kw: dict | None = None, **map_kw) -> JointBelief:
    """Pose first, then map conditioned on the updated pose belief.

    ``map_obs`` lets the map step use a denser observation than the pose step.
    """
    pose_kw = dict(pose_kw or {})
    if "sigma" in map_kw:
        pose_kw.setdefault("sigma", map_kw["sigma"])
    pose = update_pose_belief(joint.pose, joint.map, obs, **pose_kw)
    h = pose_entropy(pose)
    new_map = update_map_belief(joint.map, pose, obs if map_obs is None else map_obs,
                                entropy=h, **map_kw)
    return JointBelief(pose, new_map)


# ---------------------------------------------------------------------------
# hypothesis maintenance used by the agent loop

def propagate(belief: PoseBelief, v: float, w: float, dt: float, rng: np.random.Generator,
              sigma_v: float = 0.02, sigma_w: float = 0.02) -> PoseBelief:
    """Move every hypothesis by the odometry reading plus sampled velocity noise."""
    n = belief.n
    vv = v + rng.normal(0.0, sigma_v, n)
    ww = w + rng.normal(0.0, sigma_w, n)
    p = belief.poses
    th = p[:, 2]
    small = np.abs(ww) < 1e-9
    safe_w = np.where(small, 1.0, ww)
    r = vv / safe_w
    dx = np.where(small, vv * dt * np.cos(th), r * (np.sin(th + ww * dt) - np.sin(th)))
    dy = np.where(small, vv * dt * np.sin(th), -r * (np.cos(th + ww * dt) - np.cos(th)))
    th2 = np.mod(th + ww * dt + np.pi, 2 * np.pi) - np.pi
    new = np.column_stack([p[:, 0] + dx, p[:, 1] + dy, th2])
    return PoseBelief(new, belief.weights.copy(), belief.psi, belief.log_psi)


def effective_sample_size(belief: PoseBelief) -> float:
    return float(1.0 / np.sum(belief.weights ** 2))


def resample(belief: PoseBelief, rng: np.random.Generator) -> PoseBelief:
    """Systematic resampling to uniform weights."""
    n = belief.n
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(belief.weights)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, positions)
    return PoseBelief(belief.poses[idx].copy(), np.full(n, 1.0 / n), belief.psi, belief.log_psi)


def reweight(belief: PoseBelief, log_likelihood: np.ndarray) -> PoseBelief:
    """Multiply weights by an external likelihood (e.g. the relative-localization prior)."""
    with np.errstate(divide="ignore"):
        logp = np.log(belief.weights) + log_likelihood
    if not np.any(np.isfinite(logp)):
        return PoseBelief(belief.poses.copy(), np.full(belief.n, 1.0 / belief.n),
                          belief.psi, belief.log_psi, True)
    w = np.exp(logp - logsumexp(logp))
    return PoseBelief(belief.poses.copy(), w / w.sum(), belief.psi, belief.log_psi)
