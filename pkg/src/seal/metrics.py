"""Evaluation metrics against ground truth and the run report."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .world import WorldMap

SSIM_SIGMA = 1.5
SSIM_WINDOW = 11


class GeometryMismatch(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), borders cropped."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise GeometryMismatch(f"shape {a.shape} != {b.shape}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    truncate = ((SSIM_WINDOW - 1) / 2) / SSIM_SIGMA

    def filt(x):
        return gaussian_filter(x, SSIM_SIGMA, truncate=truncate, mode="reflect")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    s = num / den
    pad = (SSIM_WINDOW - 1) // 2
    if min(s.shape) > 2 * pad:
        s = s[pad:-pad, pad:-pad]
    return float(s.mean())


def free_image(world: WorldMap) -> np.ndarray:
    return world.free_mask.astype(float)


def map_ssim(free_prob: np.ndarray, explored: np.ndarray, truth: WorldMap) -> float:
    """SSIM of the binarized map (free = explored and P(occupied) < 0.5) vs. the true free mask."""
    if free_prob.shape != truth.shape or explored.shape != truth.shape:
        raise GeometryMismatch("map and ground truth differ in geometry")
    img = (explored & (free_prob < 0.5)).astype(float)
    return ssim(img, free_image(truth))


def belief_ssim(occupancy: np.ndarray, explored: np.ndarray, truth: WorldMap) -> float:
    """Unthresholded diagnostic: free-probability image, unknown cells at 0.5."""
    img = np.where(explored, 1.0 - occupancy, 0.5)
    return ssim(img, free_image(truth))


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotation R and translation t minimizing sum ||R src + t - dst||^2 (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    u, _, vt = np.linalg.svd(cov)
    s = np.eye(src.shape[1])
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[-1, -1] = -1
    r = u @ s @ vt
    t = mu_d - r @ mu_s
    return r, t


def _check(est, truth):
    est = np.asarray(est, dtype=float)[:, :2]
    truth = np.asarray(truth, dtype=float)[:, :2]
    if len(est) != len(truth):
        raise LengthMismatch(f"{len(est)} estimated vs {len(truth)} true poses")
    return est, truth


def ate(estimated, truth) -> float:
    est, gt = _check(estimated, truth)
    if len(est) == 0:
        return 0.0
    r, t = umeyama_alignment(est, gt)
    err = (est @ r.T + t) - gt
    return float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))


def ale(estimated, truth) -> float:
    est, gt = _check(estimated, truth)
    if len(est) == 0:
        return 0.0
    return float(np.mean(np.linalg.norm(est - gt, axis=1)))


def explored_pct(explored, truth: WorldMap) -> float:
    mask = explored.explored if hasattr(explored, "explored") else np.asarray(explored, bool)
    if mask.shape != truth.shape:
        raise GeometryMismatch("explored mask and ground truth differ in geometry")
    free = truth.free_mask
    return float(100.0 * np.count_nonzero(mask & free) / np.count_nonzero(free))


@dataclass
class RunReport:
    mapping_time: float = 0.0
    total_distance: float = 0.0
    explored_pct: float = 0.0
    map_ssim: float = 0.0
    ate: float = 0.0
    ale: float = 0.0
    steps: int = 0
    completed: bool = False
    belief_ssim: float = 0.0
    ale_dead_reckoning: float = 0.0
    ale_rloc_only: float = 0.0
    per_robot: list[dict] = field(default_factory=list)
    series: dict[str, list[float]] = field(default_factory=dict)
    series_files: dict[str, str] = field(default_factory=dict)
    scenario: str = ""
    seed: int = 0
    mode: str = "seal"

    def to_metrics_json(self) -> str:
        doc = {
            "mapping_time_s": self.mapping_time,
            "total_distance_m": self.total_distance,
            "explored_pct": self.explored_pct,
            "map_ssim": self.map_ssim,
            "ate_m": self.ate,
            "ale_m": self.ale,
            "ale_dead_reckoning_m": self.ale_dead_reckoning,
            "ale_rloc_only_m": self.ale_rloc_only,
            "belief_ssim": self.belief_ssim,
            "steps": self.steps,
            "completed": self.completed,
            "scenario": self.scenario,
            "seed": self.seed,
            "mode": self.mode,
            "per_robot": self.per_robot,
            "series": self.series_files,
        }
        return json.dumps(_round_floats(doc), indent=2, sort_keys=True) + "\n"

    def as_dict(self) -> dict:
        return asdict(self)


def _round_floats(obj, digits: int = 9):
    if isinstance(obj, float):
        return round(obj, digits)
    if isinstance(obj, dict):
        return {k: _round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, digits) for v in obj]
    return obj


TABLE_ROWS = [
    ("Mapping Time (s)", "mapping_time_s"),
    ("Total Distance (m)", "total_distance_m"),
    ("Explored Area (%)", "explored_pct"),
    ("Map SSIM", "map_ssim"),
    ("ATE (m)", "ate_m"),
    ("ALE (m)", "ale_m"),
]


def compare_table(runs: dict[str, dict]) -> str:
    """Side-by-side text table of several metrics.json documents."""
    names = list(runs)
    width = max(12, *(len(n) for n in names))
    head = f"{'Metric':<22}" + "".join(f"{n:>{width + 2}}" for n in names)
    lines = [head, "-" * len(head)]
    for label, key in TABLE_ROWS:
        cells = []
        for n in names:
            v = runs[n].get(key)
            cells.append(f"{v:>{width + 2}.3f}" if isinstance(v, (int, float)) else
                         f"{'-':>{width + 2}}")
        lines.append(f"{label:<22}" + "".join(cells))
    return "\n".join(lines)
