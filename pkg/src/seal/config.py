"""Scenario configuration: a flat ``key = value`` text format.

Example::

    world = bookstore          # builtin name, or a path to a .pgm / ASCII grid
    resolution = 0.2
    robots = 3
    start.0 = 9.0 1.5 1.5708   # x y theta for robot 0
    seed = 7
    steps = 5000
    channel.shadowing_sigma_db = 2.0
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from .gp import Kernel
from .world import (BUILTIN_WORLDS, DEFAULT_STARTS, Pose2D, RssiChannel, SensorSpec,
                    WorldMap, load_world)


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    world: str = "bookstore"
    resolution: float = 0.2
    robots: int = 3
    starts: list[Pose2D] = field(default_factory=list)
    seed: int = 7
    steps: int = 5000
    dt: float = 0.1
    mode: str = "seal"                      # "seal" or the "frontier" baseline
    sensor: SensorSpec = field(default_factory=SensorSpec)
    channel: RssiChannel = field(default_factory=RssiChannel)
    kernel: Kernel = field(default_factory=Kernel)
    rssi_kernel: Kernel = field(default_factory=lambda: Kernel(2.0, 25.0, 4.0))
    access_point: tuple[float, float] | None = None
    connectivity_threshold: float = -75.0
    theta: float = 0.65
    k_candidates: int = 3
    graph_cap: int = 64
    n_hypotheses: int = 25
    k_share: int = 5
    gp_every: int = 10
    gp_cap: int = 400
    em_iters: int = 5
    inflation_depth: int = 2
    max_corner_distance: float = 3.0
    vote_threshold: int = 8
    peer_weight: float = 0.5
    claim_radius: float = 1.5
    odom_sigma_v: float = 0.02
    odom_sigma_w: float = 0.02
    pf_spread: float = 1.0
    likelihood_sigma: float = 0.2
    confidence_max: float = 1.0
    evidence_hit: float = 0.9
    evidence_free: float = 0.35
    map_clamp: tuple[float, float] = (0.05, 0.95)
    map_min_weight: float = 1e-3
    map_beam_stride: int = 10
    loc_beam_stride: int = 15
    known_support: bool = True
    replan_every: int = 10
    completion_steps: int = 3
    rloc_margin: float = 0.1
    rloc_quantum: float = 0.05
    rloc_temper: float = 1.0

    def load_world(self, base: Path | None = None) -> WorldMap:
        if self.world in BUILTIN_WORLDS:
            return BUILTIN_WORLDS[self.world](self.resolution)
        path = Path(self.world)
        if base is not None and not path.is_absolute():
            path = base / path
        return load_world(path, self.resolution)

    def start_poses(self) -> list[Pose2D]:
        starts = list(self.starts)
        defaults = DEFAULT_STARTS.get(self.world, [])
        while len(starts) < self.robots:
            i = len(starts)
            if i >= len(defaults):
                raise ConfigError(f"no start pose for robot {i}; add 'start.{i} = x y theta'")
            starts.append(defaults[i])
        return starts[:self.robots]


_NESTED = {"sensor": SensorSpec, "channel": RssiChannel, "kernel": Kernel,
           "rssi_kernel": Kernel}


def _coerce(value: str, kind, lineno: int, key: str):
    try:
        if kind in (float, "float"):
            return float(value)
        if kind in (int, "int"):
            return int(value)
        if kind in (str, "str"):
            return value
        if kind in (bool, "bool"):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
    raise ConfigError(f"line {lineno}: unsupported key {key}")


def _floats(value: str, n: int, lineno: int, key: str) -> list[float]:
    parts = value.replace(",", " ").split()
    if len(parts) != n:
        raise ConfigError(f"line {lineno}: {key} needs {n} numbers, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} must be numeric") from None


def parse_scenario(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    types = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    nested: dict[str, dict] = {k: {} for k in _NESTED}
    starts: dict[int, Pose2D] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split(sep, 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key.startswith("start."):
            try:
                idx = int(key.split(".", 1)[1])
            except ValueError:
                raise ConfigError(f"line {lineno}: bad robot index in {key}") from None
            parts = value.replace(",", " ").split()
            if len(parts) == 2:
                parts.append("0")
            x, y, th = _floats(" ".join(parts), 3, lineno, key)
            starts[idx] = Pose2D(x, y, th)
        elif "." in key:
            group, sub = key.split(".", 1)
            if group not in _NESTED:
                raise ConfigError(f"line {lineno}: unknown section {group!r}")
            names = {f.name: f.type for f in dataclasses.fields(_NESTED[group])}
            if sub not in names:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            nested[group][sub] = _coerce(value, names[sub], lineno, key)
        elif key in ("access_point", "ap"):
            if value.lower() in ("none", "off"):
                cfg.access_point = None
            else:
                cfg.access_point = tuple(_floats(value, 2, lineno, key))
        elif key == "map_clamp":
            cfg.map_clamp = tuple(_floats(value, 2, lineno, key))
        elif key == "baseline":
            if value not in ("frontier", "none"):
                raise ConfigError(f"line {lineno}: baseline must be 'frontier' or 'none'")
            cfg.mode = "frontier" if value == "frontier" else "seal"
        elif key in types and key not in _NESTED and key != "starts":
            setattr(cfg, key, _coerce(value, types[key], lineno, key))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        for group, kw in nested.items():
            if kw:
                setattr(cfg, group, dataclasses.replace(getattr(cfg, group), **kw))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if starts:
        missing = [i for i in range(max(starts) + 1) if i not in starts]
        if missing:
            raise ConfigError(f"start poses missing for robots {missing}")
        cfg.starts = [starts[i] for i in range(len(starts))]
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    if cfg.robots < 1:
        raise ConfigError("robots must be >= 1")
    if cfg.steps < 0:
        raise ConfigError("steps must be >= 0")
    if cfg.dt <= 0 or cfg.resolution <= 0:
        raise ConfigError("dt and resolution must be positive")
    if not 0 < cfg.theta < 1:
        raise ConfigError("theta must lie in (0, 1)")
    if cfg.k_candidates < 1 or cfg.n_hypotheses < 1 or cfg.k_share < 1 or cfg.gp_every < 1:
        raise ConfigError("k_candidates, n_hypotheses, k_share and gp_every must be >= 1")
    if cfg.mode not in ("seal", "frontier"):
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if not math.isfinite(cfg.connectivity_threshold):
        raise ConfigError("connectivity_threshold must be finite")


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        cfg = parse_scenario(path.read_text())
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if cfg.world not in BUILTIN_WORLDS and not Path(cfg.world).is_absolute():
        cfg.world = str((path.parent / cfg.world).resolve())
    return cfg


def default_scenario(name: str = "bookstore", **overrides) -> ScenarioConfig:
    cfg = ScenarioConfig(world=name)
    if name in BUILTIN_WORLDS and "access_point" not in overrides:
        cfg.access_point = (10.0, 10.0)
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown key {k!r}")
        setattr(cfg, k, v)
    validate(cfg)
    return cfg
