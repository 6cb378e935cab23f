"""Ground-truth 2-D grid world: obstacle maps, lidar, RSSI channel, kinematics.

Coordinates are meters with the origin at the lower-left corner of the grid.
Cell ``(row, col)`` covers ``[col*res, (col+1)*res) x [row*res, (row+1)*res)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FREE = 0
OCCUPIED = 1

V_MAX = 0.2
W_MAX = 0.8


class PoseInsideObstacle(ValueError):
    pass


class WorldFormatError(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class SensorSpec:
    fov: float = math.pi
    range_max: float = 5.0
    beam_count: int = 1500
    range_noise_sigma: float = 0.01

    def __post_init__(self):
        if self.beam_count < 1:
            raise ValueError("beam_count must be >= 1")
        if self.range_max <= 0:
            raise ValueError("range_max must be positive")
        if not 0 < self.fov <= 2 * math.pi + 1e-12:
            raise ValueError("fov must lie in (0, 2*pi]")

    def beam_angles(self) -> np.ndarray:
        """Beam bearings relative to the robot heading."""
        if self.beam_count == 1:
            return np.zeros(1)
        full_circle = self.fov >= 2 * math.pi - 1e-12
        return np.linspace(-self.fov / 2, self.fov / 2, self.beam_count,
                           endpoint=not full_circle)


@dataclass(frozen=True)
class RssiChannel:
    p0_dbm: float = -40.0
    d0: float = 1.0
    path_loss_exponent: float = 2.0
    shadowing_sigma_db: float = 2.0

    def __post_init__(self):
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be positive")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be non-negative")

    def mean_rssi(self, distance: float) -> float:
        d = max(distance, self.d0)
        return self.p0_dbm - 10.0 * self.path_loss_exponent * math.log10(d / self.d0)


@dataclass
class LidarScan:
    origin: Pose2D
    angles: np.ndarray  # absolute bearings, radians
    ranges: np.ndarray
    hit: np.ndarray
    range_max: float

    def endpoints(self) -> np.ndarray:
        return np.column_stack([self.origin.x + self.ranges * np.cos(self.angles),
                                self.origin.y + self.ranges * np.sin(self.angles)])


@dataclass
class WorldMap:
    """Immutable occupancy ground truth. ``cells[row, col]`` is FREE or OCCUPIED."""

    cells: np.ndarray
    resolution: float
    name: str = "world"
    _free_count: int = field(init=False, repr=False)

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8)
        if cells.ndim != 2 or min(cells.shape) < 3:
            raise WorldFormatError("world grid must be 2-D and at least 3x3")
        if self.resolution <= 0:
            raise WorldFormatError("resolution must be positive")
        # closed world
        cells[0, :] = OCCUPIED
        cells[-1, :] = OCCUPIED
        cells[:, 0] = OCCUPIED
        cells[:, -1] = OCCUPIED
        self._free_count = int((cells == FREE).sum())
        if self._free_count == 0:
            raise WorldFormatError("world has no free cell")
        cells.setflags(write=False)
        self.cells = cells

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def width_m(self) -> float:
        return self.width_cells * self.resolution

    @property
    def height_m(self) -> float:
        return self.height_cells * self.resolution

    @property
    def free_mask(self) -> np.ndarray:
        return self.cells == FREE

    def to_cell(self, x, y):
        col = np.floor(np.asarray(x) / self.resolution).astype(int)
        row = np.floor(np.asarray(y) / self.resolution).astype(int)
        return row, col

    def cell_center(self, row, col):
        return ((np.asarray(col) + 0.5) * self.resolution,
                (np.asarray(row) + 0.5) * self.resolution)

    def in_bounds(self, x, y):
        return (np.asarray(x) >= 0) & (np.asarray(x) < self.width_m) & \
               (np.asarray(y) >= 0) & (np.asarray(y) < self.height_m)

    def occupied_at(self, x, y):
        """Vectorized occupancy lookup; out-of-bounds counts as occupied."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = self.in_bounds(x, y)
        row, col = self.to_cell(np.where(inside, x, 0.0), np.where(inside, y, 0.0))
        return np.where(inside, self.cells[row, col] == OCCUPIED, True)

    def is_free(self, x: float, y: float) -> bool:
        return not bool(self.occupied_at(x, y))


def step_kinematics(pose: Pose2D, cmd: tuple[float, float], dt: float,
                    world: WorldMap | None = None,
                    v_max: float = V_MAX, w_max: float = W_MAX) -> tuple[Pose2D, bool]:
    """Integrate a unicycle for ``dt`` seconds with clamped (v, w).

    Returns ``(pose, blocked)``. When a collision is found along the arc the
    last free sub-step pose is returned with ``blocked=True``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = float(np.clip(cmd[0], -v_max, v_max))
    w = float(np.clip(cmd[1], -w_max, w_max))

    def at(t: float) -> Pose2D:
        th = pose.theta
        if abs(w) < 1e-12:
            return Pose2D(pose.x + v * t * math.cos(th), pose.y + v * t * math.sin(th),
                          wrap_angle(th))
        r = v / w
        return Pose2D(pose.x + r * (math.sin(th + w * t) - math.sin(th)),
                      pose.y - r * (math.cos(th + w * t) - math.cos(th)),
                      wrap_angle(th + w * t))

    if world is None:
        return at(dt), False

    n_sub = max(1, int(math.ceil(abs(v) * dt / (world.resolution / 2))))
    last = pose
    for k in range(1, n_sub + 1):
        nxt = at(dt * k / n_sub)
        if not world.is_free(nxt.x, nxt.y):
            return last, True
        last = nxt
    return last, False


def cast_lidar(world: WorldMap, pose: Pose2D, spec: SensorSpec,
               rng: np.random.Generator | None = None) -> LidarScan:
    if not world.is_free(pose.x, pose.y):
        raise PoseInsideObstacle(f"lidar origin ({pose.x:.3f}, {pose.y:.3f}) is not free")
    angles = pose.theta + spec.beam_angles()
    step = world.resolution / 2
    n = int(math.ceil(spec.range_max / step))
    t = step * np.arange(1, n + 1)
    t[-1] = min(t[-1], spec.range_max)
    xs = pose.x + np.outer(np.cos(angles), t)
    ys = pose.y + np.outer(np.sin(angles), t)
    occ = world.occupied_at(xs, ys)
    hit = occ.any(axis=1)
    first = occ.argmax(axis=1)
    # the boundary lies in (t[k-1], t[k]]; report the midpoint
    ranges = np.where(hit, t[first] - step / 2, spec.range_max)
    if rng is not None and spec.range_noise_sigma > 0:
        noise = rng.normal(0.0, spec.range_noise_sigma, size=ranges.shape)
        ranges = np.where(hit, np.clip(ranges + noise, 0.0, spec.range_max), ranges)
    return LidarScan(pose, angles, ranges, hit, spec.range_max)


def sample_rssi(channel: RssiChannel, tx: Pose2D, rx: Pose2D,
                rng: np.random.Generator | None = None) -> float:
    mean = channel.mean_rssi(tx.distance_to(rx))
    if rng is None or channel.shadowing_sigma_db == 0:
        return mean
    return mean + float(rng.normal(0.0, channel.shadowing_sigma_db))


# ---------------------------------------------------------------------------
# world files

def _pgm_tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping comments, and the offset after each."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i:i + 1]
        if c == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
                j += 1
            yield data[i:j], j
            i = j


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a P2/P5 PGM into a uint16 array with row 0 at the *top* of the image."""
    data = Path(path).read_bytes()
    toks = _pgm_tokens(data)
    try:
        magic, _ = next(toks)
        w, _ = next(toks)
        h, _ = next(toks)
        maxval, end = next(toks)
    except StopIteration:
        raise WorldFormatError(f"{path}: truncated PGM header") from None
    w, h, maxval = int(w), int(h), int(maxval)
    if magic == b"P5":
        body = data[end + 1:]
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        arr = np.frombuffer(body, dtype=dtype, count=w * h)
    elif magic == b"P2":
        vals = [int(tok) for tok, _ in toks]
        if len(vals) < w * h:
            raise WorldFormatError(f"{path}: expected {w * h} pixels, got {len(vals)}")
        arr = np.array(vals[:w * h])
    else:
        raise WorldFormatError(f"{path}: unsupported PGM magic {magic!r}")
    return arr.reshape(h, w).astype(np.uint16)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Write a binary P5 PGM; ``image`` row 0 is the top row, values 0-255."""
    img = np.clip(np.asarray(image), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def load_world(path: str | Path, resolution: float) -> WorldMap:
    """Load a PGM (0 occupied, 255 free; darker than mid-gray is occupied) or ASCII grid."""
    path = Path(path)
    head = path.read_bytes()[:2]
    if head in (b"P2", b"P5"):
        img = read_pgm(path)
        cells = (img < 128).astype(np.uint8)
    else:
        lines = [ln.rstrip("\n\r") for ln in path.read_text().splitlines()]
        lines = [ln for ln in lines if ln.strip()]
        if not lines:
            raise WorldFormatError(f"{path}: empty grid")
        width = max(len(ln) for ln in lines)
        cells = np.ones((len(lines), width), dtype=np.uint8)
        for r, ln in enumerate(lines):
            for c, ch in enumerate(ln):
                if ch == ".":
                    cells[r, c] = FREE
                elif ch != "#":
                    raise WorldFormatError(f"{path}:{r + 1}: unexpected character {ch!r}")
    # files store the top row first; the grid stores y increasing with row
    return WorldMap(cells[::-1].copy(), resolution, name=path.stem)


def world_to_image(world: WorldMap) -> np.ndarray:
    return np.where(world.cells[::-1] == OCCUPIED, 0, 255).astype(np.uint8)


def _rect_world(width_m, height_m, resolution, rects, name) -> WorldMap:
    h = int(round(height_m / resolution))
    w = int(round(width_m / resolution))
    cells = np.zeros((h, w), dtype=np.uint8)
    for x0, y0, x1, y1 in rects:
        c0, c1 = int(math.floor(x0 / resolution + 1e-9)), int(math.ceil(x1 / resolution - 1e-9))
        r0, r1 = int(math.floor(y0 / resolution + 1e-9)), int(math.ceil(y1 / resolution - 1e-9))
        cells[max(r0, 0):min(r1, h), max(c0, 0):min(c1, w)] = OCCUPIED
    return WorldMap(cells, resolution, name=name)


def bookstore_world(resolution: float = 0.2) -> WorldMap:
    """20 x 20 m shop floor: two columns of shelf rows, a counter and pillars."""
    shelves = []
    for y in (4.0, 8.0, 12.0):
        shelves.append((3.0, y, 8.0, y + 0.6))
        shelves.append((12.0, y, 17.0, y + 0.6))
    shelves += [
        (8.0, 15.6, 12.0, 16.2),   # counter
        (4.4, 16.4, 5.0, 17.0),    # pillars
        (15.0, 16.4, 15.6, 17.0),
        (0.0, 18.4, 2.0, 20.0),    # corner storage
    ]
    return _rect_world(20.0, 20.0, resolution, shelves, "bookstore")


def house_world(resolution: float = 0.2) -> WorldMap:
    """20 x 20 m house: four rooms off a central corridor, 1.2 m doorways."""
    t = 0.2
    walls = [
        # corridor walls along y = 8 and y = 12 with doorways
        (0.0, 8.0, 3.0, 8.0 + t), (4.2, 8.0, 13.0, 8.0 + t), (14.2, 8.0, 20.0, 8.0 + t),
        (0.0, 12.0, 5.0, 12.0 + t), (6.2, 12.0, 15.0, 12.0 + t), (16.2, 12.0, 20.0, 12.0 + t),
        # room dividers
        (10.0, 0.0, 10.0 + t, 8.0),
        (9.0, 12.0, 9.0 + t, 20.0),
        # furniture
        (2.0, 2.0, 4.0, 3.0), (14.0, 3.0, 17.0, 4.0), (3.0, 16.0, 5.0, 17.5),
        (13.0, 15.0, 14.0, 18.0),
    ]
    return _rect_world(20.0, 20.0, resolution, walls, "house")


BUILTIN_WORLDS = {"bookstore": bookstore_world, "house": house_world}

DEFAULT_STARTS = {
    "bookstore": [Pose2D(9.0, 1.5, math.pi / 2), Pose2D(10.0, 1.5, math.pi / 2),
                  Pose2D(11.0, 1.5, math.pi / 2), Pose2D(9.0, 2.5, math.pi / 2),
                  Pose2D(10.0, 2.5, math.pi / 2), Pose2D(11.0, 2.5, math.pi / 2)],
    "house": [Pose2D(9.0, 10.0, 0.0), Pose2D(10.0, 10.0, 0.0), Pose2D(11.0, 10.0, 0.0),
              Pose2D(9.0, 10.8, math.pi), Pose2D(10.0, 10.8, math.pi),
              Pose2D(11.0, 10.8, math.pi)],
}
