import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seal.world import (OCCUPIED, Pose2D, PoseInsideObstacle, RssiChannel, SensorSpec,
                        WorldFormatError, WorldMap, bookstore_world, cast_lidar, house_world,
                        load_world, read_pgm, sample_rssi, step_kinematics, world_to_image,
                        wrap_angle, write_pgm)

from conftest import box_world


def test_straight_line_at_clamp():
    p, blocked = step_kinematics(Pose2D(0, 0, 0), (0.2, 0.0), 1.0)
    assert not blocked
    assert (p.x, p.y, p.theta) == pytest.approx((0.2, 0.0, 0.0))


def test_speed_clamped():
    p, _ = step_kinematics(Pose2D(0, 0, 0), (5.0, 0.0), 1.0)
    assert (p.x, p.y) == pytest.approx((0.2, 0.0))
    p, _ = step_kinematics(Pose2D(0, 0, 0), (0.0, 5.0), 1.0)
    assert p.theta == pytest.approx(0.8)


def test_arc_matches_closed_form():
    p, _ = step_kinematics(Pose2D(0, 0, math.pi / 2), (0.1, 0.8), 0.5)
    assert p.theta == pytest.approx(math.pi / 2 + 0.4)
    r = 0.1 / 0.8
    # closed-form unicycle arc
    assert p.x == pytest.approx(r * (math.sin(math.pi / 2 + 0.4) - 1.0))
    assert p.y == pytest.approx(-r * (math.cos(math.pi / 2 + 0.4) - 0.0))


def test_blocked_motion_stops_at_last_free_pose():
    world = box_world(rects=[(3.0, 0.0, 3.4, 10.0)])
    start = Pose2D(2.9, 5.0, 0.0)
    p, blocked = step_kinematics(start, (0.2, 0.0), 1.0, world)
    assert blocked
    assert world.is_free(p.x, p.y)
    assert p.x < 3.0


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0.3, 9.7), y=st.floats(0.3, 9.7), th=st.floats(-math.pi, math.pi),
       v=st.floats(-1, 1), w=st.floats(-2, 2))
def test_kinematics_never_enters_obstacle(x, y, th, v, w):
    world = box_world(rects=[(4.0, 4.0, 6.0, 6.0)])
    start = Pose2D(x, y, th)
    if not world.is_free(x, y):
        return
    p, _ = step_kinematics(start, (v, w), 1.0, world)
    assert world.is_free(p.x, p.y)
    assert -math.pi < p.theta <= math.pi


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


def test_empty_world_beams_miss():
    world = box_world(20.0, 20.0)
    spec = SensorSpec(range_noise_sigma=0.0)
    scan = cast_lidar(world, Pose2D(10.0, 10.0, 0.3), spec)
    assert len(scan.ranges) == spec.beam_count
    assert not scan.hit.any()
    assert np.all(scan.ranges == spec.range_max)


def test_wall_range_within_half_cell():
    world = box_world(rects=[(7.0, 0.0, 7.4, 10.0)])
    spec = SensorSpec(fov=1e-3, beam_count=1, range_noise_sigma=0.0)
    scan = cast_lidar(world, Pose2D(5.0, 5.0, 0.0), spec)
    assert scan.hit[0]
    assert abs(scan.ranges[0] - 2.0) <= world.resolution / 2


@settings(max_examples=60, deadline=None)
@given(x=st.floats(1.0, 6.0), y=st.floats(1.0, 9.0), th=st.floats(-1.2, 1.2))
def test_zero_noise_ranges_match_geometry(x, y, th):
    # analytic oracle: the wall face x = 7 is hit at (7 - x) / cos(th)
    world = box_world(rects=[(7.0, 0.0, 7.4, 10.0)])
    spec = SensorSpec(fov=1e-3, beam_count=1, range_noise_sigma=0.0, range_max=20.0)
    scan = cast_lidar(world, Pose2D(x, y, th), spec)
    exact = (7.0 - x) / math.cos(th)
    ey = y + exact * math.sin(th)
    if not 0.4 < ey < 9.6 or exact > 20:
        return
    assert scan.hit[0]
    # the march resolves the boundary to half a step along the ray
    assert abs(scan.ranges[0] - exact) <= world.resolution / 2 + 1e-9


def test_lidar_deterministic_and_noisy_in_range():
    world = bookstore_world()
    spec = SensorSpec()
    a = cast_lidar(world, Pose2D(10.0, 2.0, 1.0), spec, np.random.default_rng(3))
    b = cast_lidar(world, Pose2D(10.0, 2.0, 1.0), spec, np.random.default_rng(3))
    np.testing.assert_array_equal(a.ranges, b.ranges)
    assert np.all((a.ranges[a.hit] > 0) & (a.ranges[a.hit] <= spec.range_max))


def test_lidar_inside_obstacle_raises():
    world = box_world(rects=[(4.0, 4.0, 6.0, 6.0)])
    with pytest.raises(PoseInsideObstacle):
        cast_lidar(world, Pose2D(5.0, 5.0, 0.0), SensorSpec())


def test_rssi_formula():
    ch = RssiChannel(-40.0, 1.0, 2.0, 0.0)
    assert sample_rssi(ch, Pose2D(0, 0, 0), Pose2D(1, 0, 0)) == pytest.approx(-40.0)
    assert sample_rssi(ch, Pose2D(0, 0, 0), Pose2D(10, 0, 0)) == pytest.approx(-60.0)
    assert sample_rssi(ch, Pose2D(0, 0, 0), Pose2D(100, 0, 0)) == pytest.approx(-80.0)
    # closer than d0 floors at the reference power
    assert sample_rssi(ch, Pose2D(0, 0, 0), Pose2D(0.1, 0, 0)) == pytest.approx(-40.0)


@given(d=st.lists(st.integers(10, 2000), min_size=2, max_size=10, unique=True))
def test_rssi_strictly_decreasing(d):
    ch = RssiChannel(shadowing_sigma_db=0.0)
    d = sorted(x / 10 for x in d)
    vals = [sample_rssi(ch, Pose2D(0, 0, 0), Pose2D(x, 0, 0)) for x in d]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_rssi_shadowing_statistics():
    ch = RssiChannel(shadowing_sigma_db=2.0)
    rng = np.random.default_rng(0)
    s = np.array([sample_rssi(ch, Pose2D(0, 0, 0), Pose2D(10, 0, 0), rng) for _ in range(4000)])
    assert s.mean() == pytest.approx(-60.0, abs=0.1)
    assert s.std() == pytest.approx(2.0, abs=0.1)


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        SensorSpec(beam_count=0)
    with pytest.raises(ValueError):
        SensorSpec(fov=7.0)
    with pytest.raises(ValueError):
        RssiChannel(d0=0.0)
    with pytest.raises(ValueError):
        RssiChannel(shadowing_sigma_db=-1.0)
    with pytest.raises(ValueError):
        WorldMap(np.zeros((5, 5), np.uint8), 0.0)


def test_world_boundary_closed_and_read_only():
    w = WorldMap(np.zeros((6, 6), np.uint8), 0.5)
    assert np.all(w.cells[0] == OCCUPIED) and np.all(w.cells[:, -1] == OCCUPIED)
    assert w.free_mask.sum() == 16
    with pytest.raises(ValueError):
        w.cells[2, 2] = 1


def test_cell_lookup():
    w = box_world(4.0, 4.0, 0.5)
    assert w.to_cell(1.2, 0.7) == (1, 2)
    assert w.occupied_at(-1.0, 2.0)
    assert not w.occupied_at(2.0, 2.0)


def test_pgm_round_trip(tmp_path):
    world = bookstore_world()
    path = tmp_path / "store.pgm"
    write_pgm(path, world_to_image(world))
    back = load_world(path, world.resolution)
    np.testing.assert_array_equal(back.cells, world.cells)


def test_ascii_and_p2(tmp_path):
    ascii_path = tmp_path / "room.txt"
    ascii_path.write_text("#####\n#...#\n#..##\n#####\n")
    w = load_world(ascii_path, 1.0)
    # the first text line is the top (highest y) row
    assert w.shape == (4, 5)
    assert w.is_free(1.5, 2.5) and not w.is_free(3.5, 1.5)
    p2 = tmp_path / "tiny.pgm"
    p2.write_text("P2\n# comment\n3 3\n255\n0 0 0\n0 255 0\n0 0 0\n")
    np.testing.assert_array_equal(read_pgm(p2)[1], [0, 255, 0])
    assert load_world(p2, 1.0).free_mask.sum() == 1


def test_bad_world_file(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("#x#\n")
    with pytest.raises(WorldFormatError):
        load_world(bad, 1.0)


@pytest.mark.parametrize("factory", [bookstore_world, house_world])
def test_builtin_worlds(factory):
    w = factory()
    assert w.width_m == pytest.approx(20.0) and w.height_m == pytest.approx(20.0)
    assert 0.6 < w.free_mask.mean() < 0.95
