import pytest

from seal.config import ConfigError, default_scenario, load_scenario, parse_scenario
from seal.world import Pose2D


def test_parse_basic():
    cfg = parse_scenario("""
        # comment
        world = house
        robots = 2
        start.0 = 1.0 2.0 0.5
        start.1 = 3, 4          # theta defaults to 0
        channel.shadowing_sigma_db = 3.5
        access_point = 5 5
        baseline = frontier
    """)
    assert cfg.world == "house" and cfg.robots == 2
    assert cfg.starts == [Pose2D(1.0, 2.0, 0.5), Pose2D(3.0, 4.0, 0.0)]
    assert cfg.channel.shadowing_sigma_db == 3.5
    assert cfg.access_point == (5.0, 5.0)
    assert cfg.mode == "frontier"


@pytest.mark.parametrize("text, line", [
    ("robots = 2\nnot a pair", 2),
    ("seed = seven", 1),
    ("\n\nbogus = 1", 3),
    ("sensor.nonsense = 1", 1),
    ("start.0 = 1 2 3 4", 1),
    ("baseline = magic", 1),
])
def test_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_scenario(text)


def test_validation():
    with pytest.raises(ConfigError):
        parse_scenario("robots = 0")
    with pytest.raises(ConfigError):
        parse_scenario("theta = 1.5")
    with pytest.raises(ConfigError):
        parse_scenario("start.1 = 1 1 0")


def test_missing_start_pose():
    cfg = parse_scenario("world = bookstore\nrobots = 9")
    with pytest.raises(ConfigError, match="start"):
        cfg.start_poses()


def test_load_relative_world(tmp_path):
    (tmp_path / "room.txt").write_text("#####\n#...#\n#####\n")
    (tmp_path / "s.cfg").write_text("world = room.txt\nrobots = 1\nstart.0 = 0.5 0.5 0\n")
    cfg = load_scenario(tmp_path / "s.cfg")
    assert cfg.world == str((tmp_path / "room.txt").resolve())


def test_default_scenario_overrides():
    cfg = default_scenario("bookstore", seed=3)
    assert cfg.seed == 3 and cfg.access_point is not None
    with pytest.raises(ConfigError):
        default_scenario("bookstore", nonsense=1)


def test_shipped_scenarios_parse():
    from pathlib import Path
    for path in sorted((Path(__file__).parent.parent / "scenarios").glob("*.cfg")):
        cfg = load_scenario(path)
        assert len(cfg.start_poses()) == cfg.robots
