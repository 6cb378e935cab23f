import json

from seal.cli import main


def test_run_and_compare(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", "bookstore", "--seed", "1", "--steps", "4",
                 "--out", str(a)]) == 0
    assert main(["run", "--scenario", "bookstore", "--seed", "1", "--steps", "4",
                 "--out", str(b), "--baseline", "frontier", "--robots", "2"]) == 0
    for name in ("metrics.json", "trajectory.csv", "explored.csv", "events.log",
                 "map_0.pgm", "belief_0.pgm"):
        assert (a / name).exists()
    doc = json.loads((b / "metrics.json").read_text())
    assert doc["mode"] == "frontier" and doc["steps"] == 4 and len(doc["per_robot"]) == 2
    capsys.readouterr()
    assert main(["compare", "--runs", f"{a},{b}"]) == 0
    out = capsys.readouterr().out
    assert "Map SSIM" in out and "a" in out.splitlines()[0]


def test_bad_inputs_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("robots = many\n")
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 1" in capsys.readouterr().err
    assert main(["run", "--scenario", str(tmp_path / "missing.cfg"),
                 "--out", str(tmp_path / "o")]) == 2
    inside = tmp_path / "inside.cfg"
    inside.write_text("world = bookstore\nrobots = 1\nstart.0 = 0.05 0.05 0\n")
    assert main(["run", "--scenario", str(inside), "--out", str(tmp_path / "o")]) == 2
    assert "obstacle" in capsys.readouterr().err
