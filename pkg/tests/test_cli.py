import json

import numpy as np
import pytest

from mvtrack.affinity import AffinityHeadParams
from mvtrack.cli import main
from mvtrack.engine import TrackerModels
from mvtrack.modelio import read_models, write_models
from mvtrack.motion import F_IN, RegressorParams
from mvtrack.stream import read_motchallenge, read_scenario


def write_script(path, frames=36, objects=None, camera=(0, 0)):
    if objects is None:
        objects = [
            {"id": 1, "x": 80, "y": 100, "w": 32, "h": 48, "vx": 3, "vy": 1},
            {"id": 2, "x": 300, "y": 200, "w": 40, "h": 40, "vx": -2},
        ]
    path.write_text(json.dumps({"frames": frames, "camera": list(camera), "objects": objects}, indent=1))
    return path


def test_models_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = 3
    models = TrackerModels(
        regressor=RegressorParams(rng.standard_normal((4 * m * m, F_IN)), rng.standard_normal(4 * m * m), m),
        affinity=AffinityHeadParams(12.345678901234567, -8.87654321, "withps"),
    )
    p = tmp_path / "models.txt"
    write_models(models, p)
    back = read_models(p)
    np.testing.assert_array_equal(back.regressor.W, models.regressor.W)
    np.testing.assert_array_equal(back.regressor.bias, models.regressor.bias)
    assert back.affinity == models.affinity
    # exact byte round trip
    p2 = tmp_path / "models2.txt"
    write_models(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_models_file_partial_sections(tmp_path):
    p = tmp_path / "models.txt"
    write_models(TrackerModels(affinity=AffinityHeadParams(3.0, -1.0, "nops")), p)
    back = read_models(p)
    assert back.regressor is None and back.affinity.mode == "nops"


def test_models_file_malformed(tmp_path):
    p = tmp_path / "models.txt"
    p.write_text("garbage\n")
    with pytest.raises(ValueError, match="magic"):
        read_models(p)


def test_generate_deterministic_and_readable(tmp_path, capsys):
    script = write_script(tmp_path / "script.json")
    out1, out2 = tmp_path / "a.scn", tmp_path / "b.scn"
    assert main(["generate", "--script", str(script), "--out", str(out1), "--seed", "7",
                 "--width", "480", "--height", "360"]) == 0
    assert main(["generate", "--script", str(script), "--out", str(out2), "--seed", "7",
                 "--width", "480", "--height", "360"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    sc = read_scenario(out1)
    assert sc.n_frames == 36
    assert "36 frames" in capsys.readouterr().out


def test_generate_bad_script_line_number(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"frames": 10,\n "objects": [}\n')
    assert main(["generate", "--script", str(bad), "--out", str(tmp_path / "x.scn")]) == 1
    assert "line" in capsys.readouterr().err


def test_generate_check_K_exit_2(tmp_path, capsys):
    script = write_script(tmp_path / "script.json")
    code = main(["generate", "--script", str(script), "--out", str(tmp_path / "x.scn"),
                 "--gop", "12", "--check-K", "5"])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_fit_track_evaluate_pipeline(tmp_path, capsys):
    # generate training + tracking scenarios, fit both models, track, evaluate
    train_script = write_script(
        tmp_path / "train.json",
        frames=25,
        objects=[
            {"id": 1, "x": 150, "y": 120, "w": 48, "h": 48, "vx": 2, "vy": 1},
            {"id": 2, "x": 320, "y": 240, "w": 48, "h": 48, "vx": -2, "vy": 0},
            {"id": 3, "x": 240, "y": 100, "w": 48, "h": 48, "vx": 0, "vy": 2},
        ],
    )
    track_script = write_script(
        tmp_path / "track.json",
        frames=36,
        objects=[
            {"id": 1, "x": 100, "y": 120, "w": 48, "h": 48, "vx": 2, "vy": 1},
            {"id": 2, "x": 360, "y": 240, "w": 48, "h": 48, "vx": -2},
        ],
    )
    train_scn = tmp_path / "train.scn"
    track_scn = tmp_path / "track.scn"
    for script, scn in ((train_script, train_scn), (track_script, track_scn)):
        assert main(["generate", "--script", str(script), "--out", str(scn),
                     "--width", "480", "--height", "360", "--seed", "3"]) == 0

    models = tmp_path / "models.txt"
    assert main(["fit", "--scenarios", str(train_scn), "--target", "regressor",
                 "--out", str(models), "--lr", "1.0", "--epochs", "200"]) == 0
    out = capsys.readouterr().out
    assert "final loss" in out
    assert main(["fit", "--scenarios", str(train_scn), "--target", "affinity",
                 "--out", str(models), "--epochs", "600", "--pairs-per-id", "10"]) == 0
    out = capsys.readouterr().out
    assert "held-out accuracy" in out
    stored = read_models(models)
    assert stored.regressor is not None and stored.affinity is not None

    results = tmp_path / "results.txt"
    timing = tmp_path / "timing.txt"
    assert main(["track", "--scenario", str(track_scn), "--models", str(models),
                 "--out", str(results), "--timing-out", str(timing), "--K", "3"]) == 0
    capsys.readouterr()
    rows = read_motchallenge(results)
    assert rows and all(len(r) == 4 for r in rows)
    assert "speedup_modeled" in timing.read_text()

    gt_file = tmp_path / "gt.txt"
    from mvtrack.stream import gt_to_rows, write_motchallenge

    write_motchallenge(gt_to_rows(read_scenario(track_scn).gt), gt_file)
    assert main(["evaluate", "--gt", str(gt_file), "--results", str(results)]) == 0
    out = capsys.readouterr().out
    header, row = out.strip().splitlines()
    assert header.split("\t")[:3] == ["MOTA", "MOTP", "IDF1"]
    mota = float(row.split("\t")[0])
    assert mota > 0.6


def test_evaluate_gt_against_itself(tmp_path, capsys):
    script = write_script(tmp_path / "s.json", frames=13)
    scn = tmp_path / "s.scn"
    assert main(["generate", "--script", str(script), "--out", str(scn),
                 "--width", "480", "--height", "360"]) == 0
    capsys.readouterr()
    from mvtrack.stream import gt_to_rows, write_motchallenge

    gt_file = tmp_path / "gt.txt"
    write_motchallenge(gt_to_rows(read_scenario(scn).gt), gt_file)
    assert main(["evaluate", "--gt", str(gt_file), "--results", str(gt_file)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[1].startswith("1.000")


def test_track_k_not_dividing_gop_exit_2(tmp_path, capsys):
    script = write_script(tmp_path / "s.json", frames=13)
    scn = tmp_path / "s.scn"
    main(["generate", "--script", str(script), "--out", str(scn), "--width", "480", "--height", "360"])
    code = main(["track", "--scenario", str(scn), "--out", str(tmp_path / "r.txt"),
                 "--K", "5", "--propagator", "bboxavg", "--assoc", "onestep", "--alpha", "1.0"])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_track_missing_models_exit_2(tmp_path, capsys):
    script = write_script(tmp_path / "s.json", frames=13)
    scn = tmp_path / "s.scn"
    main(["generate", "--script", str(script), "--out", str(scn), "--width", "480", "--height", "360"])
    code = main(["track", "--scenario", str(scn), "--out", str(tmp_path / "r.txt"), "--K", "3"])
    assert code == 2
    capsys.readouterr()


def test_fit_epochs_zero(tmp_path, capsys):
    script = write_script(tmp_path / "s.json", frames=13)
    scn = tmp_path / "s.scn"
    main(["generate", "--script", str(script), "--out", str(scn), "--width", "480", "--height", "360"])
    models = tmp_path / "m.txt"
    assert main(["fit", "--scenarios", str(scn), "--target", "regressor",
                 "--out", str(models), "--epochs", "0"]) == 0
    out = capsys.readouterr().out
    assert "final loss" in out
    stored = read_models(models)
    assert not stored.regressor.W.any()


def test_missing_file_runtime_error(tmp_path, capsys):
    assert main(["evaluate", "--gt", str(tmp_path / "none.txt"), "--results", str(tmp_path / "none.txt")]) == 1
    capsys.readouterr()


def test_bench_smoke(tmp_path, capsys):
    script = write_script(tmp_path / "s.json", frames=24)
    scn = tmp_path / "s.scn"
    main(["generate", "--script", str(script), "--out", str(scn), "--width", "480", "--height", "360"])
    capsys.readouterr()
    code = main(["bench", "--scenario", str(scn), "--K-list", "1", "2", "3",
                 "--propagator", "bboxavg", "--assoc", "onestep", "--alpha", "1.0",
                 "--detect-delay", "0.004", "--propagate-delay", "0.0004"])
    assert code == 0
    out = capsys.readouterr().out
    lines = [l for l in out.strip().splitlines() if not l.startswith("#")]
    assert lines[0].split("\t") == ["K", "MOTA", "Hz", "modeled_s", "measured_s"]
    rows = [l.split("\t") for l in lines[1:]]
    assert [r[0] for r in rows] == ["1", "2", "3"]
    hz = [float(r[2]) for r in rows]
    assert hz[0] < hz[1] < hz[2]  # sparser key frames, faster tracking


def test_bench_force_ratio_models_expected_speedup(tmp_path, capsys):
    script = write_script(tmp_path / "s.json", frames=24)
    scn = tmp_path / "s.scn"
    main(["generate", "--script", str(script), "--out", str(scn), "--width", "480", "--height", "360"])
    capsys.readouterr()
    code = main(["bench", "--scenario", str(scn), "--K-list", "3",
                 "--propagator", "bboxavg", "--assoc", "onestep", "--alpha", "1.0",
                 "--force-ratio", "0.1"])
    assert code == 0
    out = capsys.readouterr().out
    lines = [l for l in out.strip().splitlines() if not l.startswith("#")]
    modeled = float(lines[-1].split("\t")[3])
    assert modeled == pytest.approx(2.5, abs=0.1)
