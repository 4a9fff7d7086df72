import json

import numpy as np
import pytest

from lightjdt.cli import SWEEP_RESOLUTIONS, main
from lightjdt.model import load_checkpoint

TINY_MODEL = {"channels": 8, "heads": 2, "encoder_layers": 1, "decoder_layers": 1, "num_queries": 4}


@pytest.fixture
def tiny_model_json(tmp_path):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(TINY_MODEL))
    return str(p)


def test_help_and_usage_exit_codes(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 1
    assert main(["nope"]) == 1
    assert main(["profile", "toy_model", "--input", "12by4"]) == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", ["profile", "sweep", "synth", "train", "track", "eval"])
def test_every_command_documents_seed(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    assert "--seed" in capsys.readouterr().out


def test_profile_toy_with_counter(tmp_path, capsys):
    assert main(["profile", "toy_model", "--instrumented", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "matches analytic total" in out and "74,902" in out
    assert (tmp_path / "toy_model_profile.csv").read_text().startswith("layer,group,params,macs")


def test_profile_proposed_reports_encoder_share(capsys):
    assert main(["profile", "proposed_model", "--input", "800x1333"]) == 0
    assert "encoder" in capsys.readouterr().out


def test_profile_graph_errors(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text('{"name": "empty", "input_shape": [3, 8, 8], "layers": []}\n')
    assert main(["profile", str(empty)]) == 2
    assert main(["profile", str(tmp_path / "missing.json")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["profile", str(broken)]) == 2


def test_sweep_two_graphs_fourteen_rows(tmp_path):
    out, svg = tmp_path / "sweep.csv", tmp_path / "sweep.svg"
    assert main(["sweep", "resnet50", "pvt_v2_b1", "--out", str(out), "--svg", str(svg)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "graph,H,W,macs,ratio" and len(rows) == 15
    last = rows[-1].split(",")
    assert last[0] == "pvt_v2_b1" and (int(last[1]), int(last[2])) == SWEEP_RESOLUTIONS[-1]
    assert 0.35 <= float(last[4]) <= 0.65
    assert svg.read_text().startswith("<svg")


def test_sweep_single_resolution(capsys):
    assert main(["sweep", "toy_backbone", "--resolutions", "64x64"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_synth_train_track_eval_pipeline(tmp_path, tiny_model_json, capsys):
    data = tmp_path / "seq"
    assert main(["synth", str(data), "--length", "4", "--seed", "3"]) == 0
    assert len(list((data / "frames").glob("*.ljt"))) == 4
    scene = data / "scene.json"
    ckpt, curve = tmp_path / "m.npz", tmp_path / "loss.csv"
    assert main(["train", "--scene", str(scene), "--model", tiny_model_json, "--frames", "4", "--epochs", "2",
                 "--batch-size", "2", "--out", str(ckpt), "--loss-csv", str(curve)]) == 0
    assert curve.read_text().splitlines()[0] == "epoch,loss" and len(curve.read_text().splitlines()) == 3
    result = tmp_path / "result.txt"
    assert main(["track", str(ckpt), str(data / "frames"), "--out", str(result), "--score-threshold", "0.0"]) == 0
    assert result.exists()
    assert main(["eval", str(data / "gt.txt"), str(result)]) == 0
    assert main(["eval", str(data / "gt.txt"), str(data / "gt.txt"), "--csv", str(tmp_path / "r.csv")]) == 0
    assert "100.00" in capsys.readouterr().out
    assert (tmp_path / "r.csv").read_text().splitlines()[-1].endswith("1.000000")


def test_train_deterministic_under_seed(tmp_path, tiny_model_json):
    paths = []
    for k in range(2):
        p = tmp_path / f"m{k}.npz"
        assert main(["train", "--model", tiny_model_json, "--frames", "4", "--epochs", "1", "--batch-size", "2",
                     "--seed", "9", "--out", str(p)]) == 0
        paths.append(p)
    a, b = (load_checkpoint(p)[0].state_dict() for p in paths)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_synth_deterministic_under_seed(tmp_path):
    for k in range(2):
        assert main(["synth", str(tmp_path / f"s{k}"), "--length", "3", "--seed", "4"]) == 0
    a = sorted((tmp_path / "s0" / "frames").iterdir())
    b = sorted((tmp_path / "s1" / "frames").iterdir())
    assert [x.read_bytes() for x in a] == [y.read_bytes() for y in b]
    assert (tmp_path / "s0" / "gt.txt").read_text() == (tmp_path / "s1" / "gt.txt").read_text()


def test_data_errors(tmp_path, tiny_model_json):
    bad_scene = tmp_path / "scene.json"
    bad_scene.write_text('{"height": 50}')
    assert main(["synth", str(tmp_path / "x"), "--config", str(bad_scene)]) == 2
    assert main(["train", "--scene", str(bad_scene), "--model", tiny_model_json]) == 2
    assert main(["train", "--scene", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.txt"
    bad.write_text("1,1,x\n")
    assert main(["eval", str(bad), str(bad)]) == 2
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert main(["eval", str(empty), str(empty)]) == 2
    assert main(["track", str(tmp_path / "none.npz"), str(tmp_path)]) == 2
    (tmp_path / "frames").mkdir()
    ckpt = tmp_path / "m.npz"
    main(["train", "--model", tiny_model_json, "--frames", "2", "--epochs", "0", "--out", str(ckpt)])
    assert main(["track", str(ckpt), str(tmp_path / "frames")]) == 2


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "lightjdt", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "profile" in res.stdout
