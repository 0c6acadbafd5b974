import json
import subprocess
import sys

import numpy as np
import pytest

from lgnn.analysis import HeatMap, read_pnm
from lgnn.cli import main
from lgnn.data import encode_records, synthetic_blobs

TINY = {"name": "mini_vgg", "cfg": [16, "M", 64, "M"]}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {"arch": TINY, "epochs": 1, "batch_size": 16, "output_dir": str(root / "run"),
           "data": {"kind": "synthetic", "classes": 3, "per_class": 8, "test_per_class": 4,
                    "seed": 0}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(root / "cfg.json")]) == 0
    return root / "run"


def test_train_outputs(run_dir):
    assert {p.name for p in run_dir.iterdir()} >= {"config.json", "metrics.csv", "init.ckpt",
                                                     "best.ckpt", "final.ckpt"}


def test_eval_prints_accuracy(run_dir, capsys):
    assert main(["eval", "--ckpt", str(run_dir / "final.ckpt"), "--split", "test"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy ") and "12 images" in out


def test_eval_on_cifar_directory(tmp_path, capsys):
    data = tmp_path / "cifar"
    data.mkdir()
    (data / "train.bin").write_bytes(encode_records(synthetic_blobs(4, 3, seed=0)))
    (data / "test.bin").write_bytes(encode_records(synthetic_blobs(4, 2, seed=1, split="test")))
    cfg = {"epochs": 0, "output_dir": str(tmp_path / "run"),
           "data": {"kind": "cifar100", "path": str(data), "strict": False}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "c.json")]) == 0
    ckpt = str(tmp_path / "run" / "init.ckpt")
    assert main(["eval", "--ckpt", ckpt, "--data", str(data), "--split", "test"]) == 0
    assert "8 images" in capsys.readouterr().out
    (data / "test.bin").unlink()
    assert main(["eval", "--ckpt", ckpt, "--data", str(data), "--split", "test"]) == 1
    assert capsys.readouterr().err.count("\n") == 1


def test_gram_rows_give_three_heatmaps(run_dir, capsys):
    assert main(["analyze", "gram", "--ckpt", str(run_dir / "final.ckpt"), "--rows", "0,2,4"]) == 0
    files = sorted((run_dir / "analysis").glob("gram_conv2_row*.csv"))
    assert [f.name for f in files] == [f"gram_conv2_row{r}.csv" for r in (0, 2, 4)]
    hm = HeatMap.from_csv(files[1])
    assert hm.grid.shape == (8, 8) and hm.row == 2 and hm.grid[0, 2] == 0


def test_magnitudes_csv_has_three_numbers(run_dir):
    assert main(["analyze", "magnitudes", "--ckpt", str(run_dir / "final.ckpt"),
                 "--layer", "conv1"]) == 0
    header, row = (run_dir / "analysis" / "magnitudes_conv1.csv").read_text().splitlines()
    assert header == "min,max,stddev_of_log"
    lo, hi, sd = map(float, row.split(","))
    assert 0 < lo <= hi and sd >= 0


def test_activations_for_named_class(run_dir):
    assert main(["analyze", "activations", "--ckpt", str(run_dir / "final.ckpt"),
                 "--class", "blob1", "--pgm"]) == 0
    hm = HeatMap.from_csv(run_dir / "analysis" / "activation_conv2_blob1.csv")
    assert hm.grid.shape == (8, 8) and np.all(hm.grid >= 0)
    pix, _ = read_pnm(run_dir / "analysis" / "activation_conv2_blob1.pgm")
    assert pix.shape == (8, 8)


def test_filters_maximize_neighbors(run_dir, capsys):
    ckpt = str(run_dir / "final.ckpt")
    assert main(["analyze", "filters", "--ckpt", ckpt]) == 0
    pix, _ = read_pnm(run_dir / "analysis" / "filters_conv1.ppm")
    assert pix.shape == (15, 15, 3)
    assert main(["analyze", "maximize", "--ckpt", ckpt, "--steps", "3", "--channel", "5"]) == 0
    assert read_pnm(run_dir / "analysis" / "maximize_conv2_ch5.ppm")[0].shape == (32, 32, 3)
    assert main(["analyze", "neighbors", "--ckpt", ckpt]) == 0
    assert "neighbor_similarity" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["analyze", "gram", "--layer", "conv7"],
    ["analyze", "gram", "--rows", "99"],
    ["analyze", "activations"],
    ["analyze", "activations", "--class", "no_such_class"],
    ["analyze", "maximize", "--channel", "64", "--steps", "1"],
])
def test_analysis_errors_are_one_line(run_dir, capsys, argv):
    assert main(argv + ["--ckpt", str(run_dir / "final.ckpt")]) != 0
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "error" in err


def test_unknown_subcommand_and_missing_files(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["analyze", "histogram", "--ckpt", "x"])
    assert exc.value.code != 0
    assert main(["eval", "--ckpt", str(tmp_path / "missing.ckpt")]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    (tmp_path / "bad.json").write_text('{"epochs": 1, "colour": "blue"}')
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == 1
    assert "colour" in capsys.readouterr().err


def test_som_demo(tmp_path, capsys):
    assert main(["som-demo", "--epochs", "5", "--seed", "2", "--out", str(tmp_path / "p.csv")]) == 0
    ratio = float(capsys.readouterr().out.split()[1])
    assert 0 < ratio <= 0.5
    assert np.loadtxt(tmp_path / "p.csv", delimiter=",", skiprows=1).shape == (64, 2)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lgnn", "som-demo", "--epochs", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("topographic_ratio")
    proc = subprocess.run([sys.executable, "-m", "lgnn", "eval", "--ckpt", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode != 0 and len(proc.stderr.strip().splitlines()) == 1
