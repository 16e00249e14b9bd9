import csv
import shutil

import numpy as np
import pytest

import metric_oracles as oracle
from orsisod.cli import main
from orsisod.config import SCHEMA, load_config, parse_config
from orsisod.data import load_dataset, read_gray, write_png
from orsisod.errors import ConfigError
from orsisod.rpl import ProportionBin, bin_proportion

TINY_CONFIG = """\
# small enough for unit tests
model.input_size = 32
model.batch = 2
model.channels = 4,4,4,8,8
model.decoder_channels = 4
fce.common_channels = 4
rpl.reduction_ratio = 2
pg.hidden = 4
steps = 6
train.checkpoint_every = 3
seed = 4
"""


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(out), "--count", "8", "--size", "32", "--seed", "2"]) == 0
    return out


def write_config(tmp_path, data_dir, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CONFIG + f"data_dir = {data_dir}\n" + extra, encoding="utf-8")
    return path


class TestGenData:
    def test_count_and_index(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "--count", "10", "--size", "32", "--seed", "1"]) == 0
        assert len(list(tmp_path.glob("image_*.png"))) == 10
        assert len(list(tmp_path.glob("mask_*.png"))) == 10
        rows = read_rows(tmp_path / "index.csv")
        assert len(rows) == 10
        for row in rows:
            mask = read_gray(tmp_path / row["mask"])
            assert set(np.unique(mask)) <= {0, 255}
            assert abs(float(row["proportion"]) - (mask > 127).mean()) <= 1 / mask.size

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert main(["gen-data", "--out", str(d), "--count", "5", "--size", "32", "--seed", "9"]) == 0
        for f in sorted(a.iterdir()):
            assert f.read_bytes() == (b / f.name).read_bytes()

    def test_covers_every_bin_and_category(self, tmp_path):
        main(["gen-data", "--out", str(tmp_path), "--count", "40", "--size", "64", "--seed", "0"])
        rows = read_rows(tmp_path / "index.csv")
        assert {bin_proportion(float(r["proportion"])) for r in rows} == set(ProportionBin)
        assert {"big", "small", "narrow", "multiple"} <= {r["category"] for r in rows}

    def test_unwritable_path(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["gen-data", "--out", str(blocker / "sub"), "--count", "2", "--size", "32"]) == 2
        assert str(blocker) in capsys.readouterr().err

    def test_bad_size(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path), "--count", "2", "--size", "40"]) == 1


class TestConfig:
    def test_defaults_cover_schema(self):
        cfg = parse_config("")
        assert set(cfg.values) == set(SCHEMA)
        assert parse_config(cfg.dumps()).values == cfg.values

    def test_unknown_key_names_file_and_line(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("steps = 3\nmodel.widht = 4\n")
        with pytest.raises(ConfigError, match=r"bad.cfg:2: unknown config key 'model.widht'"):
            load_config(path)
        assert main(["train-toy", "--config", str(path)]) == 1
        err = capsys.readouterr().err
        assert "bad.cfg:2" in err and "model.widht" in err

    def test_bad_value_names_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("rpl.cross_gating = maybe\n")
        with pytest.raises(ConfigError, match="rpl.cross_gating"):
            load_config(path)
        path.write_text("model.input_size = 40\n")
        with pytest.raises(ConfigError, match="model.input_size"):
            load_config(path)
        path.write_text("just words\n")
        with pytest.raises(ConfigError, match="bad.cfg:1"):
            load_config(path)

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train-toy", "--config", str(tmp_path / "absent.cfg")]) == 2
        assert "absent.cfg" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, capsys):
        cfg = write_config(tmp_path, tmp_path / "nowhere")
        assert main(["train-toy", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 2
        assert "nowhere" in capsys.readouterr().err


class TestTrainToy:
    def test_outputs_rerun_and_resume(self, tmp_path, tiny_data):
        cfg = write_config(tmp_path, tiny_data)
        run_a, run_b = tmp_path / "a", tmp_path / "b"
        assert main(["train-toy", "--config", str(cfg), "--out", str(run_a)]) == 0
        assert main(["train-toy", "--config", str(cfg), "--out", str(run_b)]) == 0

        rows = read_rows(run_a / "loss.csv")
        assert len(rows) == 6
        assert list(rows[0]) == ["step", "bce", "iou", "fm", "mse", "total"]
        assert [int(r["step"]) for r in rows] == list(range(6))
        for name in ("loss.csv", "final.bin", "ckpt_000003.bin", "ckpt_000006.bin", "summary.json"):
            assert (run_a / name).read_bytes() == (run_b / name).read_bytes(), name
        assert load_config(run_a / "config.txt").values["steps"] == 6

        resumed = tmp_path / "resumed"
        shutil.copytree(run_a, resumed)
        extra = f"train.resume = {resumed / 'ckpt_000003.bin'}\n"
        cfg_resume = write_config(tmp_path, tiny_data, extra)
        assert main(["train-toy", "--config", str(cfg_resume), "--out", str(resumed)]) == 0
        for name in ("loss.csv", "final.bin", "summary.json"):
            assert (resumed / name).read_bytes() == (run_a / name).read_bytes(), name

    def test_resume_rejects_other_architecture(self, tmp_path, tiny_data):
        cfg = write_config(tmp_path, tiny_data, "steps = 3\n")
        assert main(["train-toy", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        other = write_config(tmp_path, tiny_data, f"pg.hidden = 6\ntrain.resume = {tmp_path / 'a' / 'final.bin'}\n")
        assert main(["train-toy", "--config", str(other), "--out", str(tmp_path / "b")]) == 1


def make_maps(directory, rng, count=5, size=16):
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(count):
        g = np.zeros((size, size), dtype=np.uint8)
        y, x = rng.integers(0, size // 2, 2)
        g[y:y + size // 2, x:x + size // 3] = 255
        write_png(directory / f"img_{i}.png", g)


class TestEval:
    def test_self_evaluation(self, tmp_path, rng):
        gt = tmp_path / "gt"
        make_maps(gt, rng)
        out = tmp_path / "report.csv"
        assert main(["eval", "--pred", str(gt), "--gt", str(gt), "--out", str(out)]) == 0
        rows = read_rows(out)
        assert [r["name"] for r in rows] == [f"img_{i}.png" for i in range(5)] + ["mean"]
        mean = rows[-1]
        assert float(mean["mae"]) == pytest.approx(0.0, abs=1e-6)
        for key in ("fbeta_max", "emeasure", "smeasure"):
            assert float(mean[key]) == pytest.approx(1.0, abs=1e-6)
        curve = read_rows(tmp_path / "report_fbeta_curve.csv")
        assert len(curve) == 256

    def test_inverted_predictions(self, tmp_path, rng):
        gt, pred = tmp_path / "gt", tmp_path / "pred"
        make_maps(gt, rng)
        pred.mkdir()
        for f in gt.iterdir():
            write_png(pred / f.name, 255 - read_gray(f))
        out = tmp_path / "r.csv"
        assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(out)]) == 0
        for row in read_rows(out)[:-1]:
            g = (read_gray(gt / row["name"]) > 127).astype(float)
            s = read_gray(pred / row["name"]) / 255.0
            assert float(row["mae"]) == pytest.approx(oracle.mae(s.tolist(), g.tolist()), abs=1e-10)
            assert float(row["mae"]) == pytest.approx(1.0, abs=1e-12)

    def test_missing_counterpart(self, tmp_path, rng, capsys):
        gt = tmp_path / "gt"
        make_maps(gt, rng)
        pred = tmp_path / "pred"
        shutil.copytree(gt, pred)
        (pred / "img_2.png").unlink()
        out = tmp_path / "r.csv"
        assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(out)]) == 2
        assert len(read_rows(out)) == 4 + 1
        assert "img_2.png" in capsys.readouterr().err

    def test_resize_and_threshold_mode(self, tmp_path, rng, capsys):
        gt, pred = tmp_path / "gt", tmp_path / "pred"
        make_maps(gt, rng, count=2, size=16)
        pred.mkdir()
        for f in gt.iterdir():
            write_png(pred / f.name, read_gray(f).repeat(2, axis=0).repeat(2, axis=1))
        out = tmp_path / "r.csv"
        code = main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(out), "--threshold-mode", "adaptive"])
        captured = capsys.readouterr()
        assert code == 0
        assert "resized" in captured.err and "fbeta (adaptive)" in captured.out
        assert float(read_rows(out)[-1]["mae"]) == 0.0

    def test_byte_stable(self, tmp_path, rng):
        gt, pred = tmp_path / "gt", tmp_path / "pred"
        make_maps(gt, rng)
        pred.mkdir()
        for i, f in enumerate(sorted(gt.iterdir())):
            noise = np.random.default_rng(i).integers(0, 60, (16, 16))
            write_png(pred / f.name, np.clip(read_gray(f).astype(int) - noise, 0, 255).astype(np.uint8))
        for name in ("one.csv", "two.csv"):
            main(["eval", "--pred", str(pred), "--gt", str(gt), "--out", str(tmp_path / name)])
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()

    def test_missing_directory(self, tmp_path, capsys):
        assert main(["eval", "--pred", str(tmp_path / "no"), "--gt", str(tmp_path), "--out", str(tmp_path / "r.csv")]) == 2
        assert "no" in capsys.readouterr().err


class TestDwtRoundtrip:
    def test_valid_image(self, tmp_path, rng, capsys):
        path = tmp_path / "img.png"
        write_png(path, rng.integers(0, 256, (24, 40)).astype(np.uint8))
        assert main(["dwt-roundtrip", "--image", str(path)]) == 0
        out = capsys.readouterr().out.split()
        assert float(out[out.index("max_abs_error") + 1]) <= 1e-9
        assert float(out[out.index("energy_residual") + 1]) <= 1e-9

    def test_odd_image(self, tmp_path, capsys):
        path = tmp_path / "odd.png"
        write_png(path, np.zeros((15, 16), dtype=np.uint8))
        assert main(["dwt-roundtrip", "--image", str(path)]) == 1
        captured = capsys.readouterr()
        assert captured.out == "" and "15x16" in captured.err

    def test_missing_image(self, tmp_path, capsys):
        assert main(["dwt-roundtrip", "--image", str(tmp_path / "none.png")]) == 2
        assert "none.png" in capsys.readouterr().err


def test_gradcheck_negative_control(capsys):
    assert main(["gradcheck", "--corrupt", "conv2d_k3"]) == 1
    out = capsys.readouterr().out
    assert "FAIL  conv2d_k3" in out and "failed: conv2d_k3" in out
    assert "40/41 checks passed" in out


def test_dataset_loader(tiny_data):
    ds = load_dataset(tiny_data)
    assert ds.images.shape == (8, 3, 32, 32) and ds.masks.shape == (8, 1, 32, 32)
    assert set(np.unique(ds.masks)) <= {0.0, 1.0}
