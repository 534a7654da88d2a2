import numpy as np
import pytest

from conftest import tiny_config_text
from pagnet import fileio
from pagnet.cli import main, parse_data_spec
from pagnet.data import gen_dataset


def _files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text(tiny_config_text(policy="PAG", multipool="hard"))
    return path


@pytest.fixture
def trained(tmp_path, config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out)]) == 0
    return out


class TestDataSpec:
    def test_defaults(self):
        assert parse_data_spec("ramp-depth", 7, 3) == ("ramp-depth", 7, 3)

    def test_full(self):
        assert parse_data_spec("facet-normal:5:9", 7, 3) == ("facet-normal", 5, 9)

    @pytest.mark.parametrize("text", ["cats", "ramp-depth:1:2:3", "ramp-depth:x"])
    def test_bad_specs_raise(self, text):
        with pytest.raises(ValueError):
            parse_data_spec(text, 1, 0)


class TestTrainEval:
    def test_train_writes_checkpoint_and_metrics(self, trained):
        assert (trained / "metrics.csv").exists()
        assert (trained / "checkpoint" / "manifest.txt").exists()

    def test_train_is_byte_identical(self, tmp_path, config, trained):
        again = tmp_path / "again"
        main(["train", "--config", str(config), "--out", str(again)])
        assert _files(trained) == _files(again)

    def test_seed_environment_changes_train(self, tmp_path, config, trained, monkeypatch):
        monkeypatch.setenv("PAG_SEED", "5")
        other = tmp_path / "other"
        main(["train", "--config", str(config), "--out", str(other)])
        a = (trained / "metrics.csv").read_bytes()
        assert a != (other / "metrics.csv").read_bytes()

    def test_eval_is_byte_identical(self, tmp_path, trained, capsys):
        outs = []
        for name in ("e1", "e2"):
            code = main(["eval", "--checkpoint", str(trained), "--data", "shapes-semantic:3:4",
                         "--out", str(tmp_path / name)])
            assert code == 0
            outs.append(_files(tmp_path / name))
        assert outs[0] == outs[1]
        assert {"eval.csv", "flops.csv", "ponder_0000.pgm", "multipool_0000.pgm"} <= set(outs[0])
        assert capsys.readouterr().out.startswith("metric,value\n")

    def test_eval_accepts_checkpoint_dir(self, tmp_path, trained):
        assert main(["eval", "--checkpoint", str(trained / "checkpoint"),
                     "--data", "shapes-semantic:2", "--out", str(tmp_path / "e")]) == 0

    def test_eval_wrong_task_fails(self, tmp_path, trained, capsys):
        code = main(["eval", "--checkpoint", str(trained), "--data", "ramp-depth:2",
                     "--out", str(tmp_path / "e")])
        assert code == 2
        assert "ramp-depth" in capsys.readouterr().err

    def test_missing_config_fails(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "none.txt")]) == 2

    def test_unknown_key_fails_before_training(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("depht = 3\n")
        assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()


class TestPonder:
    def test_ponder_is_byte_identical(self, tmp_path, trained):
        img = gen_dataset("shapes-semantic", 12, 1, 0, "eval").images[0]
        fileio.write_ptsr(tmp_path / "img.ptsr", img)
        for name in ("a.pgm", "b.pgm"):
            assert main(["ponder", "--checkpoint", str(trained), "--image",
                         str(tmp_path / "img.ptsr"), "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a.pgm").read_bytes()
        assert a == (tmp_path / "b.pgm").read_bytes()
        assert fileio.read_pnm(tmp_path / "a.pgm").shape == (6, 6)

    def test_dense_checkpoint_has_no_ponder_map(self, tmp_path):
        cfg = tmp_path / "dense.txt"
        cfg.write_text(tiny_config_text(policy="Dense"))
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "d")])
        fileio.write_ptsr(tmp_path / "img.ptsr", np.zeros((3, 8, 8)))
        assert main(["ponder", "--checkpoint", str(tmp_path / "d"), "--image",
                     str(tmp_path / "img.ptsr"), "--out", str(tmp_path / "p.pgm")]) == 2

    def test_bad_image_shape_fails(self, tmp_path, trained):
        fileio.write_ptsr(tmp_path / "img.ptsr", np.zeros((8, 8)))
        assert main(["ponder", "--checkpoint", str(trained), "--image",
                     str(tmp_path / "img.ptsr"), "--out", str(tmp_path / "p.pgm")]) == 2


class TestCompare:
    def test_compare_is_byte_identical(self, tmp_path):
        cfg = tmp_path / "cmp.txt"
        cfg.write_text(tiny_config_text() + "budgets = 0.9,0.6\npolicies = Dense,Truncated,PAG\n")
        for name in ("a.csv", "b.csv"):
            assert main(["compare", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        a = (tmp_path / "a.csv").read_text()
        assert a == (tmp_path / "b.csv").read_text()
        assert len(a.splitlines()) == 1 + 1 + 2 + 2


class TestPano:
    def test_round_trip_and_ppm(self, tmp_path, rng):
        n = rng.normal(size=(3, 4, 16))
        n /= np.linalg.norm(n, axis=0, keepdims=True)
        fileio.write_ptsr(tmp_path / "g.ptsr", n)
        assert main(["pano-normals", "--in", str(tmp_path / "g.ptsr"), "--canonical-column", "3",
                     "--out", str(tmp_path / "l.ptsr"), "--ppm", str(tmp_path / "l.ppm")]) == 0
        local = fileio.read_ptsr(tmp_path / "l.ptsr")
        np.testing.assert_array_equal(local[2], n[2])
        assert fileio.read_pnm(tmp_path / "l.ppm").shape == (4, 16, 3)
        first = (tmp_path / "l.ppm").read_bytes()
        main(["pano-normals", "--in", str(tmp_path / "g.ptsr"), "--canonical-column", "3",
              "--out", str(tmp_path / "l.ptsr"), "--ppm", str(tmp_path / "l.ppm")])
        assert (tmp_path / "l.ppm").read_bytes() == first

    def test_non_unit_input_fails(self, tmp_path):
        fileio.write_ptsr(tmp_path / "g.ptsr", np.full((3, 2, 4), 0.5))
        assert main(["pano-normals", "--in", str(tmp_path / "g.ptsr"), "--canonical-column", "0",
                     "--out", str(tmp_path / "l.ptsr")]) == 2

    def test_missing_input_fails(self, tmp_path):
        assert main(["pano-normals", "--in", str(tmp_path / "none.ptsr"),
                     "--canonical-column", "0", "--out", str(tmp_path / "l.ptsr")]) == 2


def test_unknown_command_exits():
    with pytest.raises(SystemExit):
        main(["fly"])
