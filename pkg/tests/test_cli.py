import json
import os

import numpy as np
import pytest

from partsdf import cli
from partsdf import meshing as mg


TINY_CONFIG = """
# tiny end-to-end settings
family=barbell
n_shapes=2
seed=3
missing_fraction=0.0
samples_per_shape=1500
epochs=200
batch_size=2
points_per_shape=512
z_dim=16
hidden=24
fit_iterations=10
fit_points_per_step=512
mesh_resolution=24
opt_iterations=2
opt_resolution=16
eval_resolution=32
eval_samples=2000
set_samples=500
eval_ic=false
interp_steps=3
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Shared make-data -> train run for the command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    data = root / "data"
    ckpt = root / "ckpt"
    assert cli.main(["make-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert cli.main(["train", "--config", str(cfg), "--data", str(data),
                     "--out", str(ckpt)]) == 0
    return root, cfg, data, ckpt


class TestParseConfig:
    def test_defaults(self):
        cfg = cli.parse_config("")
        assert cfg["epochs"] == 2000
        assert cfg["mesh_resolution"] == 256
        assert cfg["flow_direction"] == (1.0, 0.0, 0.0)

    def test_overrides_and_comments(self):
        cfg = cli.parse_config("epochs=5\n# comment\nlam=1e-3  # trailing\n")
        assert cfg["epochs"] == 5 and cfg["lam"] == 1e-3

    def test_bad_value_names_line_and_key(self):
        with pytest.raises(ValueError, match="line 1.*'epochs'"):
            cli.parse_config("epochs=abc\n")

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="line 2.*unknown key 'epoks'"):
            cli.parse_config("epochs=5\nepoks=3\n")

    def test_missing_equals(self):
        with pytest.raises(ValueError, match="key=value"):
            cli.parse_config("just a line\n")

    def test_round_trip(self):
        cfg = cli.parse_config("epochs=7\nuse_conv=false\nflow_direction=0,0,1\n")
        again = cli.parse_config(cli.serialize_config(cfg))
        assert again.values == cfg.values

    def test_bool_parsing(self):
        assert cli.parse_config("use_conv=false\n")["use_conv"] is False
        assert cli.parse_config("use_conv=TRUE\n")["use_conv"] is True
        with pytest.raises(ValueError):
            cli.parse_config("use_conv=maybe\n")


class TestMakeDataTrain:
    def test_artifacts_exist(self, pipeline):
        root, cfg, data, ckpt = pipeline
        names = sorted(os.listdir(data))
        assert "shape_0000.shape" in names and "shape_0001.psmp" in names
        assert (ckpt / "model.psdf").exists()
        assert (ckpt / "history.csv").exists()

    def test_manifest_checksums(self, pipeline):
        root, cfg, data, ckpt = pipeline
        man = json.loads((ckpt / "manifest.json").read_text())
        assert man["command"] == "train"
        assert man["seed"] == 3
        assert "model.psdf" in man["artifacts"]
        assert len(man["artifacts"]["model.psdf"]) == 64
        assert man["timings"]["total_s"] >= 0

    def test_repeat_run_byte_identical(self, pipeline, tmp_path):
        root, cfg, data, ckpt = pipeline
        out2 = tmp_path / "ckpt2"
        assert cli.main(["train", "--config", str(cfg), "--data", str(root / "data"),
                         "--out", str(out2)]) == 0
        assert (out2 / "model.psdf").read_bytes() == (ckpt / "model.psdf").read_bytes()


class TestMesh:
    def test_mesh_command(self, pipeline, tmp_path):
        root, cfg, data, ckpt = pipeline
        out = tmp_path / "mesh"
        assert cli.main(["mesh", "--config", str(cfg), "--ckpt", str(ckpt / "model.psdf"),
                         "--shape-id", "0", "--out", str(out)]) == 0
        mesh = mg.load_obj(out / "shape_0000.obj")
        assert not mesh.is_empty()
        assert np.all(np.abs(mesh.vertices) <= 1.0)

    def test_parts_groups(self, pipeline, tmp_path):
        root, cfg, data, ckpt = pipeline
        out = tmp_path / "meshp"
        assert cli.main(["mesh", "--config", str(cfg), "--ckpt", str(ckpt / "model.psdf"),
                         "--parts", "--out", str(out)]) == 0
        text = (out / "shape_0000_parts.obj").read_text()
        assert "g part_0" in text


class TestFitEditInterpolate:
    def test_fit(self, pipeline, tmp_path):
        root, cfg, data, ckpt = pipeline
        out = tmp_path / "fit"
        assert cli.main(["fit", "--config", str(cfg), "--ckpt", str(ckpt / "model.psdf"),
                         "--samples", str(data / "shape_0001.psmp"),
                         "--out", str(out)]) == 0
        assert (out / "fitted.lat").exists() and (out / "fitted.poses").exists()
        hist = (out / "fit_history.csv").read_text().strip().split("\n")
        assert hist[0] == "step,total,sdf,part,inter,reg"
        assert len(hist) == 11

    def test_edit(self, pipeline, tmp_path):
        root, cfg, data, ckpt = pipeline
        script = tmp_path / "e.txt"
        script.write_text("set_pose 0 t.x 0.2\n")
        out = tmp_path / "edit"
        assert cli.main(["edit", "--config", str(cfg), "--ckpt", str(ckpt / "model.psdf"),
                         "--shape-id", "0", "--script", str(script),
                         "--out", str(out)]) == 0
        state = cli.load_state(str(out / "edited_0000"))
        assert state.t[0, 0] == 0.2

    def test_interpolate(self, pipeline, tmp_path):
        root, cfg, data, ckpt = pipeline
        out = tmp_path / "interp"
        assert cli.main(["interpolate", "--config", str(cfg),
                         "--ckpt", str(ckpt / "model.psdf"),
                         "--a", "0", "--b", "1", "--out", str(out)]) == 0
        names = sorted(f for f in os.listdir(out) if f.endswith(".obj"))
        assert names == ["interp_000.obj", "interp_001.obj", "interp_002.obj"]


class TestOptimizeEval:
    def test_optimize(self, pipeline, tmp_path, capsys):
        root, cfg, data, ckpt = pipeline
        out = tmp_path / "opt"
        assert cli.main(["optimize", "--config", str(cfg),
                         "--ckpt", str(ckpt / "model.psdf"),
                         "--shape-id", "0", "--freeze", "2",
                         "--out", str(out)]) == 0
        assert (out / "report.csv").exists()
        assert (out / "before.obj").exists() and (out / "after.obj").exists()
        assert (out / "after_pressure.csv").read_text().startswith("face,pressure")
        assert "C_d" in capsys.readouterr().out

    def test_eval_identical_dirs(self, pipeline, tmp_path, capsys):
        root, cfg, data, ckpt = pipeline
        meshes = tmp_path / "m"
        assert cli.main(["mesh", "--config", str(cfg), "--ckpt", str(ckpt / "model.psdf"),
                         "--shape-id", "0", "--out", str(meshes)]) == 0
        out = tmp_path / "eval"
        assert cli.main(["eval", "--config", str(cfg), "--pred", str(meshes),
                         "--gt", str(meshes), "--out", str(out)]) == 0
        text = (out / "eval.csv").read_text()
        lines = text.strip().split("\n")
        assert lines[0] == "shape_id,CD,IoU,IC,pIoU"
        fields = lines[1].split(",")
        assert float(fields[1]) < 1e-2  # CD of a mesh against itself
        assert float(fields[2]) == 1.0  # IoU of identical meshes
        assert "MMD" in text and "COV: 1" in text


class TestErrors:
    def test_missing_input_exit_2(self, capsys):
        assert cli.main(["train", "--data", "/nonexistent/dir", "--out", "/tmp/x"]) == 2
        assert "/nonexistent/dir" in capsys.readouterr().err

    def test_bad_config_exit_1(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs=abc\n")
        assert cli.main(["make-data", "--config", str(cfg), "--out", str(tmp_path)]) == 1
        assert "epochs" in capsys.readouterr().err

    def test_help_lists_config_keys(self, capsys):
        with pytest.raises(SystemExit):
            cli.main(["train", "--help"])
        out = capsys.readouterr().out
        assert "epochs" in out and "mesh_resolution" in out


class TestStateFiles:
    def test_round_trip(self, tmp_path):
        from partsdf.inference import ShapeState
        rng = np.random.default_rng(0)
        q = rng.normal(size=(2, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        state = ShapeState(rng.normal(size=(2, 5)), q,
                           rng.normal(size=(2, 3)), rng.uniform(0.5, 2, size=(2, 3)))
        prefix = str(tmp_path / "st")
        cli.save_state(prefix, state)
        back = cli.load_state(prefix)
        assert np.array_equal(back.z, state.z)
        assert np.array_equal(back.q, state.q)
        assert np.array_equal(back.t, state.t)
        assert np.array_equal(back.s, state.s)
