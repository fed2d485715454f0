import json

import numpy as np
import pytest

from app.main import main
from services.errors import NonFiniteError
from services.matching_service import MatchingService
from services.mesh_service import MeshService
from services.run_registry import RunRegistryService


@pytest.fixture
def mesh_files(tmp_path, sphere, tube):
    sphere_path = MeshService.save_mesh(sphere, tmp_path / "sphere.obj")
    tube_path = MeshService.save_mesh(tube, tmp_path / "tube.off")
    return str(sphere_path), str(tube_path)


def match_args(a, b, out, *extra):
    return ["match", a, b, "--patch-counts", "6", "--epochs", "0", "--out", str(out), *extra]


class TestDecompose:

    def test_writes_hierarchy_and_colored_levels(self, tmp_path, mesh_files):
        out = tmp_path / "out"
        code = main(["decompose", mesh_files[0], "--patch-counts", "10", "4", "--colored-ply", "--out", str(out)])
        assert code == 0
        data = json.loads((out / "sphere_hierarchy.json").read_text())
        assert [lvl["size"] for lvl in data["levels"]] == [42, 10, 4]
        for level in (1, 2):
            colored = MeshService.load_mesh(out / f"sphere_patches_l{level}.ply")
            assert colored.vertex_colors.shape == (42, 3)

    def test_missing_mesh(self, tmp_path):
        assert main(["decompose", str(tmp_path / "nope.obj"), "--out", str(tmp_path)]) == 2

    def test_too_many_patches(self, tmp_path, mesh_files):
        assert main(["decompose", mesh_files[1], "--patch-counts", "500", "--out", str(tmp_path)]) == 2


class TestMatch:

    def test_artifacts(self, tmp_path, mesh_files, registry):
        out = tmp_path / "run"
        code = main(match_args(*mesh_files, out, "--no-run-subdir", "--dump-deformations", "--dump-vertex-associations"))
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "finished"
        assert manifest["steps"] == 0
        assert manifest["config"]["patch_counts"] == [6]
        assert [w["geodesic"] for w in manifest["config"]["loss_weights"]] == [0.0, 0.01]
        map_xy = MeshService.read_index_map(out / "map_xy.txt")
        map_yx = MeshService.read_index_map(out / "map_yx.txt")
        assert map_xy.shape == (42,)
        assert map_yx.shape == (40,)
        assert (out / "loss.jsonl").read_text() == ""
        deformed = MeshService.load_mesh(out / "deformed_y_l1.obj")
        np.testing.assert_allclose(deformed.vertices, MeshService.load_mesh(mesh_files[1]).vertices, atol=1e-6)
        with np.load(out / "associations.npz") as npz:
            assert sorted(npz.files) == ["pi_xy_l0", "pi_xy_l1", "pi_yx_l0", "pi_yx_l1"]
            assert npz["pi_xy_l1"].shape == (6, 6)
        with registry.get_db() as db:
            runs = RunRegistryService.list_runs(db)
            assert [r.status for r in runs] == ["finished"]

    def test_loss_log_lines(self, tmp_path, mesh_files):
        out = tmp_path / "run"
        args = match_args(*mesh_files, out, "--no-run-subdir")
        args[args.index("--epochs") + 1] = "1"
        assert main(args + ["--steps-per-epoch", "2", "--no-deformation"]) == 0
        lines = (out / "loss.jsonl").read_text().splitlines()
        assert [json.loads(line)["step"] for line in lines] == [0, 1]
        assert json.loads((out / "manifest.json").read_text())["final_loss"] is not None

    def test_same_seed_gives_identical_files(self, tmp_path, mesh_files):
        outputs = []
        for name in ("first", "second"):
            out = tmp_path / name
            args = match_args(*mesh_files, out, "--no-run-subdir", "--seed", "3", "--steps-per-epoch", "2")
            args[args.index("--epochs") + 1] = "1"
            assert main(args) == 0
            outputs.append(out)
        for artifact in ("map_xy.txt", "map_yx.txt", "loss.jsonl"):
            assert (outputs[0] / artifact).read_bytes() == (outputs[1] / artifact).read_bytes()
        assert (outputs[0] / "loss.jsonl").read_text().count("\n") == 2

    def test_run_subdirectory_named_by_config(self, tmp_path, mesh_files):
        out = tmp_path / "runs"
        assert main(match_args(*mesh_files, out, "--seed", "4")) == 0
        (run_dir,) = out.iterdir()
        assert run_dir.name.endswith("_s4")
        assert (run_dir / "map_xy.txt").is_file()

    def test_config_hash_mismatch(self, tmp_path, mesh_files):
        out = tmp_path / "run"
        assert main(match_args(*mesh_files, out, "--no-run-subdir")) == 0
        assert main(match_args(*mesh_files, out, "--no-run-subdir", "--seed", "5")) == 2
        assert json.loads((out / "manifest.json").read_text())["seed"] == 0

    def test_divergence_exit_code(self, tmp_path, mesh_files, monkeypatch):
        def diverge(*args, **kwargs):
            raise NonFiniteError("nonfinite total loss")

        monkeypatch.setattr(MatchingService, "match_pair", staticmethod(diverge))
        out = tmp_path / "run"
        assert main(match_args(*mesh_files, out, "--no-run-subdir")) == 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "diverged"
        assert "nonfinite" in manifest["message"]

    def test_unexpected_error_exit_code(self, tmp_path, mesh_files, monkeypatch):
        def crash(*args, **kwargs):
            raise RuntimeError("boom")

        monkeypatch.setattr(MatchingService, "match_pair", staticmethod(crash))
        assert main(match_args(*mesh_files, tmp_path / "run")) == 1

    def test_needs_two_meshes(self, tmp_path):
        assert main(["match", "--out", str(tmp_path)]) == 2

    def test_invalid_config_file(self, tmp_path, mesh_files):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"temperature": 0.1}))
        assert main(match_args(*mesh_files, tmp_path / "run", "--config", str(config))) == 2

    def test_batch(self, tmp_path, mesh_files):
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps([
            {"mesh_a": mesh_files[0], "mesh_b": mesh_files[1]},
            {"mesh_a": mesh_files[0], "mesh_b": str(tmp_path / "missing.obj")},
        ]))
        out = tmp_path / "batch"
        code = main(["match", "--pairs", str(pairs), "--workers", "1", "--patch-counts", "6", "--epochs", "0", "--out", str(out)])
        assert code == 2
        (run_root,) = out.iterdir()
        assert (run_root / "pair000_sphere_tube" / "manifest.json").is_file()
        assert not (run_root / "pair001_sphere_missing").exists()

    def test_batch_corrupt_mesh_does_not_stop_other_pairs(self, tmp_path, mesh_files):
        corrupt = tmp_path / "corrupt.ply"
        corrupt.write_bytes(b"ply\nformat ascii 1.0\nelement vertex x\nend_header\n\x00\xff")
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps([
            {"mesh_a": str(corrupt), "mesh_b": mesh_files[1]},
            {"mesh_a": mesh_files[0], "mesh_b": mesh_files[1]},
        ]))
        out = tmp_path / "batch"
        code = main(["match", "--pairs", str(pairs), "--workers", "1", "--patch-counts", "6", "--epochs", "0", "--out", str(out)])
        assert code == 2
        (run_root,) = out.iterdir()
        assert json.loads((run_root / "pair001_sphere_tube" / "manifest.json").read_text())["status"] == "finished"

    def test_batch_unexpected_error_is_exit_one(self, tmp_path, mesh_files, monkeypatch):
        real = MatchingService.match_pair

        def crash_on_self_pair(mesh_x, mesh_y, *args, **kwargs):
            if mesh_x.name == mesh_y.name:
                raise RuntimeError("boom")
            return real(mesh_x, mesh_y, *args, **kwargs)

        monkeypatch.setattr(MatchingService, "match_pair", staticmethod(crash_on_self_pair))
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps([
            {"mesh_a": mesh_files[0], "mesh_b": mesh_files[0]},
            {"mesh_a": mesh_files[0], "mesh_b": mesh_files[1]},
        ]))
        out = tmp_path / "batch"
        code = main(["match", "--pairs", str(pairs), "--workers", "1", "--patch-counts", "6", "--epochs", "0", "--out", str(out)])
        assert code == 1
        (run_root,) = out.iterdir()
        crashed = json.loads((run_root / "pair000_sphere_sphere" / "manifest.json").read_text())
        assert crashed["status"] == "failed"
        assert "boom" in crashed["message"]
        assert json.loads((run_root / "pair001_sphere_tube" / "manifest.json").read_text())["status"] == "finished"


class TestEval:

    def test_perfect_prediction(self, tmp_path, mesh_files):
        ident = np.arange(42)
        pred = MeshService.write_index_map(ident, tmp_path / "pred.txt")
        gt = MeshService.write_index_map(ident, tmp_path / "gt.txt")
        out = tmp_path / "eval"
        code = main([
            "eval", str(pred), str(gt), mesh_files[0],
            "--source-mesh", mesh_files[0], "--reverse-map", str(pred), "--out", str(out),
        ])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["mge"] == 0.0
        assert metrics["p2p"] == 1.0
        assert metrics["cycle_ge"] == 0.0
        assert (out / "curve.csv").read_text().startswith("tolerance,fraction")

    def test_discard_protocol(self, tmp_path, mesh_files):
        ident = np.arange(42)
        pred = MeshService.write_index_map(ident, tmp_path / "pred.txt")
        distances = tmp_path / "dist.txt"
        distances.write_text("\n".join(["0.0"] * 40 + ["10.0", "10.0"]) + "\n")
        out = tmp_path / "eval"
        code = main([
            "eval", str(pred), str(pred), mesh_files[0],
            "--gt-distances", str(distances), "--normalization", "none", "--out", str(out),
        ])
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["evaluated"] == 40
        assert metrics["discarded"] == 2
        assert metrics["normalization"] == "none"

    def test_length_mismatch(self, tmp_path, mesh_files):
        pred = MeshService.write_index_map(np.arange(41), tmp_path / "pred.txt")
        gt = MeshService.write_index_map(np.arange(42), tmp_path / "gt.txt")
        assert main(["eval", str(pred), str(gt), mesh_files[0], "--out", str(tmp_path)]) == 2


class TestTransferColors:

    def test_identity_map(self, tmp_path, mesh_files):
        map_file = MeshService.write_index_map(np.arange(42), tmp_path / "map.txt")
        out = tmp_path / "colored.ply"
        assert main(["transfer-colors", mesh_files[0], mesh_files[0], str(map_file), str(out)]) == 0
        source = MeshService.load_mesh(out)
        target = MeshService.load_mesh(tmp_path / "colored_target.ply")
        np.testing.assert_array_equal(source.vertex_colors, target.vertex_colors)

    def test_constant_map(self, tmp_path, mesh_files):
        map_file = MeshService.write_index_map(np.full(42, 7), tmp_path / "map.txt")
        out = tmp_path / "colored.ply"
        assert main(["transfer-colors", mesh_files[0], mesh_files[1], str(map_file), str(out)]) == 0
        colors = MeshService.load_mesh(out).vertex_colors
        assert (colors == colors[0]).all()
        np.testing.assert_array_equal(colors[0], MeshService.load_mesh(tmp_path / "colored_target.ply").vertex_colors[7])

    def test_index_out_of_range(self, tmp_path, mesh_files):
        map_file = MeshService.write_index_map(np.full(42, 40), tmp_path / "map.txt")
        assert main(["transfer-colors", mesh_files[0], mesh_files[1], str(map_file), str(tmp_path / "c.ply")]) == 2
