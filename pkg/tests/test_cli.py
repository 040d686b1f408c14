import json
from pathlib import Path

import numpy as np
import pytest

from airwaytk.cli import main
from airwaytk.morphology import keep_largest_component
from airwaytk.synthgen import AddNoiseComponent, TreeSpec, generate_tree, perturb
from airwaytk.volume import Connectivity, Role, Volume, load_volume, save_volume, volumes_equal


@pytest.fixture
def tree_case(tmp_path):
    spec = TreeSpec(depth=1, root_length_vox=14, volume_shape=(48, 48, 24))
    tree = generate_tree(spec)
    case = tmp_path / "tree"
    case.mkdir()
    save_volume(tree.mask, case / "mask.mhd")
    save_volume(tree.centerline, case / "centerline.mhd")
    return spec, tree, case


def read_bytes_map(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestPreprocess:
    def test_roundtrip(self, tmp_path, rng):
        vol = Volume((rng.random((40, 30, 20)) * 100).astype(np.float32))
        save_volume(vol, tmp_path / "in.mhd")
        out_dir = tmp_path / "patches"
        rc = main(
            [
                "preprocess",
                "--in", str(tmp_path / "in.mhd"),
                "--out-dir", str(out_dir),
                "--patch", "16,16,16",
            ]
        )
        assert rc == 0
        grid = json.loads((out_dir / "grid.json").read_text())
        assert grid["patch_shape"] == [16, 16, 16]
        assert grid["n_patches"] == 3 * 2 * 2
        rc = main(
            [
                "reassemble",
                "--grid", str(out_dir / "grid.json"),
                "--patch-dir", str(out_dir),
                "--out", str(tmp_path / "back.mhd"),
            ]
        )
        assert rc == 0
        back = load_volume(tmp_path / "back.mhd", role=Role.INTENSITY)
        np.testing.assert_array_equal(back.data, vol.data)

    def test_default_patch_shape(self, tmp_path):
        vol = Volume(np.zeros((8, 8, 8), dtype=np.float32))
        save_volume(vol, tmp_path / "in.mhd")
        rc = main(["preprocess", "--in", str(tmp_path / "in.mhd"), "--out-dir", str(tmp_path / "p")])
        assert rc == 0
        grid = json.loads((tmp_path / "p" / "grid.json").read_text())
        assert grid["patch_shape"] == [128, 96, 144]

    def test_malformed_patch_flag_exits_3(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["preprocess", "--in", "x.mhd", "--out-dir", "y", "--patch", "128,96"])
        assert exc.value.code == 3

    def test_missing_input_exits_2(self, tmp_path):
        rc = main(["preprocess", "--in", str(tmp_path / "nope.mhd"), "--out-dir", str(tmp_path / "p")])
        assert rc == 2


class TestPostprocess:
    def test_matches_library(self, tree_case, tmp_path):
        _, tree, case = tree_case
        noisy = perturb(tree.mask, AddNoiseComponent(size=25, seed=9))
        save_volume(noisy, tmp_path / "noisy.mhd")
        rc = main(["postprocess", "--in", str(tmp_path / "noisy.mhd"), "--out", str(tmp_path / "out.mhd")])
        assert rc == 0
        got = load_volume(tmp_path / "out.mhd", role=Role.BINARY)
        want = keep_largest_component(noisy, Connectivity.VERTEX26)
        assert volumes_equal(got, want)
        np.testing.assert_array_equal(got.data, tree.mask.data)

    def test_single_component_identity(self, tree_case, tmp_path):
        _, tree, case = tree_case
        rc = main(["postprocess", "--in", str(case / "mask.mhd"), "--out", str(tmp_path / "out.mhd")])
        assert rc == 0
        out = load_volume(tmp_path / "out.mhd", role=Role.BINARY)
        np.testing.assert_array_equal(out.data, tree.mask.data)

    def test_empty_mask_warns_not_fails(self, tmp_path):
        empty = Volume(np.zeros((4, 4, 4), dtype=np.uint8), role=Role.BINARY)
        save_volume(empty, tmp_path / "e.mhd")
        rc = main(["postprocess", "--in", str(tmp_path / "e.mhd"), "--out", str(tmp_path / "out.mhd")])
        assert rc == 0
        assert load_volume(tmp_path / "out.mhd", role=Role.BINARY).data.sum() == 0


class TestEvaluate:
    def test_perfect_single_case(self, tree_case, tmp_path, capsys):
        _, tree, case = tree_case
        csv_path = tmp_path / "m.csv"
        rc = main(
            [
                "evaluate",
                "--pred", str(case / "mask.mhd"),
                "--gt", str(case / "mask.mhd"),
                "--csv", str(csv_path),
                "--json", str(tmp_path / "agg.json"),
            ]
        )
        assert rc == 0
        lines = csv_path.read_text().strip().split("\n")
        assert lines[0] == "case_id,dsc,precision,td,bd"
        assert lines[1] == "mask,1.000000,1.000000,1.000000,1.000000"
        agg = json.loads((tmp_path / "agg.json").read_text())
        assert agg["dsc"] == {"mean": 1.0, "std": 0.0}
        out = capsys.readouterr().out
        assert "dsc 1.000±0.000" in out

    def test_batch_mode(self, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        tree = generate_tree(TreeSpec(depth=1, root_length_vox=14, volume_shape=(48, 48, 24)))
        for stem in ("a", "b", "c"):
            save_volume(tree.mask, gt_dir / f"{stem}.mhd")
            save_volume(tree.mask, pred_dir / f"{stem}.mhd")
        csv_path = tmp_path / "m.csv"
        rc = main(
            ["evaluate", "--pred", str(pred_dir), "--gt", str(gt_dir), "--csv", str(csv_path), "--json", str(tmp_path / "agg.json")]
        )
        assert rc == 0
        lines = csv_path.read_text().strip().split("\n")
        assert len(lines) == 4
        assert [ln.split(",")[0] for ln in lines[1:]] == ["a", "b", "c"]
        assert json.loads((tmp_path / "agg.json").read_text())["n_cases"] == 3

    def test_unpaired_stems_exit_3(self, tmp_path, tree_case):
        _, tree, case = tree_case
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        save_volume(tree.mask, pred_dir / "a.mhd")
        save_volume(tree.mask, gt_dir / "b.mhd")
        rc = main(["evaluate", "--pred", str(pred_dir), "--gt", str(gt_dir)])
        assert rc == 3

    def test_threads_do_not_change_output(self, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        tree = generate_tree(TreeSpec(depth=1, root_length_vox=14, volume_shape=(48, 48, 24)))
        rng = np.random.default_rng(4)
        for stem in ("a", "b", "c", "d"):
            save_volume(tree.mask, gt_dir / f"{stem}.mhd")
            prob = np.clip(tree.mask.data * rng.uniform(0.6, 1.0) + rng.random(tree.mask.shape) * 0.2, 0, 1)
            save_volume(Volume(prob.astype(np.float32), tree.mask.spacing, Role.PROBABILITY), pred_dir / f"{stem}.mhd")
        outputs = []
        for threads in ("1", "4"):
            csv_path = tmp_path / f"m{threads}.csv"
            rc = main(
                ["--threads", threads, "evaluate", "--pred", str(pred_dir), "--gt", str(gt_dir), "--csv", str(csv_path)]
            )
            assert rc == 0
            outputs.append(csv_path.read_bytes())
        assert outputs[0] == outputs[1]


class TestUncertainty:
    def test_identical_stack(self, tmp_path, rng):
        stack_dir = tmp_path / "stack"
        stack_dir.mkdir()
        prob = Volume(rng.random((6, 6, 6)).astype(np.float32), role=Role.PROBABILITY)
        for i in range(5):
            save_volume(prob, stack_dir / f"drop_{i}.mhd")
        out_dir = tmp_path / "out"
        rc = main(["uncertainty", "--pred-glob", str(stack_dir / "drop_*.mhd"), "--out-dir", str(out_dir), "--tau", "0.0"])
        assert rc == 0
        var = load_volume(out_dir / "var.mhd", role=Role.INTENSITY)
        assert var.data.max() == 0.0
        mean = load_volume(out_dir / "mean.mhd", role=Role.PROBABILITY)
        np.testing.assert_array_equal(mean.data, prob.data)
        payload = json.loads((out_dir / "uncertainty.json").read_text())
        assert payload == {"n_drop": 5, "mean_variance": 0.0, "max_variance": 0.0}
        mask = load_volume(out_dir / "mask.mhd", role=Role.BINARY)
        assert mask.data.sum() == 0

    def test_empty_glob_exits_3(self, tmp_path):
        rc = main(["uncertainty", "--pred-glob", str(tmp_path / "none_*.mhd"), "--out-dir", str(tmp_path / "o")])
        assert rc == 3


class TestBranchesAndLoss:
    def test_branches_on_y_tree(self, tree_case, tmp_path, capsys):
        _, tree, case = tree_case
        rc = main(
            [
                "branches",
                "--in", str(case / "mask.mhd"),
                "--labels-out", str(tmp_path / "labels.mhd"),
                "--table-out", str(tmp_path / "table.json"),
            ]
        )
        assert rc == 0
        assert "branches 3" in capsys.readouterr().out
        payload = json.loads((tmp_path / "table.json").read_text())
        assert len(payload["branches"]) == 3
        labels = load_volume(tmp_path / "labels.mhd", role=Role.LABEL)
        assert set(np.unique(labels.data)) == {0, 1, 2, 3}

    def test_cyclic_input_exits_4(self, tmp_path):
        m = np.zeros((3, 6, 6), dtype=np.uint8)
        for y, x in ((1, 1), (1, 2), (1, 3), (2, 3), (3, 3), (3, 2), (3, 1), (2, 1)):
            m[1, y, x] = 1
        save_volume(Volume(m, role=Role.BINARY), tmp_path / "ring.mhd")
        rc = main(["branches", "--in", str(tmp_path / "ring.mhd"), "--table-out", str(tmp_path / "t.json")])
        assert rc == 4

    def test_break_cycles_opt_in(self, tmp_path, capsys):
        m = np.zeros((3, 6, 6), dtype=np.uint8)
        for y, x in ((1, 1), (1, 2), (1, 3), (2, 3), (3, 3), (3, 2), (3, 1), (2, 1)):
            m[1, y, x] = 1
        save_volume(Volume(m, role=Role.BINARY), tmp_path / "ring.mhd")
        rc = main(
            [
                "branches",
                "--in", str(tmp_path / "ring.mhd"),
                "--break-cycles",
                "--table-out", str(tmp_path / "t.json"),
            ]
        )
        assert rc == 0
        assert "branches 1" in capsys.readouterr().out

    def test_loss_on_perfect_prediction(self, tree_case, tmp_path, capsys):
        _, tree, case = tree_case
        rc = main(
            [
                "branches",
                "--in", str(case / "mask.mhd"),
                "--labels-out", str(tmp_path / "labels.mhd"),
            ]
        )
        assert rc == 0
        capsys.readouterr()
        pred = Volume(tree.mask.data.astype(np.float32), tree.mask.spacing, Role.PROBABILITY)
        save_volume(pred, tmp_path / "pred.mhd")
        rc = main(["loss", "--pred", str(tmp_path / "pred.mhd"), "--gt-labels", str(tmp_path / "labels.mhd")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "total 0.000000" in out
        payload = json.loads(out[: out.rindex("total")])
        assert payload["total"] < 1e-6
        assert payload["weights"] == [0.2, 0.2, 0.3, 0.3]


class TestSynthAndReproducibility:
    def test_synth_outputs(self, tmp_path, capsys):
        spec = {"depth": 2, "root_length_vox": 16, "volume_shape": [64, 64, 48]}
        (tmp_path / "spec.json").write_text(json.dumps(spec))
        rc = main(["synth", "--spec", str(tmp_path / "spec.json"), "--out-dir", str(tmp_path / "t")])
        assert rc == 0
        assert "branches 7" in capsys.readouterr().out
        mask = load_volume(tmp_path / "t" / "mask.mhd", role=Role.BINARY)
        cl = load_volume(tmp_path / "t" / "centerline.mhd", role=Role.BINARY)
        assert np.all(cl.data <= mask.data)
        table = json.loads((tmp_path / "t" / "table.json").read_text())
        assert len(table["branches"]) == 7

    def test_byte_identical_reruns(self, tmp_path):
        spec = {"depth": 1, "root_length_vox": 14, "volume_shape": [48, 48, 24]}
        (tmp_path / "spec.json").write_text(json.dumps(spec))
        runs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--out-dir", str(out)]) == 0
            assert main(["skeletonize", "--in", str(out / "mask.mhd"), "--out", str(out / "skel.mhd")]) == 0
            assert main(
                ["branches", "--in", str(out / "mask.mhd"), "--labels-out", str(out / "labels.mhd"), "--table-out", str(out / "table.json")]
            ) == 0
            runs.append(read_bytes_map(out))
        assert runs[0] == runs[1]

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "airwaytk 0.1.0" in out and "grid.json v1" in out and "table.json v1" in out
