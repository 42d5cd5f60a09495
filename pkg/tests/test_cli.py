import json
from pathlib import Path

import numpy as np
import pytest

from amodalhands.cli import main
from amodalhands.storage import read_json, write_json


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Tiny dataset + briefly trained checkpoints shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth", "--n", "6", "--mix", "0.5", "--seed", "11",
                 "--out", str(data), "--fast"]) == 0
    assert main(["train-hasm", "--data", str(data), "--out", str(root / "seg"),
                 "--steps", "5", "--fast", "--seed", "0"]) == 0
    assert main(["train-hdrm", "--data", str(data), "--out", str(root / "inp"),
                 "--steps", "5", "--no-gan", "--fast", "--seed", "0"]) == 0
    assert main(["train-shpe", "--data", str(data), "--out", str(root / "pose"),
                 "--steps", "5", "--fast", "--seed", "0"]) == 0
    cfg = {
        "seg_checkpoint": str(root / "seg" / "segmenter.pt"),
        "inpaint_checkpoint": str(root / "inp" / "inpainter.pt"),
        "pose_checkpoint": str(root / "pose" / "posenet.pt"),
        "crop_expansion": 1.3,
        "threshold": 0.5,
        "variant": "full",
    }
    write_json(root / "pipeline.json", cfg)
    return root


class TestSynthCommand:
    def test_dataset_layout(self, workspace):
        data = workspace / "data"
        manifest = read_json(data / "manifest.json")
        assert manifest["n"] == 6
        assert len(manifest["samples"]) == 6
        for entry in manifest["samples"]:
            sid = entry["id"]
            assert (data / "images" / f"{sid}.png").exists()
            assert (data / "masks" / f"{sid}.png").exists()
            assert (data / "targets" / f"{sid}_right.png").exists()
            assert (data / "meta" / f"{sid}.json").exists()

    def test_meta_sidecar_keys(self, workspace):
        meta = read_json(workspace / "data" / "meta" / "000000.json")
        assert set(meta) >= {"id", "seed", "variant", "hands"}
        for side in ("right", "left"):
            hand = meta["hands"][side]
            assert set(hand) >= {"side", "crop", "joints_2d", "joints_3d", "valid"}

    def test_synth_determinism_bytes(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--n", "2", "--mix", "1.0", "--seed", "3",
                         "--out", str(tmp_path / name), "--fast"]) == 0
        files_a = sorted(p.relative_to(tmp_path / "a")
                         for p in (tmp_path / "a").rglob("*") if p.is_file())
        for rel in files_a:
            assert ((tmp_path / "a" / rel).read_bytes()
                    == (tmp_path / "b" / rel).read_bytes())


class TestTrainCommands:
    def test_checkpoints_and_metrics_exist(self, workspace):
        assert (workspace / "seg" / "segmenter.pt").exists()
        assert (workspace / "seg" / "segmenter_metrics.csv").exists()
        assert (workspace / "inp" / "inpainter.pt").exists()
        assert (workspace / "pose" / "posenet.pt").exists()
        header = (workspace / "seg" / "segmenter_metrics.csv").read_text().splitlines()[0]
        assert header == "step,loss_ra,loss_rv,loss_la,loss_lv,total"


class TestInferCommand:
    def test_infer_twice_byte_identical(self, workspace, tmp_path):
        img = workspace / "data" / "images" / "000000.png"
        for name in ("a.json", "b.json"):
            assert main(["infer", "--config", str(workspace / "pipeline.json"),
                         "--image", str(img), "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_output_schema(self, workspace, tmp_path):
        img = workspace / "data" / "images" / "000001.png"
        out = tmp_path / "pose.json"
        assert main(["infer", "--config", str(workspace / "pipeline.json"),
                     "--image", str(img), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert set(payload) == {"hands", "skipped"}
        for side, hand in payload["hands"].items():
            assert hand["side"] == side
            assert len(hand["joints_2d"]) == 21
            assert len(hand["joints_3d"]) == 21
            assert len(hand["confidence"]) == 21


class TestEvalCommand:
    def test_row_accounting(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "--config", str(workspace / "pipeline.json"),
                     "--data", str(workspace / "data"), "--out", str(out),
                     "--mask-source", "gt"]) == 0
        rows = (out / "eval.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 6  # header + one row per sample

    def test_eval_deterministic(self, workspace, tmp_path):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            assert main(["eval", "--config", str(workspace / "pipeline.json"),
                         "--data", str(workspace / "data"), "--out", str(out),
                         "--mask-source", "gt"]) == 0
            outs.append((out / "eval.csv").read_bytes())
        assert outs[0] == outs[1]


class TestVizCommand:
    def test_panel_written(self, workspace, tmp_path):
        out = tmp_path / "panel.png"
        assert main(["viz", "--config", str(workspace / "pipeline.json"),
                     "--data", str(workspace / "data"), "--id", "000000",
                     "--gt-masks", "--out", str(out)]) == 0
        from PIL import Image

        panel = Image.open(out)
        assert panel.size[0] > 64 and panel.size[1] > 64


class TestExitCodes:
    def test_unknown_flag_is_usage_error(self, capsys):
        assert main(["synth", "--definitely-not-a-flag"]) == 1

    def test_missing_subcommand(self):
        assert main([]) == 1

    def test_missing_config_is_user_error(self, tmp_path):
        img = tmp_path / "x.png"
        from amodalhands.storage import save_image

        save_image(img, np.zeros((16, 16, 3), dtype=np.float32))
        assert main(["infer", "--image", str(img)]) == 1

    def test_missing_manifest_is_user_error(self, tmp_path):
        assert main(["train-hasm", "--data", str(tmp_path),
                     "--out", str(tmp_path / "o")]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0
