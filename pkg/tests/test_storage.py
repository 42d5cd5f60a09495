import numpy as np
import torch

from amodalhands.grids import CropTransform, JointSet, MaskQuad
from amodalhands.storage import (
    crop_from_dict,
    crop_to_dict,
    joints_from_dict,
    joints_to_dict,
    load_checkpoint,
    load_image,
    load_mask,
    load_mask_quad,
    read_json,
    save_checkpoint,
    save_image,
    save_mask,
    save_mask_quad,
    to_u8,
    write_json,
)


class TestPngRoundtrip:
    def test_image_quantized_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((16, 16, 3)).astype(np.float32)
        save_image(tmp_path / "img.png", img)
        back = load_image(tmp_path / "img.png")
        assert np.array_equal(to_u8(back), to_u8(img))
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-6

    def test_binary_mask_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        mask = (rng.random((16, 16)) < 0.5).astype(np.float32)
        save_mask(tmp_path / "m.png", mask)
        assert np.array_equal(load_mask(tmp_path / "m.png"), mask)

    def test_quad_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        quad = MaskQuad(*((rng.random((16, 16)) < 0.5).astype(np.float32)
                          for _ in range(4)))
        save_mask_quad(tmp_path / "q.png", quad)
        back = load_mask_quad(tmp_path / "q.png")
        for a, b in zip(quad.all(), back.all()):
            assert np.array_equal(a, b)

    def test_png_bytes_deterministic(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.random((16, 16, 3)).astype(np.float32)
        save_image(tmp_path / "a.png", img)
        save_image(tmp_path / "b.png", img)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


class TestJsonHelpers:
    def test_json_roundtrip_sorted(self, tmp_path):
        write_json(tmp_path / "x.json", {"b": 2, "a": [1, 2]})
        text = (tmp_path / "x.json").read_text()
        assert text.index('"a"') < text.index('"b"')
        assert read_json(tmp_path / "x.json") == {"a": [1, 2], "b": 2}

    def test_crop_transform_dict_roundtrip(self):
        t = CropTransform(center=(3.5, 4.25), side_len=10.0, out_size=64, flipped=True)
        assert crop_from_dict(crop_to_dict(t)) == t

    def test_joints_dict_roundtrip(self):
        rng = np.random.default_rng(4)
        j = JointSet(joints_2d=rng.uniform(0, 64, (21, 2)),
                     joints_3d=rng.uniform(-50, 50, (21, 3)),
                     valid=rng.random(21) < 0.8)
        back = joints_from_dict(joints_to_dict(j))
        assert np.array_equal(back.joints_2d, j.joints_2d)
        assert np.array_equal(back.joints_3d, j.joints_3d)
        assert np.array_equal(back.valid, j.valid)


class TestCheckpoint:
    def test_state_dict_identity(self, tmp_path):
        torch.manual_seed(0)
        model = torch.nn.Sequential(torch.nn.Conv2d(3, 4, 3), torch.nn.Conv2d(4, 1, 1))
        save_checkpoint(tmp_path / "m.pt", model.state_dict(), {"widths": [4]},
                        extra={"step": 3})
        payload = load_checkpoint(tmp_path / "m.pt")
        assert payload["config"] == {"widths": [4]}
        assert payload["extra"]["step"] == 3
        for k, v in model.state_dict().items():
            assert torch.equal(payload["state_dict"][k], v)
