import zipfile

import numpy as np
import pytest
import torch

from assign_hoi.checkpoint import load_checkpoint, read_header, save_checkpoint
from assign_hoi.errors import CheckpointMismatchError, DataFormatError
from assign_hoi.training import build_model, predict

CFG = dict(feature_dim=6, num_labels={"human": 10, "object": 12}, frame_hidden=4, segment_hidden=4,
           boundary_mlp_widths=[5], label_mlp_widths=[5])


@pytest.mark.parametrize("kind", ["assign", "independent_birnn", "relational_birnn"])
def test_round_trip_restores_outputs(kind, small_dataset, tmp_path):
    cfg = CFG if kind == "assign" else dict(feature_dim=6, num_labels=CFG["num_labels"], hidden=4)
    model = build_model(kind, cfg, seed=3).eval()
    path = save_checkpoint(model, tmp_path / "m.ckpt", small_dataset.vocab_hash(), {"tag": "best"})
    loaded, header = load_checkpoint(path, small_dataset.vocab_hash())
    assert header["kind"] == kind and header["meta"] == {"tag": "best"}
    for name, t in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], t)
    videos = list(small_dataset)[:2]
    assert predict(model, videos) == predict(loaded, videos)


def test_bytes_are_stable(small_dataset, tmp_path):
    model = build_model("assign", CFG, seed=0)
    a = save_checkpoint(model, tmp_path / "a.ckpt", "h")
    b = save_checkpoint(model, tmp_path / "b.ckpt", "h")
    assert a.read_bytes() == b.read_bytes()


def test_tensor_payload_layout(tmp_path):
    model = build_model("independent_birnn", dict(feature_dim=2, num_labels={"human": 2, "object": 2},
                                                   hidden=3), seed=0)
    path = save_checkpoint(model, tmp_path / "m.ckpt", "h")
    name, tensor = next(iter(model.state_dict().items()))
    with zipfile.ZipFile(path) as zf:
        raw = zf.read(f"tensors/{name}.f32")
    np.testing.assert_array_equal(np.frombuffer(raw, "<f4").reshape(tensor.shape), tensor.numpy())
    assert read_header(path)["tensors"][name] == list(tensor.shape)


def test_vocabulary_mismatch(tmp_path):
    path = save_checkpoint(build_model("assign", CFG), tmp_path / "m.ckpt", "abc")
    with pytest.raises(CheckpointMismatchError):
        load_checkpoint(path, "xyz")


def test_not_an_archive(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_text("hello")
    with pytest.raises(DataFormatError):
        load_checkpoint(bad)


def test_config_survives(tmp_path):
    model = build_model("assign", dict(CFG, dense_update_mode=True, gumbel_temperature=0.7))
    loaded, _ = load_checkpoint(save_checkpoint(model, tmp_path / "m.ckpt", "h"))
    assert loaded.config == model.config
