import math
import struct

import numpy as np
import pytest

from lgnn.exceptions import CheckpointFormatError, ConfigurationError, ShapeError
from lgnn.layers import softmax_cross_entropy
from lgnn.model import (ModelGraph, build_model, decode_tensors, encode_tensors, load_checkpoint,
                        read_checkpoint, save_checkpoint)
from lgnn.neighborhood import SomDims

from conftest import numeric_grad, rel_error

TOY = {"name": "mini_vgg", "cfg": [4, "M", 4, "M"], "num_classes": 3, "input_shape": [3, 8, 8]}
TOY_RES = {"name": "mini_resnet", "stem": 4, "stages": [[4, 1], [8, 2]], "dropout": 0.3,
           "num_classes": 3, "input_shape": [3, 8, 8]}


def test_vgg_construction_tags():
    m = build_model({"name": "mini_vgg"})
    assert m.conv_weights == ["conv1.weight", "conv2.weight", "conv3.weight"]
    assert [m.placement[k] for k in m.conv_weights] == ["first_layer", "main_branch", "main_branch"]
    assert m.roles["fc.weight"] == m.roles["fc.bias"] == "fc"
    assert not any(k.startswith("conv") and k.endswith(".bias") for k in m.params)
    assert set(m.placement) == set(m.conv_weights)


def test_vgg_parameter_count():
    m = build_model({"name": "mini_vgg", "cfg": [16, "M", 32, "M", 64, "M"], "num_classes": 4})
    convs = 16 * 3 * 9 + 32 * 16 * 9 + 64 * 32 * 9
    bns = 2 * (16 + 32 + 64)
    fc = 4 * 64 * 4 * 4 + 4
    assert m.n_params() == convs + bns + fc == 27796


def test_resnet_shortcut_only_when_widening():
    m = build_model({"name": "mini_resnet", "stem": 16, "stages": [[16, 1], [32, 2]]})
    assert "block1.shortcut.weight" not in m.params
    assert m.params["block2.shortcut.weight"].shape == (32, 16, 1, 1)
    assert m.placement["block2.shortcut.weight"] == "shortcut"
    assert m.placement["stem.weight"] == "first_layer"
    assert m.roles["block2.shortcut.bias"] == "conv_bias"


def test_missing_grid_factorisation():
    with pytest.raises(ConfigurationError):
        build_model({"name": "mini_vgg", "cfg": [10, "M"]})
    with pytest.raises(ConfigurationError):
        build_model({"name": "mini_vgg"}, som_dims=SomDims({16: (4, 4), 32: (8, 4)}))
    with pytest.raises(ConfigurationError):
        build_model({"name": "resnet50"})


def test_seeded_init_is_reproducible():
    a, b = build_model({"name": "mini_vgg"}, seed=3), build_model({"name": "mini_vgg"}, seed=3)
    c = build_model({"name": "mini_vgg"}, seed=4)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert a.params["conv1.weight"].tobytes() != c.params["conv1.weight"].tobytes()


def test_he_init_scale():
    m = build_model({"name": "mini_vgg", "cfg": [64, "M"]}, seed=0)
    w = m.params["conv1.weight"]
    assert w.std() == pytest.approx(math.sqrt(2 / 27), rel=0.1)


def test_zero_head_gives_uniform_loss(rng):
    m = build_model({"name": "mini_vgg", "num_classes": 5})
    m.params["fc.weight"][:] = 0
    logits = m.forward(rng.standard_normal((2, 3, 32, 32)))
    assert np.all(logits == 0)
    loss, _ = softmax_cross_entropy(logits, [0, 4])
    assert loss == pytest.approx(math.log(5), rel=1e-6)


def test_input_shape_checked(rng):
    with pytest.raises(ShapeError):
        build_model({"name": "mini_vgg"}).forward(rng.standard_normal((2, 3, 16, 16)))


def _loss_and_grads(model, x, y, seed=0):
    model.zero_grad()
    logits = model.forward(x, training=True, rng=np.random.default_rng(seed))
    loss, g = softmax_cross_entropy(logits, y)
    return loss, model.backward(g)


def test_backward_is_deterministic(rng):
    m = build_model({"name": "mini_vgg"}, seed=1)
    x = rng.standard_normal((4, 3, 32, 32)).astype(np.float32)
    y = np.array([0, 1, 2, 3])
    _, g1 = _loss_and_grads(m, x, y)
    g1 = {k: v.copy() for k, v in g1.items()}
    _, g2 = _loss_and_grads(m, x, y)
    assert g1.keys() == g2.keys() == m.params.keys()
    assert all(g1[k].tobytes() == g2[k].tobytes() for k in g1)


@pytest.mark.parametrize("arch", [TOY, TOY_RES], ids=["vgg", "resnet"])
def test_full_model_gradient_check(rng, arch):
    m = build_model(arch, seed=2, dtype=np.float64)
    x = rng.standard_normal((3, 3, 8, 8))
    y = np.array([0, 2, 1])
    _, grads = _loss_and_grads(m, x, y)
    grads = {k: v.copy() for k, v in grads.items()}

    def loss():
        logits = m.forward(x, training=True, rng=np.random.default_rng(0))
        return softmax_cross_entropy(logits, y)[0]

    for name, p in m.params.items():
        num = numeric_grad(loss, p)
        assert rel_error(grads[name], num) < 1e-5, name


def test_input_gradient_via_backward_from(rng):
    m = build_model(TOY, seed=5, dtype=np.float64)
    x = rng.standard_normal((1, 3, 8, 8))
    act = m.forward_to(x, "conv2")
    proj = rng.standard_normal(act.shape)
    gx = m.backward_from(proj, "conv2")
    num = numeric_grad(lambda: float((m.forward_to(x, "conv2") * proj).sum()), x)
    assert rel_error(gx, num) < 1e-6


@pytest.mark.parametrize("layer", ["block1.conv1", "block1.conv2", "block2.conv1",
                                   "block2.shortcut", "stem"])
def test_residual_partial_passes(rng, layer):
    m = build_model(TOY_RES, seed=5, dtype=np.float64)
    m.buffers = {k: v + (0.5 if "var" in k else 0.1) for k, v in m.buffers.items()}
    x = rng.standard_normal((1, 3, 8, 8))
    act = m.forward_to(x, layer)
    proj = rng.standard_normal(act.shape)
    gx = m.backward_from(proj, layer)
    num = numeric_grad(lambda: float((m.forward_to(x, layer) * proj).sum()), x)
    assert rel_error(gx, num) < 1e-6


def test_capture_matches_forward_to(rng):
    m = build_model(TOY_RES, seed=1)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
    m.forward(x, capture=["block2.conv2", "block1.conv1"])
    np.testing.assert_array_equal(m.activations["block2.conv2"], m.forward_to(x, "block2.conv2"))
    np.testing.assert_array_equal(m.activations["block1.conv1"], m.forward_to(x, "block1.conv1"))


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bytes(tmp_path, rng):
    m = build_model({"name": "mini_vgg"}, seed=7)
    m.buffers["bn2.running_mean"][:] = rng.standard_normal(32)
    a = save_checkpoint(m, tmp_path / "a.ckpt")
    m2 = load_checkpoint(a, {"name": "mini_vgg"})
    b = save_checkpoint(m2, tmp_path / "b.ckpt")
    assert a.read_bytes() == b.read_bytes()
    x = rng.standard_normal((3, 3, 32, 32)).astype(np.float32)
    assert m.forward(x).tobytes() == m2.forward(x).tobytes()


def test_checkpoint_layout(tmp_path):
    m = build_model(TOY)
    blob = save_checkpoint(m, tmp_path / "t.ckpt").read_bytes()
    assert blob[:4] == b"LGNN"
    version, count = struct.unpack_from("<HI", blob, 4)
    assert version == 1 and count == len(m.params) + len(m.buffers)
    (n,) = struct.unpack_from("<H", blob, 10)
    assert blob[12:12 + n] == b"conv1.weight"
    code, rank = struct.unpack_from("<BB", blob, 12 + n)
    assert (code, rank) == (0, 4)
    assert struct.unpack_from("<4I", blob, 14 + n) == (4, 3, 3, 3)
    assert list(read_checkpoint(tmp_path / "t.ckpt")) == list(m.params) + list(m.buffers)


def test_checkpoint_float64_round_trip():
    t = {"w": np.random.default_rng(0).standard_normal((2, 3))}
    assert decode_tensors(encode_tensors(t))["w"].tobytes() == t["w"].tobytes()


def test_checkpoint_rejects_corruption(tmp_path):
    blob = bytearray(encode_tensors({"w": np.ones((2, 2), np.float32)}))
    bad_magic = bytes(b"XGNN" + blob[4:])
    with pytest.raises(CheckpointFormatError, match="magic"):
        decode_tensors(bad_magic)
    with pytest.raises(CheckpointFormatError):
        decode_tensors(bytes(blob[:-7]))
    flipped = bytearray(blob)
    flipped[20] ^= 0xFF
    with pytest.raises(CheckpointFormatError, match="CRC"):
        decode_tensors(bytes(flipped))


def test_checkpoint_architecture_mismatch(tmp_path):
    p = save_checkpoint(build_model(TOY), tmp_path / "t.ckpt")
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(p, {"name": "mini_vgg"})
    p2 = save_checkpoint(build_model({**TOY, "num_classes": 4}), tmp_path / "u.ckpt")
    with pytest.raises(CheckpointFormatError, match="shape"):
        load_checkpoint(p2, TOY)


def test_astype_and_clone_are_independent():
    m = build_model(TOY)
    m64 = m.astype(np.float64)
    assert m64.dtype == np.float64 and m.dtype == np.float32
    c = m.clone()
    c.params["fc.bias"][:] = 9
    assert not m.params["fc.bias"].any()
    assert isinstance(c, ModelGraph)
