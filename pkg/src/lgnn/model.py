"""Trainable graphs built from :mod:`lgnn.layers`.

Two desk-scale families are registered:

``mini_vgg``
    ``cfg`` is a VGG-style list of conv widths and ``"M"`` (2x2 max-pool)
    tokens, followed by flatten and one linear head.
``mini_resnet``
    3x3 stem conv, then stages of residual blocks (conv-bn-relu-[dropout]-conv-bn
    plus identity or 1x1 conv shortcut, relu after the sum), global average
    pooling and a linear head. A stage with stride 2 starts with a 2x2 max-pool.

Parameters live in one ordered registry keyed by canonical names such as
``conv2.weight`` or ``block1.shortcut.weight``; gradients use the same keys.
"""
from __future__ import annotations

import copy
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .exceptions import CheckpointFormatError, ConfigurationError, ShapeError
from .neighborhood import SomDims

ROLES = ("conv_weight", "conv_bias", "bn", "fc")
PLACEMENTS = ("first_layer", "main_branch", "shortcut", "fc_adjacent")

DEFAULT_VGG = {"name": "mini_vgg", "cfg": [16, "M", 32, "M", 64, "M"], "num_classes": 4,
               "input_shape": [3, 32, 32]}
DEFAULT_RESNET = {"name": "mini_resnet", "stem": 16, "stages": [[16, 1], [32, 2]],
                  "blocks_per_stage": 1, "dropout": 0.3, "num_classes": 4,
                  "input_shape": [3, 32, 32]}


# ---------------------------------------------------------------------------
# nodes


class Conv:
    def __init__(self, name, stride=1, pad=1, bias=False):
        self.name, self.stride, self.pad, self.bias = name, stride, pad, bias
        self._x = None

    def forward(self, x, model, training, rng):
        self._x = x
        b = model.params[f"{self.name}.bias"] if self.bias else None
        return L.conv2d(x, model.params[f"{self.name}.weight"], b, self.stride, self.pad)

    def backward(self, grad, model, grads):
        gx, gw, gb = L.conv2d_backward(grad, self._x, model.params[f"{self.name}.weight"],
                                       self.stride, self.pad)
        grads[f"{self.name}.weight"] += gw
        if self.bias:
            grads[f"{self.name}.bias"] += gb
        return gx


class BatchNorm:
    def __init__(self, name):
        self.name = name
        self._cache = None

    def forward(self, x, model, training, rng):
        p, buf = model.params, model.buffers
        out, self._cache = L.batchnorm2d_forward(
            x, p[f"{self.name}.gamma"], p[f"{self.name}.beta"],
            buf[f"{self.name}.running_mean"], buf[f"{self.name}.running_var"], training)
        return out

    def backward(self, grad, model, grads):
        dx, dg, db = L.batchnorm2d_backward(grad, self._cache)
        grads[f"{self.name}.gamma"] += dg
        grads[f"{self.name}.beta"] += db
        return dx


class ReLU:
    def __init__(self, tap=None):
        self.tap = tap
        self._x = None

    def forward(self, x, model, training, rng):
        self._x = x
        out = L.relu(x)
        if self.tap is not None and self.tap in model._capture:
            model.activations[self.tap] = out
        return out

    def backward(self, grad, model, grads):
        return L.relu_backward(grad, self._x)


class MaxPool:
    def __init__(self, k=2):
        self.k = k
        self._cache = None

    def forward(self, x, model, training, rng):
        out, self._cache = L.maxpool2d_forward(x, self.k)
        return out

    def backward(self, grad, model, grads):
        return L.maxpool2d_backward(grad, self._cache)


class Dropout:
    def __init__(self, rate):
        self.rate = rate
        self._mask = None

    def forward(self, x, model, training, rng):
        out, self._mask = L.dropout_forward(x, self.rate, training, rng)
        return out

    def backward(self, grad, model, grads):
        return L.dropout_backward(grad, self._mask)


class Flatten:
    def __init__(self):
        self._shape = None

    def forward(self, x, model, training, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, model, grads):
        return grad.reshape(self._shape)


class GlobalAvgPool:
    def __init__(self):
        self._shape = None

    def forward(self, x, model, training, rng):
        out, self._shape = L.global_avgpool_forward(x)
        return out

    def backward(self, grad, model, grads):
        return L.global_avgpool_backward(grad, self._shape)


class Linear:
    def __init__(self, name):
        self.name = name
        self._x = None

    def forward(self, x, model, training, rng):
        self._x = x
        return L.linear_forward(x, model.params[f"{self.name}.weight"],
                                model.params[f"{self.name}.bias"])

    def backward(self, grad, model, grads):
        dx, dw, db = L.linear_backward(grad, self._x, model.params[f"{self.name}.weight"])
        grads[f"{self.name}.weight"] += dw
        grads[f"{self.name}.bias"] += db
        return dx


class ResidualBlock:
    """conv-bn-relu-[dropout]-conv-bn + shortcut, relu after the sum."""

    def __init__(self, name, in_ch, out_ch, stride=1, dropout=0.0):
        self.name = name
        self.in_ch, self.out_ch, self.stride = in_ch, out_ch, stride
        self.main = [Conv(f"{name}.conv1", stride, 1), BatchNorm(f"{name}.bn1"),
                     ReLU(tap=f"{name}.conv1")]
        if dropout > 0:
            self.main.append(Dropout(dropout))
        self.main += [Conv(f"{name}.conv2", 1, 1), BatchNorm(f"{name}.bn2")]
        self.shortcut = None
        if in_ch != out_ch or stride != 1:
            self.shortcut = Conv(f"{name}.shortcut", stride, 0, bias=True)
        self.out_relu = ReLU(tap=f"{name}.conv2")

    @property
    def taps(self):
        taps = [f"{self.name}.conv1", f"{self.name}.conv2"]
        if self.shortcut is not None:
            taps.append(f"{self.name}.shortcut")
        return taps

    def forward(self, x, model, training, rng, stop_at=None):
        h = x
        for node in self.main:
            h = node.forward(h, model, training, rng)
            if stop_at is not None and getattr(node, "tap", None) == stop_at:
                return h
        if self.shortcut is not None:
            s = self.shortcut.forward(x, model, training, rng)
            tap = f"{self.name}.shortcut"
            if tap in model._capture:
                model.activations[tap] = s
            if stop_at == tap:
                return s
        else:
            s = x
        return self.out_relu.forward(h + s, model, training, rng)

    def backward(self, grad, model, grads, start_at=None):
        if start_at == f"{self.name}.shortcut":
            return self.shortcut.backward(grad, model, grads)
        nodes = self.main
        if start_at == f"{self.name}.conv1":
            nodes = self.main[:3]
        else:
            grad = self.out_relu.backward(grad, model, grads)
        g_short = grad
        for node in reversed(nodes):
            grad = node.backward(grad, model, grads)
        if start_at == f"{self.name}.conv1":
            return grad
        if self.shortcut is not None:
            g_short = self.shortcut.backward(g_short, model, grads)
        return grad + g_short


# ---------------------------------------------------------------------------
# graph


@dataclass
class ModelGraph:
    """Ordered nodes plus the named parameter and buffer registries."""

    nodes: list
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    roles: dict = field(default_factory=dict)
    placement: dict = field(default_factory=dict)
    arch: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)

    def __post_init__(self):
        self._capture = set()
        self.activations = {}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def conv_weights(self):
        return [k for k, r in self.roles.items() if r == "conv_weight"]

    @property
    def layer_names(self):
        """Conv layer names (weight names without the ``.weight`` suffix)."""
        return [k[: -len(".weight")] for k in self.conv_weights]

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        return self.grads

    def forward(self, x, training=False, rng=None, capture=()):
        """Run the graph; activations named in ``capture`` are stored in ``self.activations``."""
        x = np.asarray(x, dtype=self.dtype)
        expected = tuple(self.arch.get("input_shape", x.shape[1:]))
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError(f"input batch shape {x.shape} does not match model input {expected}")
        if training and rng is None:
            rng = np.random.default_rng(0)
        self._capture = set(capture)
        self.activations = {}
        for node in self.nodes:
            x = node.forward(x, self, training, rng)
        self._capture = set()
        return x

    def backward(self, grad_logits):
        """Accumulate parameter gradients into ``self.grads`` and return them."""
        if not self.grads:
            self.zero_grad()
        grad = grad_logits
        for node in reversed(self.nodes):
            grad = node.backward(grad, self, self.grads)
        return self.grads

    # partial passes used by activation maximisation -------------------

    def _locate(self, layer):
        for i, node in enumerate(self.nodes):
            if isinstance(node, ResidualBlock) and layer in node.taps:
                return i, node
            if getattr(node, "tap", None) == layer:
                return i, None
        for i, node in enumerate(self.nodes):
            # a conv with no activation after it is its own tap
            if isinstance(node, Conv) and node.name == layer:
                return i, None
        raise ConfigurationError(f"unknown layer {layer!r}; known: {self.layer_names}")

    def forward_to(self, x, layer):
        """Eval-mode forward pass that stops at ``layer``'s activation."""
        x = np.asarray(x, dtype=self.dtype)
        i, block = self._locate(layer)
        self._capture = set()
        for node in self.nodes[:i]:
            x = node.forward(x, self, False, None)
        if block is not None:
            return block.forward(x, self, False, None, stop_at=layer)
        return self.nodes[i].forward(x, self, False, None)

    def backward_from(self, grad, layer):
        """Gradient w.r.t. the input of ``forward_to``; parameter grads are discarded."""
        i, block = self._locate(layer)
        scratch = {k: np.zeros_like(v) for k, v in self.params.items()}
        if block is not None:
            grad = block.backward(grad, self, scratch, start_at=layer)
        else:
            grad = self.nodes[i].backward(grad, self, scratch)
        for node in reversed(self.nodes[:i]):
            grad = node.backward(grad, self, scratch)
        return grad

    def clone(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        m = self.clone()
        m.params = {k: v.astype(dtype) for k, v in m.params.items()}
        m.buffers = {k: v.astype(dtype) for k, v in m.buffers.items()}
        m.grads = {}
        return m


class _Builder:
    def __init__(self, rng, dtype, som_dims):
        self.rng, self.dtype, self.som_dims = rng, dtype, som_dims
        self.params, self.buffers, self.roles, self.placement = {}, {}, {}, {}

    def conv(self, name, c_in, c_out, k, placement, bias=False):
        if c_out not in self.som_dims:
            raise ConfigurationError(
                f"no grid factorisation configured for {c_out} filters ({name})")
        std = np.sqrt(2.0 / (c_in * k * k))
        self.params[f"{name}.weight"] = (self.rng.standard_normal((c_out, c_in, k, k)) * std
                                         ).astype(self.dtype)
        self.roles[f"{name}.weight"] = "conv_weight"
        self.placement[f"{name}.weight"] = placement
        if bias:
            self.params[f"{name}.bias"] = np.zeros(c_out, self.dtype)
            self.roles[f"{name}.bias"] = "conv_bias"

    def bn(self, name, c):
        self.params[f"{name}.gamma"] = np.ones(c, self.dtype)
        self.params[f"{name}.beta"] = np.zeros(c, self.dtype)
        self.roles[f"{name}.gamma"] = self.roles[f"{name}.beta"] = "bn"
        self.buffers[f"{name}.running_mean"] = np.zeros(c, self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(c, self.dtype)

    def fc(self, name, d_in, d_out):
        std = np.sqrt(2.0 / d_in)
        self.params[f"{name}.weight"] = (self.rng.standard_normal((d_out, d_in)) * std
                                         ).astype(self.dtype)
        self.params[f"{name}.bias"] = np.zeros(d_out, self.dtype)
        self.roles[f"{name}.weight"] = self.roles[f"{name}.bias"] = "fc"


def _build_vgg(arch, b):
    c_in, h, w = arch["input_shape"]
    nodes = []
    n_conv = 0
    for item in arch["cfg"]:
        if item == "M":
            nodes.append(MaxPool(2))
            h, w = h // 2, w // 2
            continue
        n_conv += 1
        name = f"conv{n_conv}"
        b.conv(name, c_in, int(item), 3, "first_layer" if n_conv == 1 else "main_branch")
        b.bn(f"bn{n_conv}", int(item))
        nodes += [Conv(name, 1, 1), BatchNorm(f"bn{n_conv}"), ReLU(tap=name)]
        c_in = int(item)
    if n_conv == 0:
        raise ConfigurationError("mini_vgg needs at least one conv layer")
    nodes.append(Flatten())
    if arch.get("dropout", 0):
        nodes.append(Dropout(arch["dropout"]))
    b.fc("fc", c_in * h * w, arch["num_classes"])
    nodes.append(Linear("fc"))
    return nodes


def _build_resnet(arch, b):
    c_in = arch["input_shape"][0]
    stem = int(arch["stem"])
    b.conv("stem", c_in, stem, 3, "first_layer")
    b.bn("stem_bn", stem)
    nodes = [Conv("stem", 1, 1), BatchNorm("stem_bn"), ReLU(tap="stem")]
    c = stem
    n_block = 0
    drop = float(arch.get("dropout", 0.0))
    for width, stride in arch["stages"]:
        if int(stride) == 2:
            # convs stay stride 1; stages downsample with a 2x2 max-pool
            nodes.append(MaxPool(2))
        elif int(stride) != 1:
            raise ConfigurationError("stage stride must be 1 or 2")
        for _ in range(int(arch.get("blocks_per_stage", 1))):
            n_block += 1
            blk = ResidualBlock(f"block{n_block}", c, int(width), 1, drop)
            b.conv(f"{blk.name}.conv1", c, width, 3, "main_branch")
            b.bn(f"{blk.name}.bn1", width)
            b.conv(f"{blk.name}.conv2", width, width, 3, "main_branch")
            b.bn(f"{blk.name}.bn2", width)
            if blk.shortcut is not None:
                b.conv(f"{blk.name}.shortcut", c, width, 1, "shortcut", bias=True)
            nodes.append(blk)
            c = int(width)
    b.fc("fc", c, arch["num_classes"])
    nodes += [GlobalAvgPool(), Linear("fc")]
    return nodes


ARCHITECTURES = {"mini_vgg": _build_vgg, "mini_resnet": _build_resnet}


def build_model(arch: dict, som_dims: SomDims | None = None, seed: int = 0,
                dtype=np.float32) -> ModelGraph:
    """Construct a registered architecture with seeded He fan-in initialisation."""
    name = arch.get("name")
    if name not in ARCHITECTURES:
        raise ConfigurationError(f"unknown architecture {name!r}; known: {sorted(ARCHITECTURES)}")
    base = DEFAULT_VGG if name == "mini_vgg" else DEFAULT_RESNET
    arch = {**copy.deepcopy(base), **copy.deepcopy(arch)}
    som_dims = som_dims if som_dims is not None else SomDims.default()
    b = _Builder(np.random.default_rng(seed), np.dtype(dtype), som_dims)
    nodes = ARCHITECTURES[name](arch, b)
    return ModelGraph(nodes=nodes, params=b.params, buffers=b.buffers, roles=b.roles,
                      placement=b.placement, arch=arch)


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"LGNN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def encode_tensors(tensors: dict) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<HI", VERSION, len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise CheckpointFormatError(f"unsupported dtype {arr.dtype} for {name}")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def decode_tensors(blob: bytes) -> dict:
    if len(blob) < 14:
        raise CheckpointFormatError("checkpoint truncated")
    if blob[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {blob[:4]!r}")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise CheckpointFormatError("CRC mismatch (corrupt or truncated checkpoint)")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    pos, end = 10, len(blob) - 4
    tensors = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            name = blob[pos + 2:pos + 2 + n].decode("utf-8")
            pos += 2 + n
            code, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            dt = _DTYPES.get(code)
            if dt is None:
                raise CheckpointFormatError(f"unknown dtype code {code}")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > end:
                raise CheckpointFormatError("checkpoint truncated")
            tensors[name] = np.frombuffer(blob, dt, int(np.prod(shape, dtype=np.int64)),
                                          pos).reshape(shape).astype(dt.newbyteorder("="))
            pos += nbytes
    except struct.error as exc:
        raise CheckpointFormatError(f"checkpoint truncated: {exc}") from None
    if pos != end:
        raise CheckpointFormatError("trailing bytes after last tensor")
    return tensors


def save_checkpoint(model: ModelGraph, path) -> Path:
    path = Path(path)
    path.write_bytes(encode_tensors({**model.params, **model.buffers}))
    return path


def read_checkpoint(path) -> dict:
    return decode_tensors(Path(path).read_bytes())


def load_checkpoint(path, arch: dict, som_dims: SomDims | None = None) -> ModelGraph:
    """Rebuild ``arch`` and fill it with the tensors stored at ``path``."""
    tensors = read_checkpoint(path)
    dtype = next(iter(tensors.values())).dtype if tensors else np.float32
    model = build_model(arch, som_dims, seed=0, dtype=dtype)
    expected = list(model.params) + list(model.buffers)
    if sorted(expected) != sorted(tensors):
        missing = set(expected) - set(tensors)
        extra = set(tensors) - set(expected)
        raise CheckpointFormatError(
            f"checkpoint does not match architecture (missing {sorted(missing)}, "
            f"unexpected {sorted(extra)})")
    for reg in (model.params, model.buffers):
        for k in reg:
            if tensors[k].shape != reg[k].shape:
                raise CheckpointFormatError(
                    f"{k}: checkpoint shape {tensors[k].shape} != architecture {reg[k].shape}")
            reg[k] = tensors[k]
    return model
