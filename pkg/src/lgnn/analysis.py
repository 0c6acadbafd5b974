"""Inspecting the filter topology of a trained model.

Heat maps are ``(m, n)`` arrays laid out with the same row-major filter-to-cell
mapping the smoother uses, so cell ``(r, c)`` always describes filter
``r * n + c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import normalize
from .exceptions import (ConfigurationError, DegenerateFilterError, DivergenceError,
                         UnsupportedLayerError)
from .neighborhood import SomDims
from .som import neighbor_pairs


@dataclass
class HeatMap:
    grid: np.ndarray
    layer: str
    kind: str  # gram_row | activation | filter_norm
    row: int | None = None
    meta: dict = field(default_factory=dict)

    def header(self) -> list[str]:
        m, n = self.grid.shape
        lines = [f"layer={self.layer}", f"grid={m}x{n}", f"kind={self.kind}"]
        if self.row is not None:
            lines.append(f"row={self.row}")
        lines += [f"{k}={v}" for k, v in self.meta.items()]
        return lines

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w") as f:
            for line in self.header():
                f.write(f"# {line}\n")
            np.savetxt(f, self.grid, fmt="%.6e", delimiter=",")
        return path

    @classmethod
    def from_csv(cls, path) -> "HeatMap":
        meta = {}
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
        grid = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        m, n = (int(s) for s in meta.pop("grid").split("x"))
        row = meta.pop("row", None)
        return cls(grid.reshape(m, n), meta.pop("layer"), meta.pop("kind"),
                   None if row is None else int(row), meta)

    def to_pgm(self, path) -> Path:
        """8-bit grayscale, min-max scaled (a constant map becomes mid-gray)."""
        g = self.grid.astype(np.float64)
        lo, hi = g.min(), g.max()
        scaled = np.full(g.shape, 0.5) if hi == lo else (g - lo) / (hi - lo)
        pix = np.rint(scaled * 255).astype(np.uint8)
        comments = self.header() + [f"min={lo:.6e}", f"max={hi:.6e}"]
        return write_pnm(path, pix, comments)


# ---------------------------------------------------------------------------
# portable anymap I/O


def write_pnm(path, pixels: np.ndarray, comments=()) -> Path:
    """Binary PGM (``(h, w)``) or PPM (``(h, w, 3)``) with ``#`` comment lines."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    magic = b"P6" if pixels.ndim == 3 else b"P5"
    h, w = pixels.shape[:2]
    head = magic + b"\n"
    for c in comments:
        head += f"# {c}\n".encode()
    head += f"{w} {h}\n255\n".encode()
    path = Path(path)
    path.write_bytes(head + np.ascontiguousarray(pixels).tobytes())
    return path


def read_pnm(path):
    """Returns ``(pixels, comments)`` for files written by :func:`write_pnm`."""
    blob = Path(path).read_bytes()
    magic, pos = blob[:2], 3
    comments, fields = [], []
    while len(fields) < 3:
        end = blob.index(b"\n", pos)
        line = blob[pos:end].decode()
        pos = end + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            fields += [int(t) for t in line.split()]
    w, h, _ = fields
    shape = (h, w, 3) if magic == b"P6" else (h, w)
    return np.frombuffer(blob, np.uint8, int(np.prod(shape)), pos).reshape(shape), comments


# ---------------------------------------------------------------------------
# filter statistics


def layer_weight(model, layer: str) -> np.ndarray:
    name = layer if layer.endswith(".weight") else f"{layer}.weight"
    if model.roles.get(name) != "conv_weight":
        raise ConfigurationError(f"{layer!r} is not a conv layer; known: {model.layer_names}")
    return model.params[name]


def gram_matrix(weights, cosine: bool = True) -> np.ndarray:
    """Pairwise similarity of flattened filters (cosine by default, else raw dot)."""
    f = np.asarray(weights, dtype=np.float64).reshape(len(weights), -1)
    if cosine:
        norms = np.linalg.norm(f, axis=1, keepdims=True)
        f = np.divide(f, norms, out=np.zeros_like(f), where=norms > 0)
    return f @ f.T


def gram_heatmaps(model, layer: str, rows, dims: SomDims | None = None,
                  cosine: bool = True) -> list[HeatMap]:
    """Rows of the zero-diagonal Gram matrix, each laid out on the filter grid."""
    w = layer_weight(model, layer)
    dims = dims or SomDims.default()
    m, n = dims.grid_shape(w.shape[0])
    g = gram_matrix(w, cosine)
    np.fill_diagonal(g, 0.0)
    maps = []
    for r in rows:
        if not 0 <= int(r) < len(g):
            raise IndexError(f"row {r} outside [0, {len(g)})")
        maps.append(HeatMap(g[int(r)].reshape(m, n), layer, "gram_row", int(r)))
    return maps


def neighbor_similarity_of(weights, dims: SomDims) -> float:
    """Mean cosine similarity over all 4-adjacent filter pairs on the grid."""
    m, n = dims.grid_shape(len(weights))
    g = gram_matrix(weights, cosine=True)
    pairs = neighbor_pairs(m, n)
    return float(g[pairs[:, 0], pairs[:, 1]].mean())


def neighbor_similarity(model, layer: str, dims: SomDims | None = None) -> float:
    return neighbor_similarity_of(layer_weight(model, layer), dims or SomDims.default())


def magnitude_stats_of(weights):
    norms = np.linalg.norm(np.asarray(weights, np.float64).reshape(len(weights), -1), axis=1)
    if (norms == 0).any():
        raise DegenerateFilterError("zero-norm filter: log magnitude undefined")
    logs = np.log(norms)
    return float(norms.min()), float(norms.max()), float(logs.std())


def magnitude_stats(model, layer: str):
    """``(min, max, stddev_of_log)`` of per-filter L2 norms (population std, natural log)."""
    return magnitude_stats_of(layer_weight(model, layer))


def filter_norm_map(model, layer: str, dims: SomDims | None = None) -> HeatMap:
    w = layer_weight(model, layer)
    m, n = (dims or SomDims.default()).grid_shape(w.shape[0])
    norms = np.linalg.norm(w.reshape(len(w), -1).astype(np.float64), axis=1)
    return HeatMap(norms.reshape(m, n), layer, "filter_norm")


# ---------------------------------------------------------------------------
# activations


def class_activation_map(model, images, layer: str, dims: SomDims | None = None,
                         mean=None, std=None, batch_size: int = 256) -> HeatMap:
    """Per-channel activation of ``layer`` averaged over batch and space (eval mode)."""
    images = np.asarray(images)
    if len(images) == 0:
        raise ValueError("empty image batch")
    layer_weight(model, layer)
    total = None
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        if mean is not None:
            x = normalize(x, mean, std)
        model.forward(x, training=False, capture=[layer])
        act = model.activations[layer].astype(np.float64)
        s = act.sum(axis=(0, 2, 3)) / (act.shape[2] * act.shape[3])
        total = s if total is None else total + s
    avg = total / len(images)
    m, n = (dims or SomDims.default()).grid_shape(len(avg))
    return HeatMap(avg.reshape(m, n), layer, "activation", meta={"images": len(images)})


@dataclass
class MaximizationResult:
    image: np.ndarray
    activation: float
    history: list
    monotone: bool


def activation_maximization(model, layer: str, channel: int, steps: int = 100,
                            step_size: float = 0.05, seed: int = 0, clamp=(0.0, 1.0),
                            mean=None, std=None, image_shape=None) -> MaximizationResult:
    """Gradient ascent on the mean spatial activation of one channel.

    Starts from seeded uniform noise in pixel space; ``mean``/``std`` apply the
    training normalisation before the model; pixels are clipped to ``clamp``
    after every step (``None`` disables clipping).
    """
    shape = tuple(image_shape or model.arch.get("input_shape", (3, 32, 32)))
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, (1, *shape)).astype(model.dtype)
    scale = 1.0 if std is None else 1.0 / np.asarray(std, model.dtype)[None, :, None, None]

    def objective(img):
        inp = img if mean is None else normalize(img, mean, std).astype(model.dtype)
        act = model.forward_to(inp, layer)
        if not 0 <= channel < act.shape[1]:
            raise IndexError(f"channel {channel} outside [0, {act.shape[1]})")
        value = float(act[0, channel].mean())
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite activation at {layer}[{channel}]")
        return act, value

    act, value = objective(x)
    history = [value]
    for _ in range(steps):
        g = np.zeros_like(act)
        g[0, channel] = 1.0 / (act.shape[2] * act.shape[3])
        gx = model.backward_from(g, layer) * scale
        x = x + model.dtype.type(step_size) * gx.astype(model.dtype)
        if clamp is not None:
            x = np.clip(x, clamp[0], clamp[1])
        act, value = objective(x)
        history.append(value)
    h = np.asarray(history)
    monotone = bool(np.all(np.diff(h) >= -1e-6 * np.maximum(1.0, np.abs(h[:-1]))))
    return MaximizationResult(x[0], value, history, monotone)


# ---------------------------------------------------------------------------
# first-layer filter tiles


def first_layer_tiles(model, dims: SomDims | None = None, layer: str | None = None) -> np.ndarray:
    """Each filter min-max normalised on its own, tiled on the grid with 1-px black separators.

    Returns an ``(H, W, 3)`` uint8 buffer.
    """
    layer = layer or model.layer_names[0]
    w = layer_weight(model, layer).astype(np.float64)
    c_out, c_in, kh, kw = w.shape
    if c_in != 3:
        raise UnsupportedLayerError(f"{layer} has {c_in} input channels; need 3 for RGB tiles")
    m, n = (dims or SomDims.default()).grid_shape(c_out)
    tiles = np.zeros((m * kh + m - 1, n * kw + n - 1, 3))
    for k in range(c_out):
        f = w[k]
        lo, hi = f.min(), f.max()
        f = np.full_like(f, 0.5) if hi == lo else (f - lo) / (hi - lo)
        r, c = divmod(k, n)
        tiles[r * (kh + 1):r * (kh + 1) + kh, c * (kw + 1):c * (kw + 1) + kw] = f.transpose(1, 2, 0)
    return np.rint(tiles * 255).astype(np.uint8)


def export_first_layer(model, path, dims: SomDims | None = None) -> np.ndarray:
    tiles = first_layer_tiles(model, dims)
    layer = model.layer_names[0]
    m, n = (dims or SomDims.default()).grid_shape(layer_weight(model, layer).shape[0])
    write_pnm(path, tiles, [f"layer={layer}", f"grid={m}x{n}", "kind=filters"])
    return tiles
