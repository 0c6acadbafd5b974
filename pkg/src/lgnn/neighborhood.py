"""Locality-guided gradient smoothing.

A conv layer's ``c_out`` filters are laid out row-major on an ``m x n`` grid
(filter ``k`` sits at cell ``(k // n, k % n)``). After backprop, each of the
``c_in * s * s`` weight positions forms an ``m x n`` field of gradients; every
field is replication-padded and low-pass filtered with a Gaussian
neighbourhood kernel, then the result is laid back out as
``(c_out, c_in, s, s)``. The optimizer then consumes the smoothed gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, ShapeError
from .tensor import conv2d, pad_replicate_2d

SIGMA_MIN = 1e-6
SELECTIONS = ("off", "main_branch", "resblocks", "all")
SIGMA_MODES = ("constant", "decreasing")


@dataclass(frozen=True)
class NeighborhoodKernel:
    size: int
    sigma: float
    taps: np.ndarray
    normalized: bool = True

    @property
    def is_identity(self) -> bool:
        c = self.size // 2
        delta = np.zeros_like(self.taps)
        delta[c, c] = 1
        return bool(np.array_equal(self.taps, delta))


def gaussian_kernel(size: int = 3, sigma: float = 0.5, normalize: bool = True) -> NeighborhoodKernel:
    """Square Gaussian window; falls back to the delta kernel when ``sigma <= SIGMA_MIN``."""
    if size < 1 or size % 2 == 0:
        raise ConfigurationError(f"kernel size must be a positive odd integer, got {size}")
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    r = size // 2
    if sigma <= SIGMA_MIN:
        taps = np.zeros((size, size))
        taps[r, r] = 1.0
    else:
        d = np.arange(-r, r + 1, dtype=np.float64)
        taps = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
        if normalize:
            taps /= taps.sum()
    taps.setflags(write=False)
    return NeighborhoodKernel(size, float(sigma), taps, normalize)


@dataclass
class SomDims:
    """Lookup table from filter count to grid shape ``(m, n)``."""

    lookup: dict = field(default_factory=dict)

    def __post_init__(self):
        table = {}
        for c, (m, n) in self.lookup.items():
            c, m, n = int(c), int(m), int(n)
            if m * n != c:
                raise ConfigurationError(f"grid {m}x{n} does not hold {c} filters")
            table[c] = (m, n)
        self.lookup = table

    def __contains__(self, c_out) -> bool:
        return int(c_out) in self.lookup

    def grid_shape(self, c_out: int) -> tuple[int, int]:
        try:
            return self.lookup[int(c_out)]
        except KeyError:
            raise ConfigurationError(f"no grid shape configured for {c_out} filters") from None

    @staticmethod
    def closest_square(c_out: int) -> tuple[int, int]:
        """Factorisation ``m * n == c_out`` with ``m >= n`` and ``m - n`` minimal."""
        n = int(math.isqrt(c_out))
        while c_out % n:
            n -= 1
        return c_out // n, n

    @classmethod
    def from_widths(cls, widths) -> "SomDims":
        return cls({int(c): cls.closest_square(int(c)) for c in widths})

    @classmethod
    def default(cls) -> "SomDims":
        return cls.from_widths([2 ** k for k in range(2, 11)])

    def to_dict(self) -> dict:
        return {str(c): list(mn) for c, mn in sorted(self.lookup.items())}

    @classmethod
    def from_dict(cls, d: dict) -> "SomDims":
        return cls({int(c): tuple(mn) for c, mn in d.items()})


def grid_shape(dims: SomDims, c_out: int) -> tuple[int, int]:
    return dims.grid_shape(c_out)


def filters_to_grid(t: np.ndarray, dims: SomDims) -> np.ndarray:
    """``(c_out, ...)`` -> ``(prod(...), m, n)`` with filter ``k`` at cell ``(k // n, k % n)``."""
    m, n = dims.grid_shape(t.shape[0])
    return np.ascontiguousarray(t.reshape(t.shape[0], -1).T).reshape(-1, m, n)


def grid_to_filters(g: np.ndarray, shape) -> np.ndarray:
    c_out = shape[0]
    return np.ascontiguousarray(g.reshape(-1, c_out).T).reshape(shape)


def smooth_gradients(grad: np.ndarray, kernel: NeighborhoodKernel, dims: SomDims) -> np.ndarray:
    """Low-pass filter a ``(c_out, c_in, s, s)`` gradient over its filter grid."""
    grad = np.asarray(grad)
    if grad.ndim < 2:
        raise ShapeError(f"expected a conv weight gradient, got shape {grad.shape}")
    if kernel.is_identity:
        return grad.copy()
    fields = filters_to_grid(grad, dims)  # (P, m, n)
    r = kernel.size // 2
    padded = pad_replicate_2d(fields, r)[:, None]  # (P, 1, m+2r, n+2r)
    taps = kernel.taps.astype(grad.dtype)[None, None]
    out = conv2d(padded, taps)[:, 0]
    return grid_to_filters(out, grad.shape)


@dataclass
class LgnnPolicy:
    selection: str = "off"
    sigma_mode: str = "constant"
    kernel_size: int = 3
    sigma: float = 0.5
    normalize: bool = True

    def __post_init__(self):
        if self.selection not in SELECTIONS:
            raise ConfigurationError(f"selection must be one of {SELECTIONS}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigurationError(f"sigma_mode must be one of {SIGMA_MODES}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError("kernel_size must be a positive odd integer")

    @property
    def enabled(self) -> bool:
        return self.selection != "off"

    def kernel_at_epoch(self, epoch: int, total_epochs: int) -> NeighborhoodKernel:
        return gaussian_kernel(self.kernel_size, sigma_at_epoch(self, epoch, total_epochs),
                               self.normalize)


def sigma_at_epoch(policy: LgnnPolicy, epoch: int, total_epochs: int) -> float:
    if policy.sigma_mode == "constant":
        return policy.sigma
    if total_epochs <= 0 or not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return policy.sigma * (1 - epoch / total_epochs)


_SELECTED_TAGS = {
    "off": (),
    "main_branch": ("main_branch",),
    "resblocks": ("main_branch", "shortcut"),
    "all": ("first_layer", "main_branch", "shortcut", "fc_adjacent"),
}


def select_targets(policy: LgnnPolicy, model) -> list[str]:
    """Names of the conv weights that receive smoothing, in registry order."""
    tags = _SELECTED_TAGS[policy.selection]
    return [name for name in model.conv_weights if model.placement[name] in tags]


def apply_lgnn(grads: dict, targets, kernel: NeighborhoodKernel, dims: SomDims) -> dict:
    """Replace each targeted gradient with its smoothed version (in the dict)."""
    for name in targets:
        grads[name] = smooth_gradients(grads[name], kernel, dims)
    return grads
