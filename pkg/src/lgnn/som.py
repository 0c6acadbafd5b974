"""Classical Kohonen self-organizing map on a rectangular grid.

Kept as a reference for the neighbourhood function that the gradient
smoother borrows. Unlike :func:`lgnn.neighborhood.gaussian_kernel`, the SOM
neighbourhood is *not* normalised: the winner always receives ``eta = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SomGrid:
    m: int
    n: int
    weights: np.ndarray  # (m*n, d), row-major cell order

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape[0] != self.m * self.n:
            raise ValueError(f"need {self.m * self.n} prototypes, got {self.weights.shape[0]}")

    @property
    def locations(self) -> np.ndarray:
        r, c = np.divmod(np.arange(self.m * self.n), self.n)
        return np.stack([r, c], axis=1).astype(np.float64)

    @classmethod
    def random(cls, m, n, d, seed=0, low=0.0, high=1.0):
        rng = np.random.default_rng(seed)
        return cls(m, n, rng.uniform(low, high, (m * n, d)))

    def copy(self) -> "SomGrid":
        return SomGrid(self.m, self.n, self.weights.copy())


def find_winner(grid: SomGrid, x) -> int:
    """Index of the prototype nearest to ``x``; ties go to the smallest index."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != grid.weights.shape[1:]:
        raise ValueError(f"input dimension {x.shape} != prototype dimension {grid.weights.shape[1:]}")
    d = ((grid.weights - x) ** 2).sum(axis=1)
    return int(np.argmin(d))


def neighborhood(grid: SomGrid, winner: int, sigma: float) -> np.ndarray:
    loc = grid.locations
    d2 = ((loc - loc[winner]) ** 2).sum(axis=1)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def som_update(grid: SomGrid, x, winner: int, alpha: float, sigma: float) -> SomGrid:
    """Pull every prototype toward ``x`` by ``alpha * eta_cj * (x - w_j)``."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=np.float64)
    pull = alpha * neighborhood(grid, winner, sigma)[:, None]
    out = grid.copy()
    # convex-combination form; exact when pull == 1
    out.weights = (1.0 - pull) * out.weights + pull * x
    return out


def _linear(start, end):
    return lambda frac: start + (end - start) * frac


def train_som(grid: SomGrid, data, epochs: int, alpha=(0.5, 0.01), sigma=None,
              seed: int = 0) -> SomGrid:
    """Online SOM training over shuffled samples.

    ``alpha`` and ``sigma`` are either ``(start, end)`` pairs decayed linearly
    over all iterations or callables of the training fraction in ``[0, 1)``.
    """
    data = np.asarray(data, dtype=np.float64)
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if sigma is None:
        sigma = (max(grid.m, grid.n) / 2.0, 0.5)
    alpha_fn = alpha if callable(alpha) else _linear(*alpha)
    sigma_fn = sigma if callable(sigma) else _linear(*sigma)
    rng = np.random.default_rng(seed)
    out = grid.copy()
    loc = out.locations
    total = epochs * len(data)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(data)):
            x = data[i]
            c = int(np.argmin(((out.weights - x) ** 2).sum(axis=1)))
            frac = t / total
            a, s = alpha_fn(frac), sigma_fn(frac)
            eta = np.exp(-((loc - loc[c]) ** 2).sum(axis=1) / (2.0 * s * s))
            pull = a * eta[:, None]
            out.weights = (1.0 - pull) * out.weights + pull * x
            t += 1
    return out


def neighbor_pairs(m: int, n: int) -> np.ndarray:
    """All 4-adjacent cell index pairs of an ``m x n`` grid."""
    idx = np.arange(m * n).reshape(m, n)
    horiz = np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1)
    vert = np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1)
    return np.concatenate([horiz, vert])


def topographic_ratio(grid: SomGrid) -> float:
    """Mean grid-neighbour prototype distance over mean distance of all distinct pairs."""
    w = grid.weights
    pairs = neighbor_pairs(grid.m, grid.n)
    near = np.linalg.norm(w[pairs[:, 0]] - w[pairs[:, 1]], axis=1).mean()
    iu = np.triu_indices(len(w), k=1)
    dist = np.linalg.norm(w[:, None, :] - w[None, :, :], axis=-1)
    return float(near / dist[iu].mean())
