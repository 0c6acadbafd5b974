import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgnn.som import (SomGrid, find_winner, neighbor_pairs, som_update, topographic_ratio,
                      train_som)


def test_exact_match_wins(rng):
    g = SomGrid.random(3, 3, 4, seed=1)
    assert find_winner(g, g.weights[5]) == 5


def test_nearer_prototype():
    g = SomGrid(1, 2, np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert find_winner(g, [0.9, 0.9]) == 1


def test_tie_breaks_to_smallest_index():
    g = SomGrid(1, 3, np.array([[1.0], [-1.0], [1.0]]))
    assert find_winner(g, [0.0]) == 0


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_winner_matches_linear_scan(seed):
    r = np.random.default_rng(seed)
    g = SomGrid.random(5, 5, 10, seed=seed)
    x = r.uniform(0, 1, 10)
    best, best_d = None, math.inf
    for j, w in enumerate(g.weights):
        d = sum((a - b) ** 2 for a, b in zip(x, w))
        if d < best_d:
            best, best_d = j, d
    assert find_winner(g, x) == best


def test_full_pull_on_winner():
    g = SomGrid.random(3, 3, 2, seed=0)
    x = np.array([0.3, -0.7])
    out = som_update(g, x, 4, alpha=1.0, sigma=1.0)
    assert np.array_equal(out.weights[4], x)


def test_tiny_sigma_moves_only_winner():
    g = SomGrid.random(3, 3, 2, seed=0)
    out = som_update(g, [5.0, 5.0], 0, alpha=0.5, sigma=1e-3)
    moved = np.any(out.weights != g.weights, axis=1)
    assert moved.tolist() == [True] + [False] * 8


def test_update_matches_hand_table():
    # eta on a 3x3 grid around the centre cell at sigma = 1
    g = SomGrid(3, 3, np.zeros((9, 1)))
    out = som_update(g, [1.0], 4, alpha=0.5, sigma=1.0)
    edge, corner = math.exp(-0.5), math.exp(-1.0)
    table = [corner, edge, corner, edge, 1.0, edge, corner, edge, corner]
    np.testing.assert_allclose(out.weights[:, 0], [0.5 * t for t in table], rtol=1e-15)


def test_delta_neighbourhood_is_online_kmeans():
    g = SomGrid.random(2, 2, 3, seed=2)
    x = np.array([0.2, 0.4, 0.9])
    c = find_winner(g, x)
    out = som_update(g, x, c, alpha=0.25, sigma=1e-4)
    expected = g.weights.copy()
    expected[c] += 0.25 * (x - expected[c])
    np.testing.assert_allclose(out.weights, expected, rtol=0, atol=1e-15)


def test_update_validation():
    g = SomGrid.random(2, 2, 1)
    with pytest.raises(ValueError):
        som_update(g, [0.0], 0, alpha=0.0, sigma=1.0)
    with pytest.raises(ValueError):
        som_update(g, [0.0], 0, alpha=0.5, sigma=0.0)


def test_zero_epochs_unchanged():
    g = SomGrid.random(4, 4, 2, seed=3)
    out = train_som(g, np.random.default_rng(0).uniform(size=(10, 2)), epochs=0)
    assert np.array_equal(out.weights, g.weights)


def test_single_point_dataset_converges():
    g = SomGrid.random(4, 4, 2, seed=3)
    p = np.array([[0.25, 0.75]])
    out = train_som(g, p, epochs=200, alpha=(0.5, 0.1), sigma=(10.0, 10.0))
    np.testing.assert_allclose(out.weights, np.tile(p, (16, 1)), atol=1e-6)


def test_empty_dataset():
    with pytest.raises(ValueError):
        train_som(SomGrid.random(2, 2, 2), np.zeros((0, 2)), epochs=1)


def test_neighbor_pairs_count():
    assert len(neighbor_pairs(8, 8)) == 2 * 8 * 7
    assert len(neighbor_pairs(8, 4)) == 8 * 3 + 7 * 4


def test_topographic_ordering_on_uniform_square():
    ratios = []
    for seed in range(3):
        data = np.random.default_rng(100 + seed).uniform(size=(500, 2))
        g = train_som(SomGrid.random(8, 8, 2, seed=seed), data, epochs=10, seed=seed)
        ratios.append(topographic_ratio(g))
    assert max(ratios) <= 0.5
