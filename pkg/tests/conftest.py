from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from forestmark.dataset import Dataset
from forestmark.forest import Ensemble, Internal, Leaf

ROOT = Path(__file__).resolve().parents[1]
BREAST_CANCER = ROOT / "data" / "breast_cancer.csv"

# criterion lines collected by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def two_tree_pair(scale: float = 1.0):
    """Two depth-2 trees over three features; thresholds multiplied by ``scale``."""
    t1 = Internal(0, 5 * scale,
                  Internal(1, 3 * scale, Leaf(1), Leaf(-1)),
                  Internal(2, 7 * scale, Leaf(-1), Leaf(1)))
    t2 = Internal(1, 2 * scale,
                  Internal(2, 4 * scale, Leaf(1), Leaf(-1)),
                  Internal(0, 6 * scale, Leaf(-1), Leaf(1)))
    return t1, t2


def two_tree_ensemble(scale: float = 1.0) -> Ensemble:
    return Ensemble(two_tree_pair(scale), ((0, 1, 2), (0, 1, 2)), 3)


@pytest.fixture
def two_trees():
    return two_tree_ensemble()


def toy_dataset(n: int = 200, d: int = 4, seed: int = 0, noise: float = 0.1) -> Dataset:
    """Points in [0,1]^d labelled by a noisy linear rule."""
    g = np.random.default_rng(seed)
    X = g.random((n, d))
    y = np.where(X[:, 0] + 0.5 * X[:, 1] > 0.75, 1, -1)
    flip = g.random(n) < noise
    y = np.where(flip, -y, y)
    return Dataset(X, y, np.arange(n))


@pytest.fixture
def toy():
    return toy_dataset()


def random_tree(g: np.random.Generator, d: int, depth: int, p_leaf: float = 0.25):
    if depth == 0 or (depth < 4 and g.random() < p_leaf):
        return Leaf(int(g.choice((-1, 1))))
    f = int(g.integers(d))
    return Internal(f, float(np.round(g.random(), 3)),
                    random_tree(g, d, depth - 1, p_leaf), random_tree(g, d, depth - 1, p_leaf))


def random_ensemble(g: np.random.Generator, m: int, d: int, depth: int = 4) -> Ensemble:
    trees = tuple(random_tree(g, d, depth) for _ in range(m))
    return Ensemble(trees, tuple(tuple(range(d)) for _ in range(m)), d)


def grid_feasible(T: Ensemble, required, z, eps: float, step: float = 0.01) -> bool:
    """Brute force: does some grid point of the eps-ball around z (within [0,1]) show ``required``?"""
    n = int(round(1 / step))
    axes = []
    for zj in np.asarray(z, dtype=float):
        g = np.arange(n + 1) / n
        axes.append(g[np.abs(g - zj) <= eps])
    if any(len(a) == 0 for a in axes):
        return False
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
    return bool(np.any(np.all(T.predict_all(pts) == np.asarray(required), axis=1)))


def random_forgery_case(g: np.random.Generator):
    """Random (ensemble, sigma', y, z, eps) with <= 4 trees, depth <= 4, d <= 3."""
    from forestmark.watermark import Signature

    m, d = int(g.integers(1, 5)), int(g.integers(1, 4))
    T = random_ensemble(g, m, d, depth=int(g.integers(1, 5)))
    sigma = Signature(tuple(int(b) for b in g.integers(0, 2, size=m)))
    y = int(g.choice((-1, 1)))
    z = np.round(g.random(d), 2)
    eps = float(g.choice((0.05, 0.1, 0.2, 0.3, 0.5, 1.0)))
    return T, sigma, y, z, eps
