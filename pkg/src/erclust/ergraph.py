"""Monte-Carlo connectivity of Erdős-Rényi ``G(n, p)`` graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import UnionFind
from .core import as_rng


@dataclass(frozen=True)
class ConnectivityCurve:
    n: int
    p_grid: tuple
    prob_connected: tuple
    trials: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.p_grid, self.p_grid[1:])):
            raise ValueError("p_grid must be strictly increasing")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("p,prob_connected,trials\n")
            for p, q in zip(self.p_grid, self.prob_connected):
                fh.write(f"{p:.17g},{q:.17g},{self.trials}\n")


def er_threshold(n: int, epsilon: float) -> float:
    """Edge probability ``(1 + epsilon) ln(n) / n`` above which ``G(n, p)``
    is almost surely connected for large ``n``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return (1.0 + epsilon) * math.log(n) / n


def _check(n, p):
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")


def _connected(n: int, uniforms: np.ndarray, p: float, pairs) -> bool:
    uf = UnionFind(n)
    ii, jj = pairs
    for k in np.nonzero(uniforms < p)[0]:
        if uf.union(int(ii[k]), int(jj[k])) and uf.n_sets == 1:
            return True
    return uf.n_sets == 1


def sample_and_check(n: int, p: float, rng=None) -> bool:
    """Draw one ``G(n, p)`` and report whether it is connected.

    Edge ``(i, j)``, ``i < j``, is present when the uniform drawn for it, in
    row-major upper-triangular order, is below ``p``.
    """
    _check(n, p)
    if n == 1:
        return True
    gen = as_rng(rng).generator()
    pairs = np.triu_indices(n, k=1)
    return _connected(n, gen.random(len(pairs[0])), p, pairs)


def connectivity_curve(n: int, p_grid: Sequence[float], trials: int, rng=None) -> ConnectivityCurve:
    """Fraction of connected graphs per grid point.

    Trial ``k`` uses seed ``seed ^ k`` at every grid point, so the graphs at
    larger ``p`` contain those at smaller ``p`` and the estimate is
    non-decreasing in ``p``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p_grid = tuple(float(p) for p in p_grid)
    for p in p_grid:
        _check(n, p)
    rng = as_rng(rng)
    hits = np.zeros(len(p_grid), dtype=np.int64)
    if n == 1:
        hits[:] = trials
    else:
        pairs = np.triu_indices(n, k=1)
        m = len(pairs[0])
        for t in range(trials):
            u = rng.derive(t).generator().random(m)
            for g, p in enumerate(p_grid):
                hits[g] += _connected(n, u, p, pairs)
    return ConnectivityCurve(n, p_grid, tuple((hits / trials).tolist()), trials)
