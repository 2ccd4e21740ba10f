import itertools

import numpy as np
import pytest

from erclust.core import RngSpec
from erclust.ergraph import connectivity_curve, er_threshold, sample_and_check


def exact_connect_prob(n, p):
    """Sum over all 2^C(n,2) edge sets, checking connectivity by BFS."""
    edges = list(itertools.combinations(range(n), 2))
    total = 0.0
    for mask in range(1 << len(edges)):
        adj = {i: [] for i in range(n)}
        k = 0
        for b, (i, j) in enumerate(edges):
            if mask >> b & 1:
                adj[i].append(j)
                adj[j].append(i)
                k += 1
        seen, stack = {0}, [0]
        while stack:
            for v in adj[stack.pop()]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) == n:
            total += p**k * (1 - p) ** (len(edges) - k)
    return total


def test_trivial_graphs():
    assert sample_and_check(1, 0.0, RngSpec(0))
    assert sample_and_check(2, 1.0, RngSpec(0))
    assert not sample_and_check(2, 0.0, RngSpec(0))


def test_threshold_values():
    assert er_threshold(1000, 0.1) == pytest.approx(1.1 * np.log(1000) / 1000)
    assert er_threshold(1000, 0.1) == pytest.approx(0.0075985, abs=1e-7)
    assert er_threshold(3, 1.0) == pytest.approx(0.7324, abs=1e-4)
    with pytest.raises(ValueError):
        er_threshold(1, 0.1)
    with pytest.raises(ValueError):
        er_threshold(10, 0.0)


def test_grid_endpoints():
    c = connectivity_curve(6, [0.0, 1.0], 20, RngSpec(3))
    assert c.prob_connected == (0.0, 1.0)


def test_small_n_against_enumeration():
    exact = exact_connect_prob(4, 0.5)
    assert exact == pytest.approx(38 / 64)
    c = connectivity_curve(4, [0.5], 20000, RngSpec(1))
    assert abs(c.prob_connected[0] - exact) < 0.015


def test_curve_monotone_and_csv(tmp_path):
    grid = np.linspace(0.01, 0.3, 12)
    c = connectivity_curve(40, grid, 60, RngSpec(5))
    assert all(b >= a for a, b in zip(c.prob_connected, c.prob_connected[1:]))
    c.to_csv(tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "p,prob_connected,trials" and len(lines) == 13


def test_curve_reproducible():
    a = connectivity_curve(20, [0.1, 0.2], 30, RngSpec(9))
    b = connectivity_curve(20, [0.1, 0.2], 30, RngSpec(9))
    assert a == b


def test_bad_inputs():
    with pytest.raises(ValueError):
        sample_and_check(3, 1.5)
    with pytest.raises(ValueError):
        connectivity_curve(3, [0.5, 0.2], 10)
    with pytest.raises(ValueError):
        connectivity_curve(3, [0.5], 0)
