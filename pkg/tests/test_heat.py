import math

import numpy as np
import pytest

from fqg.errors import InvalidParameter
from fqg.geometry import HanoiParams, build_level
from fqg.heat import (conservation, chapman_kolmogorov, full_graph_spectrum, gaussian_diagnostic,
                      heat_kernel, heat_trace, interval_graph, kernel_matrix,
                      measure_regularity, sample_points, trace_by_quadrature)


@pytest.fixture(scope="module")
def small():
    return full_graph_spectrum(build_level(HanoiParams(0.5), 2), p=60, k_max=200)


@pytest.fixture(scope="module")
def interval():
    return full_graph_spectrum(interval_graph(2.0), p=800, k_max=400)


def test_rejects_infinite_length():
    with pytest.raises(InvalidParameter, match="infinite length"):
        full_graph_spectrum(build_level(HanoiParams(0.3), 2))


def test_ground_state(small):
    assert small.eigenvalues[0] == 0.0
    phi0 = small.vectors[:, 0]
    assert np.allclose(phi0, 1 / math.sqrt(small.total_mass))
    assert small.total_mass == pytest.approx(small.graph.total_length, rel=1e-13)


def test_orthonormal(small):
    G = small.vectors.T @ (small.weights[:, None] * small.vectors)
    assert np.abs(G - np.eye(small.k_max)).max() < 1e-8


def test_interval_eigenpairs(interval):
    k = np.arange(6)
    assert interval.eigenvalues[:6] == pytest.approx((k * math.pi / 2) ** 2, rel=1e-4, abs=1e-9)
    x = np.linspace(0, 2, 9)
    phi = interval.basis_at([(0, v) for v in x])[:, 2]
    exact = math.sqrt(2 / 2.0) * np.cos(2 * math.pi * x / 2)
    assert np.allclose(np.abs(phi), np.abs(exact), atol=1e-3)


def test_interval_kernel_matches_images(interval):
    # Neumann kernel on [0, L] by the method of images
    L, t, x, y = 2.0, 0.01, 0.7, 0.9
    s = 0.0
    for n in range(-5, 6):
        for z in (y + 2 * n * L, -y + 2 * n * L):
            s += math.exp(-(x - z) ** 2 / (4 * t)) / math.sqrt(4 * math.pi * t)
    assert heat_kernel(interval, t, (0, x), (0, y)) == pytest.approx(s, rel=1e-3)


def test_symmetry_and_positivity(small, rng):
    pts = sample_points(small.graph, 15, rng)
    p = kernel_matrix(small, 0.02, pts)
    assert np.array_equal(p, p.T)
    assert p.min() >= 0
    x, y = pts[0], pts[1]
    assert heat_kernel(small, 0.02, x, y) == heat_kernel(small, 0.02, y, x)


def test_long_time_limit(small):
    x, y = (0, 0.01), (5, 0.02)
    assert heat_kernel(small, 50.0, x, y) == pytest.approx(1 / small.total_mass, rel=1e-9)


def test_conservation_and_semigroup(small, rng):
    pts = sample_points(small.graph, 6, rng)
    assert np.allclose(conservation(small, 0.01, pts), 1.0, atol=1e-10)
    lhs, rhs = chapman_kolmogorov(small, 0.01, 0.02, pts, pts)
    assert np.allclose(lhs, rhs, rtol=1e-8, atol=1e-12)


def test_trace_identity(small):
    for t in (0.01, 0.1):
        assert trace_by_quadrature(small, t) == pytest.approx(heat_trace(small, t)[0], rel=1e-10)


def test_trace_completely_monotone(small):
    tr = heat_trace(small, np.geomspace(1e-2, 1.0, 30))
    assert np.all(np.diff(tr) < 0)


def test_small_time_rejected(small):
    with pytest.raises(InvalidParameter, match="K_max"):
        heat_kernel(small, 1e-7, 0, 1)


def test_regularity_bounds():
    rep = measure_regularity(build_level(HanoiParams(0.5), 3), samples=50)
    assert rep.upper == pytest.approx(27.0, abs=1e-6)
    assert rep.ok and np.all(rep.ratios > 0)


def test_gaussian_report_fields(small):
    rep = gaussian_diagnostic(small, (0.01, 0.1), samples=12)
    assert rep.band[0] > 0 and rep.ratio >= 1
    assert rep.offdiag_slope < 0
    d = rep.as_dict()
    assert set(d) >= {"band", "ratio", "offdiag_slope", "corr"}


def test_consistent_mass_integrates_interpolants_exactly(small):
    from fqg.heat import consistent_mass

    M = consistent_mass(small)
    ones = np.ones(M.shape[0])
    assert ones @ M @ ones == pytest.approx(small.total_mass, rel=1e-12)
    # row sums equal the trapezoid weights
    assert np.allclose(M @ ones, small.weights, rtol=1e-12)


def test_semigroup_with_consistent_quadrature(small, rng):
    from fqg.heat import CONSISTENT

    xs = sample_points(small.graph, 6, rng)
    lhs, rhs = chapman_kolmogorov(small, 0.02, 0.03, xs, xs, CONSISTENT)
    assert np.max(np.abs(lhs - rhs) / rhs) < 0.02
    with pytest.raises(InvalidParameter):
        conservation(small, 0.02, xs, "simpson")
