import numpy as np
import pytest
from hypothesis import given, strategies as st

from pevo.errors import GridError
from pevo.grid import (NormSpec, fourier_multiplier, japanese, l2_norm, make_grid,
                       weighted_sobolev_norm)


def test_lattice_small():
    g = make_grid(np.pi, 16)
    assert np.allclose(g.xi[6:10], [-2, -1, 0, 1])
    assert g.xi[0] == -8 and g.xi[-1] == 7


def test_dx_and_extent():
    g = make_grid(20, 256)
    assert g.dx == 0.15625
    assert g.dx * g.N == 2 * g.L
    assert np.isclose(np.abs(g.xi).max(), np.pi * g.N / (2 * g.L))
    assert g.x[0] == -20 and np.isclose(g.x[-1], 20 - g.dx)


@pytest.mark.parametrize("L,N,h,msg", [
    (20, 257, 1, "N must be even"),
    (20, 8, 1, "at least 16"),
    (0, 64, 1, "L must be positive"),
    (-1, 64, 1, "L must be positive"),
    (20, 64, 0.5, "h must be >= 1"),
])
def test_invalid_grids(L, N, h, msg):
    with pytest.raises(GridError, match=msg):
        make_grid(L, N, h)


def test_transform_matches_phase_convention(rng):
    g = make_grid(3.0, 32)
    u = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    direct = np.exp(-1j * np.outer(g.xi, g.x)) @ u / np.sqrt(g.N)
    assert np.allclose(g.fft(u), direct, atol=1e-12)
    assert np.allclose(g.dft_matrix @ u, direct, atol=1e-12)


@given(st.integers(min_value=8, max_value=128).map(lambda k: 2 * k), st.integers(0, 2**31 - 1))
def test_roundtrip_and_parseval(N, seed):
    g = make_grid(7.5, N)
    r = np.random.default_rng(seed)
    u = r.standard_normal(N) + 1j * r.standard_normal(N)
    tol = 10 * np.finfo(float).eps * N * np.max(np.abs(u))
    assert np.max(np.abs(g.ifft(g.fft(u)) - u)) <= tol
    assert abs(np.linalg.norm(g.fft(u)) - np.linalg.norm(u)) <= 10 * np.finfo(float).eps * N * np.linalg.norm(u)


def test_norm_trivial_cases():
    g = make_grid(20, 128)
    assert weighted_sobolev_norm(np.zeros(128), NormSpec(1, 2), g) == 0.0
    assert np.isclose(weighted_sobolev_norm(np.ones(128), NormSpec(), g), np.sqrt(40))
    u = np.exp(-g.x**2) * (1 + 1j * g.x)
    assert weighted_sobolev_norm(u, NormSpec(), g) == l2_norm(u, g)


def test_gaussian_h1_norm_matches_fourier_oracle():
    # ||<D> e^{-x^2/2}||^2 = (1/2pi) int (1 + xi^2) 2pi e^{-xi^2} dxi = 1.5 sqrt(pi)
    g = make_grid(20, 512)
    val = weighted_sobolev_norm(np.exp(-g.x**2 / 2), NormSpec(1, 0), g)
    assert abs(val - np.sqrt(1.5 * np.sqrt(np.pi))) <= 1e-8 * val


def test_norm_rejects_wrong_length():
    g = make_grid(20, 64)
    with pytest.raises(GridError):
        weighted_sobolev_norm(np.ones(65), NormSpec(), g)
    with pytest.raises(GridError):
        weighted_sobolev_norm(np.full(64, np.nan), NormSpec(), g)


def test_multiplier_identity_and_derivative():
    g = make_grid(np.pi, 32)
    u = np.sin(g.x)
    assert np.allclose(fourier_multiplier(u, lambda xi: np.ones_like(xi), g), u, atol=1e-15)
    du = fourier_multiplier(u, lambda xi: 1j * xi, g)
    assert np.max(np.abs(du - np.cos(g.x))) <= 1e-12


def test_multiplier_matches_dense_diagonal(rng):
    g = make_grid(10, 128)
    uh = np.where(np.abs(g.xi) < 5, rng.standard_normal(128) + 1j * rng.standard_normal(128), 0)
    u = g.ifft(uh)
    F = g.dft_matrix
    dense = F.conj().T @ (japanese(g.xi, 2.0) * (F @ u))
    assert np.max(np.abs(fourier_multiplier(u, lambda xi: japanese(xi, 2.0), g) - dense)) <= 1e-12


def test_multiplier_rejects_nonfinite():
    g = make_grid(10, 32)
    with pytest.raises(GridError):
        fourier_multiplier(np.ones(32), lambda xi: np.where(xi == 0, np.nan, xi), g)


@given(st.floats(-2, 2), st.floats(0, 2), st.floats(-2, 2), st.floats(0, 2))
def test_norm_monotone_in_indices(s1, d1, s2, d2):
    g = make_grid(15, 128)
    u = np.exp(-(g.x - 1.0) ** 2) * np.exp(2j * g.x)
    lo = weighted_sobolev_norm(u, NormSpec(s1, s2), g)
    hi = weighted_sobolev_norm(u, NormSpec(s1 + d1, s2 + d2), g)
    assert lo <= hi * (1 + 1e-12)


def test_norm_spec_rejects_nonfinite():
    with pytest.raises(GridError):
        NormSpec(np.inf, 0)


def test_with_h_keeps_lattice():
    g = make_grid(20, 64)
    g4 = g.with_h(4)
    assert g4.h == 4 and g.same_lattice(g4)
    assert np.allclose(g4.xi_weight, np.sqrt(16 + g.xi**2))
