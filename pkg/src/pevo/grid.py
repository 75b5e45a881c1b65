"""Uniform periodic grid on [-L, L), its Fourier dual, and weighted Sobolev norms.

The frequency lattice is stored in ascending order, xi_k = pi k / L for
k = -N/2, ..., N/2 - 1.  The discrete transform is unitary and carries the
phase of the node offset, so that

    uhat_k = N^{-1/2} sum_j u_j exp(-i x_j xi_k),
    u_j    = N^{-1/2} sum_k uhat_k exp(+i x_j xi_k).

Norms carry the dx measure factor: ||u||_{L^2} = sqrt(dx sum |u_j|^2).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import GridError


def japanese(z, h: float = 1.0):
    """The weight <z>_h = sqrt(h^2 + z^2)."""
    z = np.asarray(z, dtype=float)
    return np.sqrt(h * h + z * z)


@dataclass(frozen=True)
class NormSpec:
    s1: float = 0.0
    s2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.s1) and np.isfinite(self.s2)):
            raise GridError("Sobolev indices must be finite")

    def shifted(self, ds2: float) -> "NormSpec":
        return NormSpec(self.s1, self.s2 + ds2)


@dataclass(frozen=True)
class GridSpec:
    """Truncated spatial domain and its dual lattice.

    Besides the lattice, the grid owns the truncation geometry used by the
    conjugation machinery on a periodic box:

    * ``x_taper``: fractions (a, b) of L; conjugator symbols are damped to
      zero between |x| = aL and |x| = bL so they are smooth and periodic;
    * ``xi_rolloff``: fractions of max|xi| where conjugator symbols are
      damped to zero ahead of the Nyquist wrap;
    * ``x_window``, ``xi_window``: fractions of L and max|xi| delimiting the
      resolved phase-space window used for positivity checks.
    """

    L: float
    N: int
    h: float = 1.0
    x_taper: tuple[float, float] = (0.5, 0.95)
    xi_rolloff: tuple[float, float] = (0.6, 0.85)
    x_window: tuple[float, float] = (0.35, 0.45)
    xi_window: tuple[float, float] = (0.45, 0.55)

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N % 2:
            raise GridError("N must be even")
        if self.N < 16:
            raise GridError(f"N must be at least 16, got {self.N}")
        if not self.L > 0:
            raise GridError(f"L must be positive, got {self.L}")
        if not self.h >= 1:
            raise GridError(f"h must be >= 1, got {self.h}")

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return -self.L + self.dx * np.arange(self.N)

    @cached_property
    def k(self) -> np.ndarray:
        return np.arange(-self.N // 2, self.N // 2)

    @cached_property
    def xi(self) -> np.ndarray:
        return np.pi * self.k / self.L

    @property
    def dxi(self) -> float:
        return np.pi / self.L

    @property
    def xi_max(self) -> float:
        return np.pi * self.N / (2.0 * self.L)

    @cached_property
    def x_weight(self) -> np.ndarray:
        return japanese(self.x)

    @cached_property
    def xi_weight(self) -> np.ndarray:
        """<xi>_h on the lattice."""
        return japanese(self.xi, self.h)

    @cached_property
    def _phase(self) -> np.ndarray:
        # exp(i L xi_k) = (-1)^k
        return np.where(self.k % 2 == 0, 1.0, -1.0)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Broadcastable (x, xi) pair: x as a column, xi as a row."""
        return self.x[:, None], self.xi[None, :]

    def fft(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)
        return self._phase * np.fft.fftshift(np.fft.fft(u, norm="ortho"))

    def ifft(self, uhat: np.ndarray) -> np.ndarray:
        return np.fft.ifft(np.fft.ifftshift(self._phase * uhat), norm="ortho")

    @cached_property
    def dft_matrix(self) -> np.ndarray:
        """Unitary F with F[k, j] = exp(-i x_j xi_k) / sqrt(N)."""
        return np.exp(-1j * np.outer(self.xi, self.x)) / np.sqrt(self.N)

    @cached_property
    def synthesis_kernel(self) -> np.ndarray:
        """E[j, k] = exp(i x_j xi_k) / sqrt(N), the adjoint of dft_matrix."""
        return self.dft_matrix.conj().T

    def with_h(self, h: float) -> "GridSpec":
        return replace(self, h=float(h))

    def with_size(self, L: float | None = None, N: int | None = None) -> "GridSpec":
        return replace(self, L=self.L if L is None else float(L), N=self.N if N is None else int(N))

    def same_lattice(self, other: "GridSpec") -> bool:
        return self.L == other.L and self.N == other.N

    def resolved_x(self) -> float:
        """Half-width of the region where conjugators are undamped."""
        return self.x_taper[0] * self.L

    def resolved_xi(self) -> float:
        return self.xi_rolloff[0] * self.xi_max

    def boundary_mask(self) -> np.ndarray:
        return np.abs(self.x) >= self.x_taper[1] * self.L

    def check_state(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        if u.shape != (self.N,):
            raise GridError(f"state has shape {u.shape}, grid expects ({self.N},)")
        if not np.all(np.isfinite(u)):
            raise GridError("state contains non-finite entries")
        return u


def make_grid(L: float, N: int, h: float = 1.0, **geometry) -> GridSpec:
    return GridSpec(float(L), N, float(h), **geometry)


def l2_norm(u: np.ndarray, grid: GridSpec) -> float:
    return float(np.sqrt(grid.dx * np.sum(np.abs(u) ** 2)))


def fourier_multiplier(u, m: Callable[[np.ndarray], np.ndarray], grid: GridSpec) -> np.ndarray:
    """Apply the Fourier multiplier with symbol m(xi)."""
    u = grid.check_state(u)
    mk = np.broadcast_to(np.asarray(m(grid.xi), dtype=complex), grid.xi.shape)
    if not np.all(np.isfinite(mk)):
        raise GridError("multiplier has non-finite values on the lattice")
    return np.fft.ifft(np.fft.ifftshift(mk) * np.fft.fft(u))


def weighted_sobolev_norm(u, spec: NormSpec, grid: GridSpec) -> float:
    """||<x>^{s2} <D>^{s1} u||_{L^2}, with <D> built from h = 1."""
    u = grid.check_state(u)
    if spec.s1 != 0.0:
        u = fourier_multiplier(u, lambda xi: japanese(xi) ** spec.s1, grid)
    if spec.s2 != 0.0:
        u = grid.x_weight ** spec.s2 * u
    return l2_norm(u, grid)


def sample(f: Callable[[np.ndarray], np.ndarray], grid: GridSpec) -> np.ndarray:
    """Sample a function of x on the nodes as a complex state vector."""
    return grid.check_state(np.asarray(f(grid.x), dtype=complex) * np.ones(grid.N))
