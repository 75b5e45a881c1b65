"""Spectral check that the Hermitian part of a generator is bounded below.

On a periodic box the matrices carry artefacts near the box edge and near
the Nyquist frequency, where the truncated conjugators are switched off.
By default the lower bound is therefore measured on the resolved
phase-space window: the range of a smooth localiser that keeps |x| below
about 0.4 L and |xi| below about half the Nyquist frequency.  Pass
``window=False`` for the plain minimum eigenvalue of the full matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GridError
from .grid import GridSpec
from .quantize import OperatorMatrix
from .symbols import smooth_cutoff


def hermitian_part(A: OperatorMatrix) -> OperatorMatrix:
    """(A + A^*) / 2."""
    M = A.matrix
    if M.shape[0] != M.shape[1]:
        raise GridError("hermitian_part needs a square matrix")
    return OperatorMatrix((M + M.conj().T) / 2.0, A.grid, f"Herm({A.label})")


@lru_cache(maxsize=8)
def _window_basis(L: float, N: int, x_window: tuple, xi_window: tuple) -> np.ndarray:
    grid = GridSpec(L, N, x_window=x_window, xi_window=xi_window)
    chi_x = smooth_cutoff(grid.x, x_window[0] * L, x_window[1] * L)
    chi_xi = smooth_cutoff(grid.xi, xi_window[0] * grid.xi_max, xi_window[1] * grid.xi_max)
    F = grid.dft_matrix
    P = (F.conj().T * chi_xi) @ F
    K = P @ (chi_x[:, None] * P)
    vals, vecs = np.linalg.eigh((K + K.conj().T) / 2.0)
    return vecs[:, vals > 0.5]


def phase_space_window(grid: GridSpec) -> np.ndarray:
    """Orthonormal basis (N x m) of states concentrated in the resolved window."""
    return _window_basis(grid.L, grid.N, grid.x_window, grid.xi_window)


def lower_bound(A: OperatorMatrix, window: bool = True) -> float:
    """Smallest eigenvalue of Herm(A), optionally compressed to the window."""
    H = hermitian_part(A).matrix
    if not np.all(np.isfinite(H)):
        raise np.linalg.LinAlgError("non-finite entries in the Hermitian part")
    if window:
        V = phase_space_window(A.grid)
        H = V.conj().T @ H @ V
    return float(np.linalg.eigvalsh((H + H.conj().T) / 2.0)[0])


@dataclass
class PositivityReport:
    lower_bound: float
    coarse_bound: float
    grids: tuple
    stability_ratio: float
    c_max: float
    passed: bool


def positivity_check(A_coarse: OperatorMatrix, A_fine: OperatorMatrix, c_max: float,
                     window: bool = True) -> PositivityReport:
    """Lower bounds of Herm(A) at two resolutions and their relative drift.

    Passes when the fine-grid bound is at least -c_max and
    |b_fine - b_coarse| / (1 + |b_coarse|) <= 0.2.
    """
    b1 = lower_bound(A_coarse, window)
    b2 = lower_bound(A_fine, window)
    ratio = abs(b2 - b1) / (1.0 + abs(b1))
    return PositivityReport(b2, b1, (A_coarse.grid.N, A_fine.grid.N), ratio, c_max,
                            bool(b2 >= -c_max and ratio <= 0.2))


def default_c_max(remainder_norm: float) -> float:
    """Admissible semiboundedness constant 10 (||R|| + 1)."""
    return 10.0 * (remainder_norm + 1.0)
