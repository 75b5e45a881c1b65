"""Kohn-Nirenberg quantization on the grid and the asymptotic symbol calculus."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, SymbolError
from .grid import GridSpec, fourier_multiplier
from .symbols import (ProductSymbol, SumSymbol, Symbol, SymbolOrder, expansion_factor,
                      ConjSymbol)

MAX_MATRIX_N = 2048


@dataclass
class OperatorMatrix:
    """Dense realisation of an operator on the grid's state space."""

    matrix: np.ndarray
    grid: GridSpec
    label: str = ""

    def __post_init__(self):
        n = self.grid.N
        if self.matrix.shape != (n, n):
            raise GridError(f"matrix shape {self.matrix.shape} does not match grid size {n}")

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            _same_grid(self, other)
            return OperatorMatrix(self.matrix @ other.matrix, self.grid, f"{self.label}*{other.label}")
        return self.matrix @ other

    def __add__(self, other: "OperatorMatrix"):
        _same_grid(self, other)
        return OperatorMatrix(self.matrix + other.matrix, self.grid, f"{self.label}+{other.label}")

    def __sub__(self, other: "OperatorMatrix"):
        _same_grid(self, other)
        return OperatorMatrix(self.matrix - other.matrix, self.grid, f"{self.label}-{other.label}")

    def scaled(self, c: complex) -> "OperatorMatrix":
        return OperatorMatrix(c * self.matrix, self.grid, self.label)

    @property
    def H(self) -> "OperatorMatrix":
        return OperatorMatrix(self.matrix.conj().T, self.grid, f"({self.label})*")

    @classmethod
    def identity(cls, grid: GridSpec) -> "OperatorMatrix":
        return cls(np.eye(grid.N, dtype=complex), grid, "I")


def _same_grid(A: OperatorMatrix, B: OperatorMatrix):
    if not A.grid.same_lattice(B.grid):
        raise GridError("operators live on different grids")


def symbol_table(p: Symbol, grid: GridSpec, t: float = 0.0) -> np.ndarray:
    """p(t, x_j, xi_k) as an N x N array (rows x, columns xi)."""
    X, XI = grid.mesh()
    P = np.array(np.broadcast_to(p(t, X, XI), (grid.N, grid.N)), dtype=complex)
    if not np.all(np.isfinite(P)):
        raise SymbolError(f"{p!r} has non-finite values on the grid at t={t}")
    return P


def _constant(p: Symbol, t: float) -> complex:
    # constant symbols act as scalars, so p = 1 is the identity bit for bit
    c = complex(np.asarray(p(t, 0.0, 0.0)))
    if not np.isfinite(c):
        raise SymbolError(f"{p!r} is not finite at t={t}")
    return c


def apply_op(p: Symbol, u, grid: GridSpec, t: float = 0.0) -> np.ndarray:
    """v_j = N^{-1/2} sum_k p(t, x_j, xi_k) uhat_k exp(i x_j xi_k)."""
    u = grid.check_state(u)
    if p.x_independent and p.xi_independent:
        return _constant(p, t) * u
    if p.x_independent:
        return fourier_multiplier(u, lambda xi: p(t, 0.0, xi), grid)
    P = symbol_table(p, grid, t)
    return (P * grid.synthesis_kernel) @ grid.fft(u)


def to_matrix(p: Symbol, grid: GridSpec, t: float = 0.0) -> OperatorMatrix:
    """Dense matrix of Op(p); column j is apply_op on the j-th basis vector."""
    if grid.N > MAX_MATRIX_N:
        raise GridError(f"N = {grid.N} exceeds the dense-matrix limit {MAX_MATRIX_N}")
    if p.x_independent and p.xi_independent:
        return OperatorMatrix(_constant(p, t) * np.eye(grid.N, dtype=complex), grid, p.label)
    F = grid.dft_matrix
    if p.x_independent:
        m = np.broadcast_to(np.asarray(p(t, 0.0, grid.xi), dtype=complex), (grid.N,))
        if not np.all(np.isfinite(m)):
            raise SymbolError(f"{p!r} has non-finite values on the lattice at t={t}")
        A = (grid.synthesis_kernel * m) @ F
    else:
        A = (symbol_table(p, grid, t) * grid.synthesis_kernel) @ F
    return OperatorMatrix(A, grid, p.label)


@dataclass
class ExpansionResult:
    """Truncated asymptotic expansion: terms alpha = 0..n_terms-1 and the remainder order."""

    terms: list
    orders: list
    n_terms: int
    remainder_order: SymbolOrder
    label: str = field(default="")

    def symbol(self) -> Symbol:
        """Sum of the retained terms, carrying the order of the leading term."""
        total = SumSymbol(self.terms)
        total.order = self.orders[0]
        total.label = self.label
        return total


def _check_depth(s: Symbol, depth: int):
    if depth > 4 and s.analytic_depth < depth:
        raise SymbolError(f"{s!r} cannot supply derivatives of order {depth}")


def compose_asymptotic(p: Symbol, q: Symbol, n_terms: int) -> ExpansionResult:
    """Symbol of Op(p) Op(q): sum over alpha < n_terms of d_xi^alpha p D_x^alpha q / alpha!."""
    if n_terms < 1:
        raise SymbolError("n_terms must be at least 1")
    _check_depth(p, n_terms - 1)
    _check_depth(q, n_terms - 1)
    terms, orders = [], []
    for alpha in range(n_terms):
        order = (p.order + q.order).shift(-alpha, -alpha)
        if q.x_independent and alpha > 0 or p.xi_independent and alpha > 0:
            continue
        term = ProductSymbol(p.partial(alpha, 0), q.partial(0, alpha), order=order)
        terms.append(term * expansion_factor(alpha) if alpha else term)
        orders.append(order)
    return ExpansionResult(terms, orders, n_terms,
                           (p.order + q.order).shift(-n_terms, -n_terms),
                           f"({p.label})#({q.label})")


def adjoint_asymptotic(p: Symbol, n_terms: int) -> ExpansionResult:
    """Symbol of Op(p)^*: sum over alpha < n_terms of d_xi^alpha D_x^alpha conj(p) / alpha!."""
    if n_terms < 1:
        raise SymbolError("n_terms must be at least 1")
    _check_depth(p, 2 * (n_terms - 1))
    pc = ConjSymbol(p)
    terms, orders = [], []
    for alpha in range(n_terms):
        if alpha and (p.x_independent or p.xi_independent):
            break
        order = p.order.shift(-alpha, -alpha)
        term = pc.partial(alpha, alpha)
        terms.append(term * expansion_factor(alpha) if alpha else term)
        orders.append(order)
    return ExpansionResult(terms, orders, n_terms, p.order.shift(-n_terms, -n_terms),
                           f"({p.label})*")


def operator_residual(A: OperatorMatrix, B: OperatorMatrix, trials: int = 8,
                      iterations: int = 50, seed: int = 0) -> float:
    """Estimate ||A - B|| (L^2 -> L^2) by power iteration on (A-B)^*(A-B).

    Runs ``iterations`` steps from each of ``trials`` seeded random starts and
    returns the largest estimate.
    """
    _same_grid(A, B)
    return matrix_norm(A.matrix - B.matrix, trials, iterations, seed)


def matrix_norm(D: np.ndarray, trials: int = 8, iterations: int = 50, seed: int = 0) -> float:
    """Power-iteration estimate of the spectral norm of D."""
    rng = np.random.default_rng(seed)
    n = D.shape[1]
    best = 0.0
    for _ in range(trials):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        est = 0.0
        for _ in range(iterations):
            w = D @ v
            est = np.linalg.norm(w)
            if est == 0.0:
                break
            v = D.conj().T @ w
            nv = np.linalg.norm(v)
            if nv == 0.0:
                break
            v /= nv
        best = max(best, float(est))
    return best
