"""Conjugation by operator exponentials e^{lambda(x, D)}.

For an equation of order p the chain has steps k = 1..p-1, step k carrying
lambda_{p-k}.  The conjugator is W = e^{lambda_{p-1}} ... e^{lambda_1} (step
1 applied first to the generator), its inverse is assembled from Neumann
series, and the transformed generator is the exact similarity W^{-1} A W.

Calibration picks the amplitudes M_{p-k} level by level from measured
coefficient bounds, and the frequency scale h by doubling until every step's
remainder I - e^{lambda} e^{-lambda} has norm below 1/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, GridError, HypothesisViolation, NeumannDivergence, UnderResolved
from .grid import GridSpec, japanese
from .quantize import OperatorMatrix, compose_asymptotic, matrix_norm, to_matrix
from .symbols import (ExpSymbol, LambdaSymbol, MollifierConfig, Symbol, lambda_lower,
                      lambda_top)

CALIBRATION_MARGIN = 0.25
NEUMANN_TARGET = 1e-9
REMAINDER_TARGET = 0.5
H_MAX = 256.0


# ---------------------------------------------------------------------------
# Constants entering the choice of M
# ---------------------------------------------------------------------------

def problem_times(problem, count: int = 5) -> list[float]:
    """Times at which coefficient bounds are sampled."""
    if problem.time_dependent:
        return [float(t) for t in np.linspace(0.0, problem.T, count)]
    return [0.0]


def estimate_Cp(a_p: Symbol, grid: GridSpec, times=(0.0,), R: float = 2.0) -> float:
    """min |d_xi a_p| / |xi|^{p-1} over sampled t and lattice |xi| >= hR.

    ``p`` is read from the declared xi-order of ``a_p``.  The sign of
    d_xi a_p must be constant on each half-line |xi| >= hR.
    """
    xi, d = _principal_derivative(a_p, grid, times, R)
    p = a_p.order.m1
    cp = float(np.min(np.abs(d) / np.abs(xi) ** (p - 1)))
    if not cp > 0:
        raise HypothesisViolation(f"principal velocity vanishes on |xi| >= {grid.h * R:g}")
    return cp


def _principal_derivative(a_p: Symbol, grid: GridSpec, times, R: float):
    if not a_p.x_independent:
        raise HypothesisViolation("the principal symbol must not depend on x")
    xi = grid.xi[np.abs(grid.xi) >= grid.h * R]
    if xi.size == 0:
        raise HypothesisViolation(f"no lattice frequencies with |xi| >= {grid.h * R:g}")
    rows = []
    for t in times:
        vals = np.asarray(a_p(t, 0.0, xi))
        if np.max(np.abs(np.imag(vals))) > 1e-12 * (1 + np.max(np.abs(vals))):
            raise HypothesisViolation("the principal symbol must be real")
        rows.append(np.real(np.broadcast_to(a_p.values(t, 0.0, xi, 1, 0), xi.shape)))
    d = np.array(rows)
    for half in (xi > 0, xi < 0):
        s = np.sign(d[:, half])
        if s.size and not (np.all(s > 0) or np.all(s < 0)):
            raise HypothesisViolation("d_xi a_p changes sign or vanishes on a half-line |xi| >= hR")
    return np.broadcast_to(xi, d.shape), d


def mollifier_for(a_p: Symbol, grid: GridSpec, times=(0.0,), R: float = 2.0) -> MollifierConfig:
    """Sign pattern of omega matching sgn(d_xi a_p) on both half-lines."""
    xi, d = _principal_derivative(a_p, grid, times, R)
    pos = int(np.sign(d[0][xi[0] > 0][0]))
    neg = int(np.sign(d[0][xi[0] < 0][0]))
    return MollifierConfig(R=R, sign=pos, odd=(neg != pos))


def estimate_level_C(a_j: Symbol, j: int, p: int, grid: GridSpec, times=(0.0,),
                     x_exponent: float | None = None, refine: bool = True) -> float:
    """sup |Im a_j| <xi>_h^{-j} <x>^{j/(p-1)} over the grid and sampled times.

    ``x_exponent`` replaces j/(p-1) when a faster decay is assumed.  With
    ``refine`` the sup is recomputed on a grid with twice the points and the
    result is rejected as under-resolved if it moves by more than 10%.
    """
    if not 1 <= j <= p - 1:
        raise ValueError(f"level j must lie in 1..{p - 1}, got {j}")
    e = j / (p - 1) if x_exponent is None else x_exponent

    def sup(g: GridSpec) -> float:
        X, XI = g.mesh()
        w = japanese(XI, g.h) ** (-j) * japanese(X) ** e
        best = 0.0
        for t in times:
            v = np.imag(np.asarray(a_j(t, X, XI)))
            if not np.all(np.isfinite(v)):
                raise HypothesisViolation(f"non-finite coefficient values for {a_j!r}")
            best = max(best, float(np.max(np.abs(v) * w)))
        return best

    c = sup(grid)
    if refine:
        c2 = sup(grid.with_size(N=2 * grid.N))
        if abs(c2 - c) > 0.1 * max(c2, 1e-300):
            raise UnderResolved(f"level-{j} constant moved from {c:.4g} to {c2:.4g} under refinement")
    return c


def leading_correction(a_p: Symbol, lam: LambdaSymbol) -> Symbol:
    """The symbol d_xi a_p * d_x lambda."""
    return a_p.partial(1, 0) * lam.partial(0, 1)


def conjugated_symbol(sym: Symbol, lam: LambdaSymbol, n_terms: int) -> Symbol:
    """Truncated expansion of e^{-lambda} # sym # e^{lambda}."""
    left = compose_asymptotic(ExpSymbol(-lam), sym, n_terms).symbol()
    return compose_asymptotic(left, ExpSymbol(lam), n_terms).symbol()


@dataclass
class _Region:
    X: np.ndarray
    XI: np.ndarray


def resolved_region(grid: GridSpec, h: float, R: float) -> _Region:
    """Lattice points where the conjugators are undamped and omega = +-1."""
    x = grid.x[np.abs(grid.x) <= grid.resolved_x()]
    xi = grid.xi[(np.abs(grid.xi) >= h * R) & (np.abs(grid.xi) <= grid.resolved_xi())]
    if xi.size == 0:
        raise CalibrationError(f"no resolved frequencies with |xi| >= {h * R:g}; refine the grid")
    return _Region(x[:, None], xi[None, :])


def _level_residual(problem, lams: list, n: int, t: float, region: _Region, n_terms: int):
    """Re of the order-(p-n) part of the generator after conjugating by lams."""
    p = problem.p
    sym = problem.generator_symbol()
    for lam in lams:
        sym = conjugated_symbol(sym, lam, n_terms)
    X, XI = region.X, region.XI
    rest = np.asarray(sym(t, X, XI)) - 1j * np.asarray(problem.a_p(t, X, XI))
    for ell, lam in enumerate(lams, start=1):
        rest = rest - 1j * problem.coefficient(p - ell)(t, X, XI)
        rest = rest - leading_correction(problem.a_p, lam)(t, X, XI)
    for j in range(0, p - n):
        rest = rest - 1j * problem.coefficient(j)(t, X, XI)
    return np.real(rest)


# ---------------------------------------------------------------------------
# Steps and chains
# ---------------------------------------------------------------------------

@dataclass
class ConjugationStep:
    k: int
    M: float
    lam: LambdaSymbol
    E_plus: OperatorMatrix
    E_minus: OperatorMatrix
    inverse: OperatorMatrix
    neumann_depth: int
    remainder_norm: float
    inverse_error: float


def neumann_depth_for(r: float, target: float = NEUMANN_TARGET) -> int:
    """Smallest d = 2^m - 1 with r^{d+1} / (1 - r) <= target."""
    if r == 0.0:
        return 1
    d = 1
    while r ** (d + 1) / (1.0 - r) > target:
        d = 2 * d + 1
    return d


def build_step(lam: LambdaSymbol, grid: GridSpec, depth: int | None = None) -> ConjugationStep:
    """Quantise e^{+-lambda} and invert e^{lambda} by a Neumann series.

    The inverse is e^{-lambda} (I + R + ... + R^d) with R = I - e^{lambda} e^{-lambda},
    summed by repeated squaring, so d has the form 2^m - 1.
    """
    I = OperatorMatrix.identity(grid)
    if lam.is_zero:
        return ConjugationStep(lam.k, 0.0, lam, I, I, I, 0, 0.0, 0.0)
    trunc = lam.on_grid(grid)
    Ep = to_matrix(ExpSymbol(trunc), grid)
    Em = to_matrix(ExpSymbol(-trunc), grid)
    Rm = np.eye(grid.N) - Ep.matrix @ Em.matrix
    r = matrix_norm(Rm)
    if not r < 1.0:
        raise NeumannDivergence(f"||R|| = {r:.4g} >= 1 at h = {lam.h:g}; increase h")
    d = neumann_depth_for(r)
    if depth is not None:
        while d < depth:
            d = 2 * d + 1
    S = np.eye(grid.N, dtype=complex)
    P = Rm.copy()
    total = 1
    while total < d + 1:
        S = S + P @ S
        P = P @ P
        total *= 2
    inv = Em.matrix @ S
    err = matrix_norm(Ep.matrix @ inv - np.eye(grid.N))
    return ConjugationStep(lam.k, lam.M, lam, Ep, Em, OperatorMatrix(inv, grid, "inv"),
                           d, r, err)


@dataclass
class ConjugationChain:
    p: int
    h: float
    grid: GridSpec
    steps: list
    W: OperatorMatrix
    W_inv: OperatorMatrix

    @property
    def is_identity(self) -> bool:
        return all(s.M == 0.0 for s in self.steps)

    @property
    def top_M(self) -> float:
        return self.steps[0].M if self.steps else 0.0

    def max_remainder(self) -> float:
        return max((s.remainder_norm for s in self.steps), default=0.0)

    def roundtrip_error(self) -> float:
        return matrix_norm(self.W.matrix @ self.W_inv.matrix - np.eye(self.grid.N))


def assemble_chain(steps: list, grid: GridSpec, p: int, h: float) -> ConjugationChain:
    W = np.eye(grid.N, dtype=complex)
    W_inv = np.eye(grid.N, dtype=complex)
    for s in steps:  # steps ordered k = 1..p-1
        if s.M == 0.0:
            continue
        W = W @ s.E_plus.matrix
        W_inv = s.inverse.matrix @ W_inv
    return ConjugationChain(p, h, grid, steps, OperatorMatrix(W, grid, "W"),
                            OperatorMatrix(W_inv, grid, "W^-1"))


def make_lambdas(p: int, Ms, h: float, cfg: MollifierConfig, top_decay: float = 1.0) -> list:
    """lambda_{p-1}, ..., lambda_1 for amplitudes Ms = (M_{p-1}, ..., M_1)."""
    lams = []
    for k, M in enumerate(Ms, start=1):
        if k == 1:
            lams.append(lambda_top(M, h, cfg, p, top_decay))
        else:
            lams.append(lambda_lower(k, M, p, h, cfg))
    return lams


def build_chain(p: int, Ms, h: float, cfg: MollifierConfig, grid: GridSpec,
                top_decay: float = 1.0) -> ConjugationChain:
    g = grid.with_h(h)
    steps = [build_step(lam, g) for lam in make_lambdas(p, Ms, h, cfg, top_decay)]
    return assemble_chain(steps, g, p, h)


def conjugate_generator(A: OperatorMatrix, chain: ConjugationChain) -> OperatorMatrix:
    """A_lambda = W^{-1} A W."""
    if not A.grid.same_lattice(chain.grid):
        raise GridError("generator and chain live on different grids")
    if chain.is_identity:
        return A
    return OperatorMatrix(chain.W_inv.matrix @ A.matrix @ chain.W.matrix, A.grid,
                          f"({A.label})_lambda")


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    h: float
    Ms: list  # M_{p-1}, ..., M_1
    C: list  # measured constant per level
    Cp: float
    margins: list
    remainder_norms: list
    cfg: MollifierConfig
    p: int
    top_decay: float = 1.0
    history: list = field(default_factory=list)  # (h, max remainder) per tried h
    chain: ConjugationChain | None = None

    def build_chain(self, grid: GridSpec) -> ConjugationChain:
        """The chain with these constants on another grid."""
        if self.chain is not None and self.chain.grid.same_lattice(grid) and \
                self.chain.grid.x_taper == grid.x_taper:
            return self.chain
        return build_chain(self.p, self.Ms, self.h, self.cfg, grid, self.top_decay)

    @property
    def sigma(self) -> float:
        """Loss of weight 2 M_{p-1}, or 0 when lambda_{p-1} is bounded."""
        return 0.0 if self.top_decay > 1.0 else 2.0 * self.Ms[0]


def choose_amplitudes(problem, grid: GridSpec, cfg: MollifierConfig, times, Cp: float,
                      margin: float = CALIBRATION_MARGIN, fixed_Ms=None):
    """Sequentially fix M_{p-1}, ..., M_1 on the grid's h; return (Ms, C, margins)."""
    p, h = problem.p, grid.h
    factor = 2.0 ** ((p - 1) / 2.0) / Cp * (1.0 + margin)
    region = resolved_region(grid, h, cfg.R)
    Ms, Cs, margins, lams = [], [], [], []
    for n in range(1, p):
        if n == 1:
            C = estimate_level_C(problem.coefficient(p - 1), p - 1, p, grid, times,
                                 x_exponent=problem.top_decay if problem.top_decay != 1.0 else None)
        else:
            C = 0.0
            w = japanese(region.XI, h) ** (-(p - n)) * japanese(region.X) ** ((p - n) / (p - 1))
            for t in times:
                re = _level_residual(problem, lams, n, t, region, n_terms=p)
                C = max(C, float(np.max(np.abs(re) * w)))
        M = factor * C if fixed_Ms is None else float(fixed_Ms[n - 1])
        lam = make_lambdas(p, [0.0] * (n - 1) + [M], h, cfg, problem.top_decay)[n - 1]
        margins.append(_level_margin(problem, lams, lam, n, times, region))
        Ms.append(M)
        Cs.append(C)
        lams.append(lam)
    return Ms, Cs, margins


def _level_margin(problem, lams, lam, n, times, region) -> float:
    """min over the resolved region of Re(level-n term + d_xi a_p d_x lambda), weighted."""
    p, h = problem.p, lam.h
    X, XI = region.X, region.XI
    w = japanese(XI, h) ** (-(p - n)) * japanese(X) ** (
        (problem.top_decay if n == 1 else (p - n) / (p - 1)))
    if n > 1:
        # restrict to the zone where the cutoff in lambda_{p-n} is inactive
        live = japanese(X) <= japanese(XI, h) ** (p - 1) / 2.0
    else:
        live = np.ones(np.broadcast_shapes(X.shape, XI.shape), dtype=bool)
    best = np.inf
    for t in times:
        if n == 1:
            term = np.real(1j * np.asarray(problem.coefficient(p - 1)(t, X, XI)))
        else:
            term = _level_residual(problem, lams, n, t, region, n_terms=p)
        corr = np.real(np.asarray(leading_correction(problem.a_p, lam)(t, X, XI)))
        vals = np.broadcast_to((term + corr) * w, live.shape)[live]
        if vals.size:
            best = min(best, float(np.min(vals)))
    return best if np.isfinite(best) else 0.0


def calibrate(problem, grid: GridSpec, cfg: MollifierConfig | None = None, *,
              h: float | None = None, Ms=None, h_max: float = H_MAX,
              margin: float = CALIBRATION_MARGIN, R: float = 2.0) -> CalibrationResult:
    """Choose (h, M_{p-1}, ..., M_1) for the problem on this grid.

    Starting from h = 1 (or the given ``h``), the amplitudes are fixed level by
    level as M = 2^{(p-1)/2} C / C_p (1 + margin); h doubles until every
    step's remainder norm is below 1/2.  ``Ms`` overrides the amplitudes.
    """
    times = problem_times(problem)
    g0 = grid.with_h(h if h is not None else 1.0)
    if cfg is None:
        cfg = mollifier_for(problem.a_p, g0, times, R)
    if Ms is not None and len(Ms) != problem.p - 1:
        raise CalibrationError(f"expected {problem.p - 1} amplitudes, got {len(Ms)}")
    history = []
    hh = g0.h
    while True:
        g = grid.with_h(hh)
        try:
            Cp = estimate_Cp(problem.a_p, g, times, cfg.R)
            Ms_h, Cs, margins = choose_amplitudes(problem, g, cfg, times, Cp, margin, Ms)
        except CalibrationError as exc:
            raise CalibrationError(f"h search failed at h = {hh:g}: {exc}") from exc
        try:
            chain = build_chain(problem.p, Ms_h, hh, cfg, g, problem.top_decay)
            rn = [s.remainder_norm for s in chain.steps]
        except NeumannDivergence:
            chain, rn = None, [np.inf]
        history.append((hh, max(rn, default=0.0)))
        if chain is not None and (h is not None or max(rn, default=0.0) < REMAINDER_TARGET):
            return CalibrationResult(hh, Ms_h, Cs, Cp, margins, rn, cfg, problem.p,
                                     problem.top_decay, history, chain)
        if h is not None:
            raise CalibrationError(f"remainder norm {max(rn):.4g} >= 1 at the fixed h = {hh:g}")
        hh *= 2.0
        if hh > h_max:
            raise CalibrationError(f"no h <= {h_max:g} brings every remainder below {REMAINDER_TARGET}")
