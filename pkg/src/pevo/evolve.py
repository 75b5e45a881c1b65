"""Cauchy problems, Crank-Nicolson time stepping and energy bookkeeping.

The equation D_t u + a_p(t, D) u + sum_j a_j(t, x, D) u = f is written as

    du/dt = -A(t) u + i f,    A(t) = i Op(a_p) + sum_j i Op(a_j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .conjugation import ConjugationChain, conjugate_generator
from .errors import BoundaryMassError, PevoError, SingularStep
from .grid import GridSpec, NormSpec, l2_norm, sample, weighted_sobolev_norm
from .quantize import OperatorMatrix, to_matrix
from .symbols import ConstantSymbol, Symbol, SumSymbol

MODES = ("full", "refined", "strengthened")
BOUNDARY_TOL = 1e-6
SOLVE_RTOL = 1e-10


def gaussian(x):
    return np.exp(-np.asarray(x, dtype=float) ** 2 / 2.0)


@dataclass
class CauchyProblem:
    """D_t u + a_p(t, D) u + sum_{j<p} a_j(t, x, D) u = f, u(0) = g.

    ``a`` maps j to a_j; missing levels are zero.  ``top_decay`` is the x-decay
    exponent assumed for Im a_{p-1} (1 under the standard hypotheses).
    """

    p: int
    a_p: Symbol
    a: dict
    g: Callable = gaussian
    T: float = 1.0
    f: Callable | None = None
    mode: str = "full"
    top_decay: float = 1.0
    name: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p < 2:
            raise PevoError(f"p must be at least 2, got {self.p}")
        if not self.T > 0:
            raise PevoError(f"T must be positive, got {self.T}")
        if self.mode not in MODES:
            raise PevoError(f"unknown hypothesis mode {self.mode!r}")
        bad = [j for j in self.a if not 0 <= j <= self.p - 1]
        if bad:
            raise PevoError(f"coefficient levels {bad} outside 0..{self.p - 1}")

    def coefficient(self, j: int) -> Symbol:
        return self.a.get(j) or ConstantSymbol(0.0)

    @property
    def time_dependent(self) -> bool:
        return self.a_p.time_dependent or any(s.time_dependent for s in self.a.values())

    def generator_symbol(self) -> Symbol:
        """i a_p + sum_j i a_j."""
        terms = [self.a_p] + [self.a[j] for j in sorted(self.a)]
        return SumSymbol(terms, [1j] * len(terms))

    def source(self, t: float, grid: GridSpec) -> np.ndarray | None:
        if self.f is None:
            return None
        return sample(lambda x: self.f(t, x), grid)


def assemble_generator(problem: CauchyProblem, grid: GridSpec, t: float = 0.0) -> OperatorMatrix:
    """Matrix of A(t) = i Op(a_p) + sum_j i Op(a_j)."""
    A = 1j * to_matrix(problem.a_p, grid, t).matrix
    for j in sorted(problem.a):
        A = A + 1j * to_matrix(problem.a[j], grid, t).matrix
    return OperatorMatrix(A, grid, f"A({t:g})")


def _lu(M: np.ndarray, t: float, dt: float):
    lu = sla.lu_factor(M, check_finite=True)
    if np.min(np.abs(np.diag(lu[0]))) == 0.0:
        raise SingularStep(f"singular Crank-Nicolson system at t = {t:g}, dt = {dt:g}")
    return lu


def _cn_solve(lhs: np.ndarray, lu, rhs: np.ndarray, t: float, dt: float) -> np.ndarray:
    u = sla.lu_solve(lu, rhs)
    res = np.linalg.norm(lhs @ u - rhs)
    if not res <= SOLVE_RTOL * max(np.linalg.norm(rhs), 1e-300):
        raise SingularStep(f"linear solve residual {res:.3e} at t = {t:g}, dt = {dt:g}")
    return u


def step_crank_nicolson(u, A_now: OperatorMatrix, A_next: OperatorMatrix, dt: float,
                        F_now=None, F_next=None, t: float = 0.0) -> np.ndarray:
    """One step of (I + dt/2 A(t+dt)) u+ = (I - dt/2 A(t)) u + dt F_mid.

    F is the forcing of du/dt = -A u + F; F_mid is the mean of its endpoint
    values.
    """
    if not dt > 0:
        raise PevoError(f"dt must be positive, got {dt}")
    n = A_now.grid.N
    rhs = u - 0.5 * dt * (A_now.matrix @ u)
    if F_now is not None:
        rhs = rhs + 0.5 * dt * (F_now + F_next)
    lhs = np.eye(n) + 0.5 * dt * A_next.matrix
    return _cn_solve(lhs, _lu(lhs, t, dt), rhs, t, dt)


def integrate(A_of_t: Callable[[float], OperatorMatrix], u0: np.ndarray, T: float, steps: int,
              F_of_t: Callable[[float], np.ndarray] | None = None, time_dependent: bool = True,
              callback: Callable | None = None) -> np.ndarray:
    """Crank-Nicolson from 0 to T; factorises once when A is constant in time.

    ``callback(n, t, u)`` is called at every step including the initial one.
    """
    dt = T / steps
    u = np.asarray(u0, dtype=complex)
    A_now = A_of_t(0.0)
    n = A_now.grid.N
    I = np.eye(n)
    lhs = lu = None
    F_now = F_of_t(0.0) if F_of_t else None
    if callback:
        callback(0, 0.0, u)
    for s in range(steps):
        t, t1 = s * dt, (s + 1) * dt
        A_next = A_of_t(t1) if time_dependent else A_now
        if lu is None or time_dependent:
            lhs = I + 0.5 * dt * A_next.matrix
            lu = _lu(lhs, t, dt)
        rhs = u - 0.5 * dt * (A_now.matrix @ u)
        F_next = F_of_t(t1) if F_of_t else None
        if F_now is not None:
            rhs = rhs + 0.5 * dt * (F_now + F_next)
        u = _cn_solve(lhs, lu, rhs, t, dt)
        A_now, F_now = A_next, F_next
        if callback:
            callback(s + 1, t1, u)
    return u


@dataclass
class EnergyReport:
    times: np.ndarray
    norm_u: np.ndarray  # ||u(t)||_{s1, s2 - sigma}
    norm_ulambda: np.ndarray  # ||u_lambda(t)||_{s1, s2}
    rhs: np.ndarray  # ||g||^2_{s1,s2} + int_0^t ||f||^2_{s1,s2}
    running_C: np.ndarray
    sigma: float
    C: float
    spec: NormSpec
    N: int
    C_by_resolution: dict = field(default_factory=dict)
    boundary_mass: float = 0.0


def _ratio(lhs: float, rhs: float) -> float:
    if rhs > 0:
        return lhs / rhs
    return 0.0 if lhs == 0 else np.inf


def chain_sigma(chain: ConjugationChain) -> float:
    """2 M_{p-1}, or 0 when the top conjugator is bounded in x."""
    if not chain.steps:
        return 0.0
    top = chain.steps[0].lam
    return 0.0 if getattr(top, "gamma", 1.0) > 1.0 else 2.0 * chain.top_M


def solve(problem: CauchyProblem, chain: ConjugationChain, spec: NormSpec, steps: int = 400,
          sigma: float | None = None, keep_trajectory: bool = False):
    """Integrate the conjugated system and record the energy inequality.

    The datum and source are mapped by W^{-1}, u_lambda is advanced with
    Crank-Nicolson on A_lambda = W^{-1} A W, and u = W u_lambda.  Returns
    (trajectory or final state, EnergyReport).
    """
    grid = chain.grid
    sigma = chain_sigma(chain) if sigma is None else float(sigma)
    lhs_spec = spec.shifted(-sigma)
    W, W_inv = chain.W.matrix, chain.W_inv.matrix
    ident = chain.is_identity

    def to_lam(v):
        return v if ident else W_inv @ v

    def A_lam(t):
        return conjugate_generator(assemble_generator(problem, grid, t), chain)

    F = None
    if problem.f is not None:
        def F(t):
            return to_lam(1j * problem.source(t, grid))

    g = sample(problem.g, grid)
    mask = grid.boundary_mask()
    dt = problem.T / steps
    times = np.arange(steps + 1) * dt
    norm_u = np.empty(steps + 1)
    norm_ul = np.empty(steps + 1)
    f_sq = np.zeros(steps + 1)
    traj = [] if keep_trajectory else None
    worst = [0.0]

    def record(n, t, ul):
        u = ul if ident else W @ ul
        total = l2_norm(u, grid) ** 2
        edge = l2_norm(np.where(mask, u, 0.0), grid) ** 2
        frac = edge / total if total > 0 else 0.0
        worst[0] = max(worst[0], frac)
        if frac > BOUNDARY_TOL:
            raise BoundaryMassError(
                f"mass fraction {frac:.2e} near the box edge at t = {t:g}; enlarge L")
        norm_u[n] = weighted_sobolev_norm(u, lhs_spec, grid)
        norm_ul[n] = weighted_sobolev_norm(ul, spec, grid)
        if problem.f is not None:
            f_sq[n] = weighted_sobolev_norm(problem.source(t, grid), spec, grid) ** 2
        if traj is not None:
            traj.append(u)

    final = integrate(A_lam, to_lam(g), problem.T, steps, F, problem.time_dependent, record)
    g_sq = weighted_sobolev_norm(g, spec, grid) ** 2
    integral = np.concatenate([[0.0], np.cumsum(0.5 * dt * (f_sq[1:] + f_sq[:-1]))])
    rhs = g_sq + integral
    ratios = np.array([_ratio(l * l, r) for l, r in zip(norm_u, rhs)])
    running = np.maximum.accumulate(ratios)
    report = EnergyReport(times, norm_u, norm_ul, rhs, running, sigma, float(running[-1]), spec,
                          grid.N, {grid.N: float(running[-1])}, worst[0])
    out = np.array(traj) if traj is not None else (final if ident else W @ final)
    return out, report


def merge_resolutions(reports: list) -> EnergyReport:
    """The finest report, with C values of all resolutions attached."""
    reports = sorted(reports, key=lambda r: r.N)
    fine = reports[-1]
    fine.C_by_resolution = {r.N: r.C for r in reports}
    return fine


@dataclass
class Verification:
    passed: bool
    C: float
    C_cap: float
    margin: float
    resolution_ratio: float


def verify_energy_estimate(report: EnergyReport, C_cap: float = 100.0,
                           band: tuple = (0.8, 1.25)) -> Verification:
    """Pass iff the fitted C is at most C_cap and stable across stored resolutions."""
    C = report.C
    values = [report.C_by_resolution[n] for n in sorted(report.C_by_resolution)]
    if len(values) >= 2 and values[0] > 0:
        ratio = values[-1] / values[0]
    else:
        ratio = 1.0
    stable = band[0] <= ratio <= band[1] or (len(values) >= 2 and values[0] == values[-1] == 0)
    ok = bool(np.isfinite(C) and C <= C_cap and stable)
    return Verification(ok, C, C_cap, C_cap - C, ratio)
