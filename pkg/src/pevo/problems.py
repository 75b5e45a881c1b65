"""Preset Cauchy problems and hypothesis certification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .conjugation import estimate_Cp, estimate_level_C, problem_times
from .errors import HypothesisViolation, PevoError
from .evolve import CauchyProblem
from .grid import GridSpec
from .symbols import SymbolOrder, from_expr, seminorm_estimate, sympy_vars

t, x, xi = sympy_vars()
_jx = sp.sqrt(1 + x**2)


def _factor(time_factor: bool):
    return (1 + sp.sin(t) / 2) if time_factor else sp.Integer(1)


def schrodinger_kb(c: float = 1.0, time_factor: bool = False, T: float = 1.0, **kw) -> CauchyProblem:
    tf = _factor(time_factor)
    a = {1: from_expr(sp.I * c * tf * xi / _jx, (1, -1), "a_1")} if c else {}
    return CauchyProblem(2, from_expr(xi**2, (2, 0), "a_2"), a, T=T, name="schrodinger_kb",
                         params={"c": c}, **kw)


def cc3(c2: float = 1.0, c1: float = 1.0, time_factor: bool = False, T: float = 1.0,
        **kw) -> CauchyProblem:
    tf = _factor(time_factor)
    a = {}
    if c2:
        a[2] = from_expr(sp.I * c2 * tf * xi**2 / _jx, (2, -1), "a_2")
    if c1:
        a[1] = from_expr(sp.I * c1 * tf * xi / sp.sqrt(_jx), (1, -0.5), "a_1")
    return CauchyProblem(3, from_expr(xi**3, (3, 0), "a_3"), a, T=T, name="cc3",
                         params={"c2": c2, "c1": c1}, **kw)


def generic_p(p: int = 3, c=None, time_factor: bool = False, T: float = 1.0, **kw) -> CauchyProblem:
    """a_p = xi^p, a_j = i c_j <x>^{-j/(p-1)} xi^j; ``c`` lists c_1..c_{p-1}."""
    p = int(p)
    c = [1.0] * (p - 1) if c is None else list(c)
    if len(c) != p - 1:
        raise PevoError(f"generic_p needs {p - 1} constants, got {len(c)}")
    tf = _factor(time_factor)
    a = {}
    for j, cj in enumerate(c, start=1):
        if cj:
            e = sp.Rational(j, p - 1)
            a[j] = from_expr(sp.I * cj * tf * xi**j * _jx ** (-e), (j, -j / (p - 1)), f"a_{j}")
    return CauchyProblem(p, from_expr(xi**p, (p, 0), f"a_{p}"), a, T=T, name="generic_p",
                         params={"p": p, "c": c}, **kw)


def strengthened(c: float = 1.0, eps: float = 0.5, time_factor: bool = False, T: float = 1.0,
                 **kw) -> CauchyProblem:
    """p = 2 with Im a_1 decaying like <x>^{-(1+eps)}."""
    if not eps > 0:
        raise PevoError(f"eps must be positive, got {eps}")
    tf = _factor(time_factor)
    e = sp.nsimplify(1 + eps)
    a = {1: from_expr(sp.I * c * tf * xi * _jx ** (-e), (1, -(1 + eps)), "a_1")} if c else {}
    kw.setdefault("mode", "strengthened")
    return CauchyProblem(2, from_expr(xi**2, (2, 0), "a_2"), a, T=T, top_decay=1.0 + eps,
                         name="strengthened", params={"c": c, "eps": eps}, **kw)


def adversarial_nodecay(c: float = 1.0, p: int = 2, T: float = 1.0, **kw) -> CauchyProblem:
    """Im a_{p-1} = c xi^{p-1} without x-decay, declared as if it decayed."""
    p = int(p)
    a = {p - 1: from_expr(sp.I * c * xi ** (p - 1), (p - 1, -1), f"a_{p - 1}")}
    return CauchyProblem(p, from_expr(xi**p, (p, 0), f"a_{p}"), a, T=T,
                         name="adversarial_nodecay", params={"c": c, "p": p}, **kw)


def refined_mode(c: float = 1.0, c_re: float = 1.0, T: float = 1.0, **kw) -> CauchyProblem:
    """p = 2 with a non-decaying real part and decaying imaginary part of a_1."""
    a1 = c_re * xi * x**2 / (1 + x**2) + sp.I * c * xi / _jx
    kw.setdefault("mode", "refined")
    return CauchyProblem(2, from_expr(xi**2, (2, 0), "a_2"), {1: from_expr(a1, (1, -1), "a_1")},
                         T=T, name="refined_mode", params={"c": c, "c_re": c_re}, **kw)


PRESETS = {
    "schrodinger_kb": (schrodinger_kb, "pass"),
    "cc3": (cc3, "pass"),
    "generic_p": (generic_p, "pass"),
    "strengthened": (strengthened, "pass"),
    "adversarial_nodecay": (adversarial_nodecay, "fail"),
    "refined_mode": (refined_mode, "pass"),
}


def preset(name: str, **params) -> CauchyProblem:
    """Build a preset problem by name; keyword arguments set its constants."""
    try:
        factory, _ = PRESETS[name]
    except KeyError:
        raise PevoError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)


def expected_verdict(name: str) -> str:
    return PRESETS[name][1]


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------

@dataclass
class CertificationRow:
    level: str
    alpha: int
    beta: int
    seminorm: float
    ok: bool


@dataclass
class CertificationReport:
    mode: str
    rows: list
    Cp: float | None
    passed: bool
    level_constants: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def _declared(problem: CauchyProblem, j: int, mode: str):
    """(label, symbol, order) triples that must hold for level j in this mode."""
    p = problem.p
    s = problem.a[j]
    decay = SymbolOrder(j, -j / (p - 1))
    if mode == "strengthened" and j == p - 1:
        decay = SymbolOrder(j, -problem.top_decay)
    if mode == "refined":
        return [(f"{j}:re", s.real_part(), SymbolOrder(j, 0.0)),
                (f"{j}:im", s.imag_part(), decay)]
    return [(str(j), s, decay)]


def certification_grids(grid: GridSpec) -> list:
    """(L, N), (2L, 2N) and (L, 2N)."""
    return [grid, grid.with_size(L=2 * grid.L, N=2 * grid.N), grid.with_size(N=2 * grid.N)]


def certify(problem: CauchyProblem, grid: GridSpec, mode: str | None = None,
            max_index: int = 2, growth_tol: float = 0.1, R: float = 2.0) -> CertificationReport:
    """Check the order hypotheses on sampled seminorms and estimate C_p.

    Each seminorm with alpha + beta <= max_index is evaluated at its declared
    order on (L, N), (2L, 2N) and (L, 2N); it passes when finite and no
    refinement raises it by more than ``growth_tol``.
    """
    mode = problem.mode if mode is None else mode
    times = problem_times(problem)
    grids = certification_grids(grid)
    items = [(str(problem.p), problem.a_p, SymbolOrder(problem.p, 0.0))]
    for j in sorted(problem.a):
        items += _declared(problem, j, mode)
    rows, failures = [], []
    for label, s, order in items:
        for alpha in range(max_index + 1):
            for beta in range(max_index + 1 - alpha):
                vals = []
                for g in grids:
                    vals.append(max(seminorm_estimate(s, alpha, beta, g, tt, order) for tt in times))
                base = vals[0]
                ok = all(np.isfinite(v) for v in vals) and all(
                    v <= (1.0 + growth_tol) * base + 1e-12 for v in vals[1:])
                rows.append(CertificationRow(label, alpha, beta, base, bool(ok)))
                if not ok:
                    failures.append(f"level {label} ({alpha},{beta}): {vals}")
    Cp = None
    try:
        Cp = estimate_Cp(problem.a_p, grid, times, R)
    except HypothesisViolation as exc:
        failures.append(str(exc))
    constants = {}
    for j in sorted(problem.a):
        if j >= 1:
            e = problem.top_decay if (mode == "strengthened" and j == problem.p - 1) else None
            constants[j] = [estimate_level_C(problem.a[j], j, problem.p, g, times, e, refine=False)
                            for g in grids[:2]]
    return CertificationReport(mode, rows, Cp, not failures, constants, failures)
