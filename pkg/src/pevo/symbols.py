"""SG symbols on (t, x, xi), smooth cutoffs, and the conjugator symbols lambda.

A :class:`Symbol` is evaluated through *jets*: ``s.jet(t, x, xi, a, b)``
returns every mixed partial ``d_xi^i d_x^j s`` with ``i <= a``, ``j <= b`` as
a dict keyed by ``(i, j)``.  Leaves provide analytic partials where they can
and fall back to nested fourth-order central differences (total depth at
most 4).  Sums, products, conjugates and exponentials combine the jets of
their children exactly (Leibniz rule), so derivatives of composite symbols
are only as inexact as those of their leaves.

All evaluators broadcast over ``x`` and ``xi``; ``t`` is a scalar.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial
from typing import Callable

import numpy as np
import sympy as sp
from scipy.special import expit, hyp2f1

from .errors import SymbolError, UnderResolved
from .grid import GridSpec, japanese

FD_MAX_DEPTH = 4

# Fourth-order central stencils for the n-th derivative: (offsets, weights).
_STENCILS = {
    1: (np.arange(-2, 3), np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0),
    2: (np.arange(-2, 3), np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0),
    3: (np.arange(-3, 4), np.array([1.0, -8.0, 13.0, 0.0, -13.0, 8.0, -1.0]) / 8.0),
    4: (np.arange(-3, 4), np.array([-1.0, 12.0, -39.0, 56.0, -39.0, 12.0, -1.0]) / 6.0),
}


def fd_step(order: int, scale: float = 1.0) -> float:
    """Roundoff-balanced step for a fourth-order stencil of the given order."""
    return scale * np.finfo(float).eps ** (1.0 / (order + 4))


@dataclass(frozen=True)
class SymbolOrder:
    m1: float = 0.0
    m2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.m1) and np.isfinite(self.m2)):
            raise SymbolError("symbol orders must be finite")

    def __add__(self, other: "SymbolOrder") -> "SymbolOrder":
        return SymbolOrder(self.m1 + other.m1, self.m2 + other.m2)

    def shift(self, d1: float, d2: float) -> "SymbolOrder":
        return SymbolOrder(self.m1 + d1, self.m2 + d2)

    def join(self, other: "SymbolOrder") -> "SymbolOrder":
        return SymbolOrder(max(self.m1, other.m1), max(self.m2, other.m2))


def _as_order(order) -> SymbolOrder:
    if isinstance(order, SymbolOrder):
        return order
    m1, m2 = order
    return SymbolOrder(float(m1), float(m2))


# ---------------------------------------------------------------------------
# Smooth step and cutoffs
# ---------------------------------------------------------------------------

def _theta_exponent(s):
    return 1.0 / (1.0 - s) - 1.0 / s


@lru_cache(maxsize=None)
def _theta_derivative_fn(n: int):
    # theta = expit(g); d/ds expit(g) = q (1 - q) g', with q standing for theta.
    s, q = sp.symbols("s q")
    gp = 1 / (1 - s) ** 2 + 1 / s**2
    expr = q
    for _ in range(n):
        expr = sp.expand(sp.diff(expr, s) + sp.diff(expr, q) * q * (1 - q) * gp)
    return sp.lambdify((s, q), expr, "numpy")


def bump_step(s, n: int = 0):
    """Smooth monotone step: 0 for s <= 0, 1 for s >= 1, theta(1/2) = 1/2.

    theta(s) = f(s) / (f(s) + f(1 - s)) with f(s) = exp(-1/s), evaluated in the
    overflow-free form expit(1/(1-s) - 1/s).  ``n`` selects the n-th derivative.
    """
    s = np.asarray(s, dtype=float)
    inside = (s > 0.0) & (s < 1.0)
    si = np.where(inside, s, 0.5)
    with np.errstate(over="ignore"):
        q = expit(_theta_exponent(si))
    if n == 0:
        return np.where(inside, q, np.where(s >= 1.0, 1.0, 0.0))
    with np.errstate(over="ignore", invalid="ignore"):
        d = _theta_derivative_fn(n)(si, q) * np.ones_like(si)
    return np.where(inside, np.nan_to_num(d, nan=0.0, posinf=0.0, neginf=0.0), 0.0)


def smooth_cutoff(z, inner: float, outer: float, n: int = 0):
    """Even cutoff in z: 1 on |z| <= inner, 0 on |z| >= outer; n-th z-derivative."""
    z = np.asarray(z, dtype=float)
    width = outer - inner
    s = (np.abs(z) - inner) / width
    if n == 0:
        return 1.0 - bump_step(s)
    return -bump_step(s, n) * (np.sign(z) / width) ** n


def eval_psi(y, n: int = 0):
    """Cutoff equal to 1 on |y| <= 1/2 and 0 on |y| >= 1."""
    return smooth_cutoff(y, 0.5, 1.0, n)


@dataclass(frozen=True)
class MollifierConfig:
    """Transition radius and sign pattern of the frequency mollifier omega.

    ``sign`` is the sign of the principal velocity d_xi a_p for large positive
    xi.  With ``odd=True`` the sign flips on the negative half-line, which is
    the situation for even p (e.g. d_xi xi^2 = 2 xi).
    """

    R: float = 2.0
    sign: int = 1
    odd: bool = False

    def __post_init__(self):
        if not self.R > 1:
            raise SymbolError(f"R must exceed 1, got {self.R}")
        if self.sign not in (-1, 1):
            raise SymbolError(f"sign must be +1 or -1, got {self.sign}")


def eval_omega(xi, h: float, cfg: MollifierConfig, n: int = 0):
    """omega(xi/h) or its n-th xi-derivative.

    0 for |xi/h| <= 1, the configured sign for |xi/h| >= R, and the smooth
    step theta((|xi/h| - 1)/(R - 1)) in between.
    """
    u = np.asarray(xi, dtype=float) / h
    su = np.sign(u)
    sgn = cfg.sign * (su if cfg.odd else 1.0)
    s = (np.abs(u) - 1.0) / (cfg.R - 1.0)
    if n == 0:
        return sgn * bump_step(s)
    return sgn * su**n * bump_step(s, n) / ((cfg.R - 1.0) * h) ** n


# ---------------------------------------------------------------------------
# Symbols
# ---------------------------------------------------------------------------

def _broadcast(val, x, xi):
    shape = np.broadcast_shapes(np.shape(x), np.shape(xi))
    return np.broadcast_to(np.asarray(val), shape)


def _rect(a: int, b: int):
    return [(i, j) for i in range(a + 1) for j in range(b + 1)]


class Symbol:
    """A symbol p(t, x, xi) with a declared SG order (m1, m2).

    Subclasses implement :meth:`jet`.  ``analytic_depth`` is the total
    derivative order up to which partials are exact rather than finite
    differences.
    """

    analytic_depth: float = 0
    time_dependent: bool = False
    x_independent: bool = False
    xi_independent: bool = False

    def __init__(self, order=(0.0, 0.0), label: str = ""):
        self.order = _as_order(order)
        self.label = label

    def jet(self, t, x, xi, a: int = 0, b: int = 0) -> dict:
        raise NotImplementedError

    def __call__(self, t, x, xi):
        return self.jet(t, x, xi)[(0, 0)]

    def partial(self, a: int = 0, b: int = 0) -> "Symbol":
        """The symbol d_xi^a d_x^b p."""
        if a == 0 and b == 0:
            return self
        return PartialSymbol(self, a, b)

    def values(self, t, x, xi, a: int = 0, b: int = 0):
        return self.jet(t, x, xi, a, b)[(a, b)]

    # algebra --------------------------------------------------------------
    def __add__(self, other):
        return SumSymbol([self, as_symbol(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return SumSymbol([self, as_symbol(other)], [1.0, -1.0])

    def __rsub__(self, other):
        return SumSymbol([as_symbol(other), self], [1.0, -1.0])

    def __neg__(self):
        return SumSymbol([self], [-1.0])

    def __mul__(self, other):
        if isinstance(other, Symbol):
            return ProductSymbol(self, other)
        return SumSymbol([self], [complex(other) if np.iscomplexobj(other) else float(other)])

    __rmul__ = __mul__

    def conj(self) -> "Symbol":
        return ConjSymbol(self)

    def real_part(self) -> "Symbol":
        return PartSymbol(self, "real")

    def imag_part(self) -> "Symbol":
        return PartSymbol(self, "imag")

    def exp(self, order=(0.0, 0.0)) -> "Symbol":
        return ExpSymbol(self, order)

    def with_order(self, order) -> "Symbol":
        return RelabeledSymbol(self, order)

    def __repr__(self):
        name = self.label or type(self).__name__
        return f"<{name} order=({self.order.m1:g},{self.order.m2:g})>"


def _fd_jet_entry(fn: Callable, t, x, xi, a: int, b: int, scale_xi: float, scale_x: float):
    """Nested central differences of fn(t, x, xi) for d_xi^a d_x^b."""
    if a + b > FD_MAX_DEPTH:
        raise SymbolError(f"finite-difference depth {a + b} exceeds {FD_MAX_DEPTH}")
    offs_a, w_a = _STENCILS[a] if a else (np.array([0]), np.array([1.0]))
    offs_b, w_b = _STENCILS[b] if b else (np.array([0]), np.array([1.0]))
    dxi = fd_step(a, scale_xi) if a else 0.0
    dx = fd_step(b, scale_x) if b else 0.0
    acc = 0.0
    for oa, wa in zip(offs_a, w_a):
        if wa == 0.0:
            continue
        for ob, wb in zip(offs_b, w_b):
            if wb == 0.0:
                continue
            acc = acc + wa * wb * np.asarray(fn(t, x + ob * dx, xi + oa * dxi))
    return acc / ((dxi**a if a else 1.0) * (dx**b if b else 1.0))


class LeafSymbol(Symbol):
    """A symbol with an evaluator and optional analytic partials.

    ``provider(t, x, xi, a, b)`` returns the analytic partial or ``None``.
    Missing partials are obtained by differencing the highest available
    lower partial.
    """

    fd_scale_xi = 1.0
    fd_scale_x = 1.0

    def analytic(self, t, x, xi, a: int, b: int):
        """Return the exact partial (a, b) or None if not available."""
        raise NotImplementedError

    def jet(self, t, x, xi, a: int = 0, b: int = 0) -> dict:
        out = {}
        for i, j in _rect(a, b):
            val = self.analytic(t, x, xi, i, j)
            if val is None:
                val = self._fd_entry(t, x, xi, i, j)
            out[(i, j)] = _broadcast(val, x, xi)
        return out

    def _fd_entry(self, t, x, xi, a, b):
        if self.x_independent and b > 0 or self.xi_independent and a > 0:
            return np.zeros(())
        # differentiate the deepest analytic partial below (a, b)
        best = (0, 0)
        for i, j in _rect(a, b):
            if (i, j) != (a, b) and i + j > sum(best):
                if self.analytic(t, np.asarray(0.0), np.asarray(1.0), i, j) is not None:
                    best = (i, j)
        bi, bj = best

        def base(tt, xx, yy):
            v = self.analytic(tt, xx, yy, bi, bj)
            if v is None:
                raise SymbolError(f"{self!r} cannot evaluate partial {best}")
            return v

        return _fd_jet_entry(base, t, x, xi, a - bi, b - bj, self.fd_scale_xi, self.fd_scale_x)


class FunctionSymbol(LeafSymbol):
    """Symbol from a vectorised callable fn(t, x, xi).

    ``partials(t, x, xi, a, b)`` may supply analytic derivatives up to
    ``depth``; they are smoke-checked against finite differences at
    construction.
    """

    def __init__(self, fn: Callable, order=(0.0, 0.0), *, partials: Callable | None = None,
                 depth: int = 0, label: str = "", time_dependent: bool = False,
                 x_independent: bool = False, xi_independent: bool = False,
                 check: bool = True):
        super().__init__(order, label)
        self.fn = fn
        self.partials = partials
        self.analytic_depth = depth if partials is not None else 0
        self.time_dependent = time_dependent
        self.x_independent = x_independent
        self.xi_independent = xi_independent
        if partials is not None and check:
            check_partials(self)

    def analytic(self, t, x, xi, a, b):
        if a == 0 and b == 0:
            return self.fn(t, x, xi)
        if self.x_independent and b > 0 or self.xi_independent and a > 0:
            return np.zeros(())
        if self.partials is not None and a + b <= self.analytic_depth:
            return self.partials(t, x, xi, a, b)
        return None


def check_partials(s: LeafSymbol, samples: int = 100, seed: int = 0, rtol: float = 1e-4):
    """Compare analytic partials of a leaf with finite differences at random points."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5.0, 5.0, samples)
    xi = rng.uniform(-10.0, 10.0, samples)
    depth = int(min(s.analytic_depth, 2))
    # absolute floor from the values themselves so vanishing partials compare sanely
    floor = np.max(np.abs(_broadcast(s.analytic(0.0, x, xi, 0, 0), x, xi)))
    for a, b in _rect(depth, depth):
        if a + b == 0 or a + b > depth:
            continue
        exact = s.analytic(0.0, x, xi, a, b)
        if exact is None:
            continue
        exact = _broadcast(exact, x, xi)
        fd = _broadcast(s._fd_from_values(0.0, x, xi, a, b), x, xi)
        scale = np.max(np.abs(exact)) + 1e-3 * floor + 1e-12
        if np.max(np.abs(fd - exact)) > rtol * scale:
            raise SymbolError(f"analytic partial ({a},{b}) of {s!r} disagrees with finite differences")


def _fd_from_values(self, t, x, xi, a, b):
    return _fd_jet_entry(lambda tt, xx, yy: self.analytic(tt, xx, yy, 0, 0), t, x, xi, a, b,
                         self.fd_scale_xi, self.fd_scale_x)


LeafSymbol._fd_from_values = _fd_from_values

_T, _X, _XI = sp.symbols("t x xi", real=True)


class ExprSymbol(LeafSymbol):
    """Symbol given by a sympy expression in t, x, xi; all partials exact."""

    analytic_depth = np.inf

    def __init__(self, expr, order=(0.0, 0.0), label: str = ""):
        super().__init__(order, label or str(expr))
        self.expr = sp.sympify(expr)
        free = self.expr.free_symbols
        self.time_dependent = _T in free
        self.x_independent = _X not in free
        self.xi_independent = _XI not in free
        self._fns: dict = {}

    def _fn(self, a, b):
        key = (a, b)
        if key not in self._fns:
            e = sp.diff(self.expr, _XI, a, _X, b) if a or b else self.expr
            self._fns[key] = sp.lambdify((_T, _X, _XI), e, "numpy")
        return self._fns[key]

    def analytic(self, t, x, xi, a, b):
        if self.x_independent and b > 0 or self.xi_independent and a > 0:
            return np.zeros(())
        with np.errstate(all="ignore"):
            return self._fn(a, b)(t, x, xi)


def from_expr(expr, order=(0.0, 0.0), label: str = "") -> ExprSymbol:
    """Build a symbol from a sympy expression (or string) in t, x, xi."""
    if isinstance(expr, str):
        expr = sp.sympify(expr, locals={"t": _T, "x": _X, "xi": _XI})
    return ExprSymbol(expr, order, label)


def sympy_vars():
    """The sympy symbols (t, x, xi) understood by :func:`from_expr`."""
    return _T, _X, _XI


class ConstantSymbol(LeafSymbol):
    analytic_depth = np.inf
    x_independent = True
    xi_independent = True

    def __init__(self, value: complex):
        super().__init__((0.0, 0.0), f"{value}")
        self.value = value

    def analytic(self, t, x, xi, a, b):
        return np.asarray(self.value) if a == 0 and b == 0 else np.zeros(())


def as_symbol(obj) -> Symbol:
    return obj if isinstance(obj, Symbol) else ConstantSymbol(obj)


class SumSymbol(Symbol):
    def __init__(self, terms, coeffs=None):
        coeffs = [1.0] * len(terms) if coeffs is None else list(coeffs)
        order = terms[0].order
        for s in terms[1:]:
            order = order.join(s.order)
        super().__init__(order, " + ".join(s.label for s in terms))
        self.terms = list(terms)
        self.coeffs = coeffs
        self.analytic_depth = min(s.analytic_depth for s in terms)
        self.time_dependent = any(s.time_dependent for s in terms)
        self.x_independent = all(s.x_independent for s in terms)
        self.xi_independent = all(s.xi_independent for s in terms)

    def jet(self, t, x, xi, a=0, b=0):
        out = {key: 0.0 for key in _rect(a, b)}
        for c, s in zip(self.coeffs, self.terms):
            js = s.jet(t, x, xi, a, b)
            for key in out:
                out[key] = out[key] + c * js[key]
        return {k: _broadcast(v, x, xi) for k, v in out.items()}


def _leibniz(ja: dict, jb: dict, a: int, b: int):
    out = {}
    for i, j in _rect(a, b):
        acc = 0.0
        for ii in range(i + 1):
            for jj in range(j + 1):
                acc = acc + comb(i, ii) * comb(j, jj) * ja[(ii, jj)] * jb[(i - ii, j - jj)]
        out[(i, j)] = acc
    return out


class ProductSymbol(Symbol):
    def __init__(self, left: Symbol, right: Symbol, order=None):
        super().__init__(order if order is not None else left.order + right.order,
                         f"({left.label})*({right.label})")
        self.left, self.right = left, right
        self.analytic_depth = min(left.analytic_depth, right.analytic_depth)
        self.time_dependent = left.time_dependent or right.time_dependent
        self.x_independent = left.x_independent and right.x_independent
        self.xi_independent = left.xi_independent and right.xi_independent

    def jet(self, t, x, xi, a=0, b=0):
        out = _leibniz(self.left.jet(t, x, xi, a, b), self.right.jet(t, x, xi, a, b), a, b)
        return {k: _broadcast(v, x, xi) for k, v in out.items()}


class _UnarySymbol(Symbol):
    def __init__(self, base: Symbol, order, label):
        super().__init__(order, label)
        self.base = base
        self.analytic_depth = base.analytic_depth
        self.time_dependent = base.time_dependent
        self.x_independent = base.x_independent
        self.xi_independent = base.xi_independent


class ConjSymbol(_UnarySymbol):
    def __init__(self, base):
        super().__init__(base, base.order, f"conj({base.label})")

    def jet(self, t, x, xi, a=0, b=0):
        return {k: np.conj(v) for k, v in self.base.jet(t, x, xi, a, b).items()}


class PartSymbol(_UnarySymbol):
    def __init__(self, base, part: str):
        super().__init__(base, base.order, f"{part}({base.label})")
        self.part = part

    def jet(self, t, x, xi, a=0, b=0):
        f = np.real if self.part == "real" else np.imag
        return {k: f(v) for k, v in self.base.jet(t, x, xi, a, b).items()}


class RelabeledSymbol(_UnarySymbol):
    """The same symbol with a different declared order."""

    def __init__(self, base, order):
        super().__init__(base, order, base.label)

    def jet(self, t, x, xi, a=0, b=0):
        return self.base.jet(t, x, xi, a, b)


class PartialSymbol(_UnarySymbol):
    def __init__(self, base: Symbol, a: int, b: int):
        super().__init__(base, base.order.shift(-a, -b), f"d_xi^{a} d_x^{b} {base.label}")
        self.a, self.b = a, b
        self.analytic_depth = base.analytic_depth - a - b

    def jet(self, t, x, xi, a=0, b=0):
        full = self.base.jet(t, x, xi, a + self.a, b + self.b)
        return {(i, j): full[(i + self.a, j + self.b)] for i, j in _rect(a, b)}


class ExpSymbol(_UnarySymbol):
    """exp(f), with partials from the recursion d(e^f) = e^f df."""

    def __init__(self, base: Symbol, order=(0.0, 0.0)):
        super().__init__(base, _as_order(order), f"exp({base.label})")

    def jet(self, t, x, xi, a=0, b=0):
        f = self.base.jet(t, x, xi, a, b)
        E = {(0, 0): np.exp(f[(0, 0)])}
        for i, j in sorted(_rect(a, b), key=lambda k: (k[0] + k[1], k)):
            if (i, j) == (0, 0):
                continue
            acc = 0.0
            if i >= 1:
                for ii in range(i):
                    for jj in range(j + 1):
                        acc = acc + comb(i - 1, ii) * comb(j, jj) * E[(ii, jj)] * f[(i - ii, j - jj)]
            else:
                for jj in range(j):
                    acc = acc + comb(j - 1, jj) * E[(0, jj)] * f[(0, j - jj)]
            E[(i, j)] = acc
        return {k: _broadcast(v, x, xi) for k, v in E.items()}


# ---------------------------------------------------------------------------
# Conjugator symbols
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _profile_derivative_fn(gamma: float, n: int):
    # n-th derivative of <x>^{-gamma}
    y = sp.symbols("y", real=True)
    e = sp.diff((1 + y**2) ** (-sp.nsimplify(gamma) / 2), y, n)
    return sp.lambdify(y, e, "numpy")


def decay_primitive(x, gamma: float, n: int = 0):
    """G(x) = int_0^x <y>^{-gamma} dy and its x-derivatives.

    gamma = 1 gives asinh(x); otherwise G(x) = x 2F1(1/2, gamma/2; 3/2; -x^2).
    """
    x = np.asarray(x, dtype=float)
    if n == 0:
        if gamma == 1.0:
            return np.arcsinh(x)
        return x * hyp2f1(0.5, gamma / 2.0, 1.5, -x * x)
    return _profile_derivative_fn(float(gamma), n - 1)(x) * np.ones_like(x)


class LambdaSymbol(LeafSymbol):
    """A real conjugator symbol lambda_{p-k} of amplitude M.

    ``k`` is the step index (1 is the top level), ``p`` the equation order.
    """

    def __init__(self, k: int, M: float, p: int, h: float, cfg: MollifierConfig, label: str):
        super().__init__((0.0, 0.0), label)
        if M < 0:
            raise SymbolError(f"amplitude M must be nonnegative, got {M}")
        self.k, self.M, self.p, self.h, self.cfg = k, float(M), p, float(h), cfg

    @property
    def is_zero(self) -> bool:
        return self.M == 0.0

    def on_grid(self, grid: GridSpec) -> Symbol:
        """This symbol damped by the grid's x-taper and xi-roll-off."""
        return ProductSymbol(truncation_symbol(grid), self, order=self.order)


class TopLambda(LambdaSymbol):
    """M omega(xi/h) G(x) with G(x) = int_0^x <y>^{-gamma} dy."""

    analytic_depth = np.inf

    def __init__(self, M, h, cfg, p: int = 2, gamma: float = 1.0):
        super().__init__(1, M, p, h, cfg, f"lambda_top(M={M:g})")
        self.gamma = float(gamma)

    def analytic(self, t, x, xi, a, b):
        if self.is_zero:
            return np.zeros(())
        return self.M * eval_omega(xi, self.h, self.cfg, a) * decay_primitive(x, self.gamma, b)


def _gl_rule(n: int = 32):
    return np.polynomial.legendre.leggauss(n)


_GL_NODES, _GL_WEIGHTS = _gl_rule()


def _cut_integrand(y, gamma: float, S: float):
    wy = japanese(y)
    return wy ** (-gamma) * eval_psi(wy / S)


def _panel_edges(S: float, xmax: float, width: float = 1.0):
    """Panel breakpoints on [0, min(xmax, support end)].

    Unit panels up to <y> = S/2, then a finer subdivision of the cutoff
    transition up to <y> = S, beyond which the integrand vanishes.
    """
    y_half = np.sqrt(max(S * S / 4.0 - 1.0, 0.0))
    y_end = np.sqrt(max(S * S - 1.0, 0.0))
    top = min(xmax, y_end)
    stop = min(top, y_half)
    edges = list(np.arange(0.0, stop, width)) + [stop]
    if top > y_half:
        n_tr = max(8, int(np.ceil(8 * (y_end - y_half) / width)))
        tr = np.linspace(y_half, y_end, n_tr + 1)[1:]
        edges += [e for e in tr if e < top] + [top]
    edges = np.unique(np.asarray(edges, dtype=float))
    return edges, y_end


@lru_cache(maxsize=4096)
def _primitive_table(gamma: float, S: float, xmax: float, width: float = 1.0):
    edges, y_end = _panel_edges(S, xmax, width)
    a, b = edges[:-1], edges[1:]
    mid, half = (a + b) / 2.0, (b - a) / 2.0
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    panel = half * (_cut_integrand(nodes, gamma, S) @ _GL_WEIGHTS)
    cum = np.concatenate([[0.0], np.cumsum(panel)])
    return edges, cum, y_end


def cut_primitive(x, gamma: float, S: float, width: float = 1.0):
    """J(x) = int_0^x <y>^{-gamma} psi(<y>/S) dy by composite Gauss-Legendre.

    Panels have the given width (refined across the cutoff transition); the
    antiderivative at panel edges is cached per (gamma, S).
    """
    x = np.asarray(x, dtype=float)
    if S <= 1.0 or x.size == 0:
        return np.zeros_like(x)
    shape, x = x.shape, x.ravel()
    ax = np.abs(x)
    edges, cum, _ = _primitive_table(float(gamma), float(S), float(np.ceil(ax.max())), width)
    z = np.minimum(ax, edges[-1])
    idx = np.clip(np.searchsorted(edges, z, side="right") - 1, 0, len(edges) - 1)
    lo = edges[idx]
    half = (z - lo) / 2.0
    nodes = lo[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
    part = half * (_cut_integrand(nodes, gamma, S) @ _GL_WEIGHTS)
    return (np.sign(x) * (cum[idx] + part)).reshape(shape)


class LowerLambda(LambdaSymbol):
    """M omega(xi/h) <xi>_h^{1-k} int_0^x <y>^{-(p-k)/(p-1)} psi(<y>/<xi>_h^{p-1}) dy."""

    analytic_depth = 1

    def __init__(self, k: int, M: float, p: int, h: float, cfg: MollifierConfig):
        if not 2 <= k <= p - 1:
            raise SymbolError(f"lower conjugator needs 2 <= k <= p-1, got k={k}, p={p}")
        super().__init__(k, M, p, h, cfg, f"lambda_{p - k}(M={M:g})")
        self.gamma = (p - k) / (p - 1)

    def saturation_scale(self, xi):
        """S(xi) = <xi>_h^{p-1}; lambda is constant in x where <x> >= S."""
        return japanese(xi, self.h) ** (self.p - 1)

    def analytic(self, t, x, xi, a, b):
        if self.is_zero:
            return np.zeros(())
        if a > 0 or b > 1:
            return None
        x, xi = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(xi, dtype=float))
        S = self.saturation_scale(xi)
        amp = self.M * eval_omega(xi, self.h, self.cfg) * japanese(xi, self.h) ** (1 - self.k)
        if b == 1:
            wx = japanese(x)
            return amp * wx ** (-self.gamma) * eval_psi(wx / S)
        out = np.zeros(x.shape)
        active = amp != 0.0
        if not np.any(active):
            return out
        xs, Ss = x[active], S[active]
        keys, inv = np.unique(Ss, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(keys) + 1))
        vals = np.empty(xs.shape)
        for i, Sk in enumerate(keys):
            sel = order[bounds[i]:bounds[i + 1]]
            vals[sel] = cut_primitive(xs[sel], self.gamma, Sk)
        out[active] = amp[active] * vals
        return out


def lambda_top(M: float, h: float, cfg: MollifierConfig, p: int = 2, gamma: float = 1.0) -> TopLambda:
    """lambda_{p-1}(x, xi) = M omega(xi/h) int_0^x <y>^{-gamma} dy (gamma = 1: asinh)."""
    return TopLambda(M, h, cfg, p, gamma)


def lambda_lower(k: int, M: float, p: int, h: float, cfg: MollifierConfig) -> LowerLambda:
    return LowerLambda(k, M, p, h, cfg)


class TruncationSymbol(LeafSymbol):
    """rho(x) * rho(xi): smooth damping towards the box edge and the Nyquist wrap."""

    analytic_depth = np.inf

    def __init__(self, grid: GridSpec):
        super().__init__((0.0, 0.0), "truncation")
        self.x_cut = (grid.x_taper[0] * grid.L, grid.x_taper[1] * grid.L)
        self.xi_cut = (grid.xi_rolloff[0] * grid.xi_max, grid.xi_rolloff[1] * grid.xi_max)

    def analytic(self, t, x, xi, a, b):
        return smooth_cutoff(x, *self.x_cut, n=b) * smooth_cutoff(xi, *self.xi_cut, n=a)


def truncation_symbol(grid: GridSpec) -> TruncationSymbol:
    return TruncationSymbol(grid)


# ---------------------------------------------------------------------------
# Seminorms
# ---------------------------------------------------------------------------

def _fd_grid_derivative(s: Symbol, t, X, XI, a, b, dx, dxi):
    offs_a, w_a = _STENCILS[a] if a else (np.array([0]), np.array([1.0]))
    offs_b, w_b = _STENCILS[b] if b else (np.array([0]), np.array([1.0]))
    acc = 0.0
    for oa, wa in zip(offs_a, w_a):
        for ob, wb in zip(offs_b, w_b):
            if wa and wb:
                acc = acc + wa * wb * s(t, X + ob * dx, XI + oa * dxi)
    return acc / (dxi**a * dx**b)


def seminorm_estimate(s: Symbol, alpha: int, beta: int, grid: GridSpec, t: float = 0.0,
                      order: SymbolOrder | None = None, rtol: float = 0.1) -> float:
    """sup <xi>^{-m1+alpha} <x>^{-m2+beta} |d_xi^alpha d_x^beta s| over the grid.

    Uses analytic partials when the symbol has them to this depth; otherwise
    fourth-order differences with steps (dxi, dx), accepted only if halving the
    steps changes the estimate by at most ``rtol``.
    """
    if alpha < 0 or beta < 0 or alpha + beta > FD_MAX_DEPTH:
        raise SymbolError(f"seminorm index ({alpha},{beta}) outside 0 <= alpha+beta <= {FD_MAX_DEPTH}")
    order = s.order if order is None else order
    X, XI = grid.mesh()
    weight = japanese(XI) ** (alpha - order.m1) * japanese(X) ** (beta - order.m2)

    def sup(d):
        d = np.asarray(d)
        if not np.all(np.isfinite(d)):
            raise SymbolError(f"non-finite derivative values for {s!r}")
        return float(np.max(np.abs(d) * weight))

    if alpha + beta == 0 or s.analytic_depth >= alpha + beta:
        return sup(s.values(t, X, XI, alpha, beta))
    coarse = sup(_fd_grid_derivative(s, t, X, XI, alpha, beta, grid.dx, grid.dxi))
    fine = sup(_fd_grid_derivative(s, t, X, XI, alpha, beta, grid.dx / 2, grid.dxi / 2))
    if abs(coarse - fine) > rtol * max(fine, 1e-300):
        raise UnderResolved(
            f"seminorm ({alpha},{beta}) of {s!r} changed from {coarse:.4g} to {fine:.4g} under step halving")
    return fine


def expansion_factor(alpha: int) -> complex:
    """(-i)^alpha / alpha!, the coefficient turning d_x^alpha into D_x^alpha / alpha!."""
    return (-1j) ** alpha / factorial(alpha)
