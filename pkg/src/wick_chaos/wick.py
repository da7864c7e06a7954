"""Wick calculus on finite Hermite expansions.

Wick and ordinary products, Malliavin gradients, second quantization,
stochastic exponentials and the associated pairings.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .hermite import (
    MAX_DEGREE,
    ChaosExpansion,
    DegreeOverflowError,
    MultiIndex,
    QuadratureRule,
    degree,
    evaluate,
    gauss_hermite_rule,
    multi_factorial,
    rule_for_degree,
    tensor_grid,
    total_degree_indices,
    unit_index,
)


def as_cm_vector(h, dim: int | None = None) -> np.ndarray:
    """Validate a Cameron-Martin vector (a finite real vector)."""
    v = np.atleast_1d(np.asarray(h, dtype=float))
    if v.ndim != 1:
        raise ValueError("Cameron-Martin vector must be one-dimensional")
    if not np.all(np.isfinite(v)):
        raise ValueError("Cameron-Martin vector has non-finite entries")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"vector of length {v.shape[0]} does not match dimension {dim}")
    return v


def _same_dim(F: ChaosExpansion, G: ChaosExpansion):
    if F.dim != G.dim:
        raise ValueError(f"dimension mismatch: {F.dim} vs {G.dim}")


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------

def wick_product(F: ChaosExpansion, G: ChaosExpansion) -> ChaosExpansion:
    """F <> G, i.e. He_alpha <> He_beta = He_{alpha+beta}."""
    _same_dim(F, G)
    out: dict[MultiIndex, float] = {}
    for a, fa in F.coeffs.items():
        for b, gb in G.coeffs.items():
            g = tuple(x + y for x, y in zip(a, b))
            out[g] = out.get(g, 0.0) + fa * gb
    cap = None
    if F.degree_cap is not None and G.degree_cap is not None:
        cap = F.degree_cap + G.degree_cap
    return ChaosExpansion(F.dim, out, cap)


@lru_cache(maxsize=None)
def linearization(j: int, k: int) -> tuple[tuple[int, float], ...]:
    """He_j He_k = sum_r C(j,r) C(k,r) r! He_{j+k-2r}."""
    return tuple(
        (j + k - 2 * r, float(math.comb(j, r) * math.comb(k, r) * math.factorial(r)))
        for r in range(min(j, k) + 1)
    )


@lru_cache(maxsize=200_000)
def _index_product(a: MultiIndex, b: MultiIndex) -> tuple[tuple[MultiIndex, float], ...]:
    per_axis = [linearization(x, y) for x, y in zip(a, b)]
    return tuple(
        (tuple(t[0] for t in combo), math.prod(t[1] for t in combo))
        for combo in itertools.product(*per_axis)
    )


def pointwise_product(F: ChaosExpansion, G: ChaosExpansion) -> ChaosExpansion:
    """Exact Hermite expansion of the ordinary product F*G."""
    _same_dim(F, G)
    if F.degree + G.degree > MAX_DEGREE:
        raise DegreeOverflowError(f"product degree {F.degree + G.degree} exceeds cap {MAX_DEGREE}")
    out: dict[MultiIndex, float] = {}
    for a, fa in F.coeffs.items():
        for b, gb in G.coeffs.items():
            s = fa * gb
            for g, w in _index_product(a, b):
                out[g] = out.get(g, 0.0) + s * w
    return ChaosExpansion(F.dim, out)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientStack:
    """Iterated gradient D^l F: one expansion per ordered tuple of axes."""

    order: int
    dim: int
    components: Mapping[tuple[int, ...], ChaosExpansion]

    def norm_sq(self) -> float:
        """E ||D^l F||^2 summed over all ordered tuples."""
        return math.fsum(c.norm_sq() for c in self.components.values())

    def is_zero(self) -> bool:
        return all(not c.coeffs for c in self.components.values())

    def __getitem__(self, key) -> ChaosExpansion:
        if isinstance(key, int):
            key = (key,)
        return self.components[tuple(key)]

    def evaluate(self, w) -> dict[tuple[int, ...], np.ndarray]:
        return {t: evaluate(c, w) for t, c in self.components.items()}


def partial(F: ChaosExpansion, i: int) -> ChaosExpansion:
    """d/dw_i F using He_k' = k He_{k-1}."""
    if not 0 <= i < F.dim:
        raise IndexError(f"axis {i} out of range for dimension {F.dim}")
    out = {}
    for a, c in F.coeffs.items():
        if a[i]:
            b = a[:i] + (a[i] - 1,) + a[i + 1:]
            out[b] = a[i] * c
    return ChaosExpansion(F.dim, out)


def gradient(F: ChaosExpansion) -> GradientStack:
    return GradientStack(1, F.dim, {(i,): partial(F, i) for i in range(F.dim)})


def iterated_gradient(F: ChaosExpansion, l: int) -> GradientStack:
    if l < 1:
        raise ValueError("gradient order must be positive")
    comps = {(): F}
    for _ in range(l):
        comps = {t + (i,): partial(c, i) for t, c in comps.items() for i in range(F.dim)}
    return GradientStack(l, F.dim, comps)


def gradient_norm_closed_form(F: ChaosExpansion, l: int) -> float:
    """sum_alpha |alpha|!/(|alpha|-l)! alpha! c_alpha^2."""
    return math.fsum(
        math.perm(degree(a), l) * multi_factorial(a) * c * c
        for a, c in F.coeffs.items()
        if degree(a) >= l
    )


# ---------------------------------------------------------------------------
# second quantization and Ornstein-Uhlenbeck
# ---------------------------------------------------------------------------

def gamma(F: ChaosExpansion, lam: float) -> ChaosExpansion:
    """Gamma(lam): scale the n-th chaos by lam**n."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return ChaosExpansion(
        F.dim, {a: (lam ** degree(a)) * c for a, c in F.coeffs.items()}, F.degree_cap,
        approximate=F.approximate,
    )


def ou_apply(F: ChaosExpansion, t: float) -> ChaosExpansion:
    """Ornstein-Uhlenbeck semigroup P_t = Gamma(exp(-t))."""
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    return gamma(F, math.exp(-t))


def mehler_apply(F: ChaosExpansion, t: float, points, rule: QuadratureRule | None = None) -> np.ndarray:
    """(P_t F)(w) = E[F(e^{-t} w + sqrt(1 - e^{-2t}) W~)] by quadrature, at each row of ``points``."""
    if t < 0:
        raise ValueError("OU time must be nonnegative")
    rule = rule or rule_for_degree(F.degree)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if F.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
        pts = pts.T
    nodes, wts = tensor_grid(rule, F.dim)
    a, b = math.exp(-t), math.sqrt(-math.expm1(-2 * t))
    out = np.empty(pts.shape[0])
    for n, w in enumerate(pts):
        out[n] = wts @ evaluate(F, a * w + b * nodes)
    return out


# ---------------------------------------------------------------------------
# pairings and norms
# ---------------------------------------------------------------------------

def l2_pairing(F: ChaosExpansion, G: ChaosExpansion) -> float:
    """<<F, G>> = E[F G] = sum alpha! F_alpha G_alpha."""
    _same_dim(F, G)
    small, big = (F, G) if len(F.coeffs) <= len(G.coeffs) else (G, F)
    return math.fsum(
        multi_factorial(a) * c * big.coeffs[a] for a, c in small.coeffs.items() if a in big.coeffs
    )


def glambda_norm(F: ChaosExpansion, lam: float) -> float:
    """Norm of the Hilbert scale G_lambda, equal to ||Gamma(lam) F||_2."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return math.sqrt(
        math.fsum(multi_factorial(a) * lam ** (2 * degree(a)) * c * c for a, c in F.coeffs.items())
    )


def lp_norm(F: ChaosExpansion, p: float, rule: QuadratureRule | None = None) -> float:
    """(E|F|^p)^(1/p) by tensor quadrature.

    |F|^p is not polynomial for odd p; the default rule uses 2*deg + 2 points per axis.
    """
    rule = rule or gauss_hermite_rule(min(2 * F.degree + 2, 64))
    pts, wts = tensor_grid(rule, F.dim)
    return float(wts @ np.abs(evaluate(F, pts)) ** p) ** (1.0 / p)


# ---------------------------------------------------------------------------
# exponentials and transforms
# ---------------------------------------------------------------------------

def _monomial(h: np.ndarray, alpha: MultiIndex) -> float:
    return math.prod(float(h[i]) ** a for i, a in enumerate(alpha) if a)


def exp_series_tail(x: float, n: int) -> float:
    """sum_{k>n} x^k / k! summed directly (no cancellation for x >= 0)."""
    if x == 0.0:
        return 0.0
    k = n + 1
    term = math.copysign(1.0, x) ** k * math.exp(k * math.log(abs(x)) - math.lgamma(k + 1))
    total = 0.0
    while True:
        total += term
        k += 1
        term *= x / k
        if k > abs(x) and abs(term) <= 1e-17 * abs(total) or abs(term) < 1e-300:
            return total


def stochastic_exponential(h, degree_cap: int, dim: int | None = None) -> ChaosExpansion:
    """Truncation of E(h) = exp(<h,w> - |h|^2/2) with c_alpha = h^alpha / alpha!.

    ``tail`` holds the squared L2 norm of the discarded chaoses,
    sum_{k > N} |h|^{2k} / k!.
    """
    if degree_cap < 0:
        raise ValueError("degree cap must be nonnegative")
    h = as_cm_vector(h, dim)
    n = h.shape[0]
    coeffs = {a: _monomial(h, a) / multi_factorial(a) for a in total_degree_indices(n, degree_cap)}
    tail = exp_series_tail(float(h @ h), degree_cap)
    return ChaosExpansion(n, coeffs, degree_cap, tail=tail)


def delta(h) -> ChaosExpansion:
    """delta(h) = <h, w>."""
    h = as_cm_vector(h)
    n = h.shape[0]
    return ChaosExpansion(n, {unit_index(n, i): float(h[i]) for i in range(n)})


def s_transform(F: ChaosExpansion, h) -> float:
    """S-transform E[F E(h)] = sum_alpha F_alpha h^alpha."""
    h = as_cm_vector(h, F.dim)
    return math.fsum(c * _monomial(h, a) for a, c in F.coeffs.items())


def wick_with_delta(F: ChaosExpansion, h, tol: float = 1e-10) -> ChaosExpansion:
    """F <> delta(h), cross-checked against F*delta(h) - <DF, h>."""
    h = as_cm_vector(h, F.dim)
    d = delta(h)
    wick = wick_product(F, d)
    alt = pointwise_product(F, d)
    for i in range(F.dim):
        if h[i]:
            alt = alt - float(h[i]) * partial(F, i)
    scale = 1.0 + max((abs(c) for c in wick.coeffs.values()), default=0.0)
    if wick.max_coef_diff(alt) > tol * scale:
        raise ArithmeticError("Wick/derivative identity for F <> delta(h) failed")
    return wick


def shifted_expectation(F: ChaosExpansion, a, rule: QuadratureRule | None = None) -> float:
    """E[F(W + a)] by quadrature; equals E[F E(a)] by Cameron-Martin."""
    a = as_cm_vector(a, F.dim)
    if rule is None:
        rule = rule_for_degree(F.degree)
    elif rule.exactness_degree < F.degree:
        raise ValueError(
            f"rule of exactness {rule.exactness_degree} is too coarse for degree {F.degree}"
        )
    pts, wts = tensor_grid(rule, F.dim)
    return float(wts @ evaluate(F, pts + a))


def wick_correction(F: ChaosExpansion, max_order: int | None = None) -> ChaosExpansion:
    """sum_{j>=1} 1/j! sum_tuples (D^j F)_t <> (D^j F)_t, i.e. F*F - F<>F."""
    top = F.degree if max_order is None else max_order
    out = ChaosExpansion.zero(F.dim)
    for j in range(1, top + 1):
        stack = iterated_gradient(F, j)
        acc: dict[MultiIndex, float] = {}
        for comp in stack.components.values():
            for g, c in wick_product(comp, comp).coeffs.items():
                acc[g] = acc.get(g, 0.0) + c
        out = out + ChaosExpansion(F.dim, acc) / math.factorial(j)
    return out
