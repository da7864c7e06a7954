"""Hermite chaos expansions on the standard Gaussian space R^n.

A :class:`ChaosExpansion` is a finite sparse map ``alpha -> c_alpha`` standing
for ``F(w) = sum_alpha c_alpha He_alpha(w)`` where ``He_alpha`` is the tensor
product of unnormalized probabilists' Hermite polynomials, so that
``E[He_alpha He_beta] = alpha! delta_{alpha beta}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_DEGREE = 150
MAX_RULE_POINTS = 64

MultiIndex = tuple[int, ...]


class DegreeOverflowError(ValueError):
    """Raised when a factorial weight would exceed the supported degree."""


# ---------------------------------------------------------------------------
# multi-indices
# ---------------------------------------------------------------------------

def as_multi_index(alpha: Iterable[int], dim: int | None = None) -> MultiIndex:
    idx = tuple(int(a) for a in alpha)
    if any(a < 0 for a in idx):
        raise ValueError(f"multi-index entries must be >= 0, got {idx}")
    if dim is not None and len(idx) != dim:
        raise ValueError(f"multi-index {idx} has length {len(idx)}, expected {dim}")
    return idx


def degree(alpha: MultiIndex) -> int:
    return sum(alpha)


def factorial(k: int) -> float:
    if k > MAX_DEGREE:
        raise DegreeOverflowError(f"degree {k} exceeds cap {MAX_DEGREE}")
    return float(math.factorial(k))


def multi_factorial(alpha: MultiIndex) -> float:
    """alpha! = prod_i alpha_i!"""
    if degree(alpha) > MAX_DEGREE:
        raise DegreeOverflowError(f"degree {degree(alpha)} exceeds cap {MAX_DEGREE}")
    return float(math.prod(math.factorial(a) for a in alpha))


def grlex_key(alpha: MultiIndex) -> tuple:
    return (sum(alpha), alpha)


@lru_cache(maxsize=None)
def total_degree_indices(dim: int, max_degree: int) -> tuple[MultiIndex, ...]:
    """All multi-indices of length ``dim`` with total degree <= ``max_degree``, graded-lex sorted."""
    out = [a for a in itertools.product(range(max_degree + 1), repeat=dim) if sum(a) <= max_degree]
    return tuple(sorted(out, key=grlex_key))


def unit_index(dim: int, i: int) -> MultiIndex:
    return tuple(1 if j == i else 0 for j in range(dim))


# ---------------------------------------------------------------------------
# Hermite polynomials
# ---------------------------------------------------------------------------

def hermite_eval(k: int, x):
    """He_k(x) by the three-term recurrence He_{k+1} = x He_k - k He_{k-1}."""
    if k < 0:
        raise ValueError("Hermite degree must be nonnegative")
    if k > MAX_DEGREE:
        raise DegreeOverflowError(f"degree {k} exceeds cap {MAX_DEGREE}")
    x = np.asarray(x, dtype=float)
    prev, cur = np.ones_like(x), x.copy()
    if k == 0:
        return prev if prev.ndim else float(prev)
    for j in range(1, k):
        prev, cur = cur, x * cur - j * prev
    return cur if cur.ndim else float(cur)


def hermite_table(max_k: int, x) -> np.ndarray:
    """Array ``T`` with ``T[k] = He_k(x)`` for k = 0..max_k."""
    if max_k > MAX_DEGREE:
        raise DegreeOverflowError(f"degree {max_k} exceeds cap {MAX_DEGREE}")
    x = np.asarray(x, dtype=float)
    table = np.empty((max_k + 1,) + x.shape)
    table[0] = 1.0
    if max_k >= 1:
        table[1] = x
    for j in range(1, max_k):
        table[j + 1] = x * table[j] - j * table[j - 1]
    return table


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite rule for the standard Gaussian weight, one axis."""

    points_per_axis: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def exactness_degree(self) -> int:
        return 2 * self.points_per_axis - 1

    def grid(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Tensor grid: points of shape (m**dim, dim) and product weights."""
        return tensor_grid(self, dim)


@lru_cache(maxsize=None)
def gauss_hermite_rule(m: int) -> QuadratureRule:
    """Golub-Welsch construction for weight exp(-x^2/2)/sqrt(2 pi)."""
    if m < 1:
        raise ValueError("rule needs at least one point")
    if m > MAX_RULE_POINTS:
        raise ValueError(f"m={m} exceeds the supported maximum of {MAX_RULE_POINTS}")
    if m == 1:
        nodes, weights = np.zeros(1), np.ones(1)
    else:
        off = np.sqrt(np.arange(1, m, dtype=float))
        nodes, vecs = eigh_tridiagonal(np.zeros(m), off)
        weights = vecs[0, :] ** 2
        # exact symmetry about the origin
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
        if m % 2:
            nodes[m // 2] = 0.0
        weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(m, nodes, weights)


def rule_for_degree(d: int) -> QuadratureRule:
    """Smallest rule integrating polynomials of degree ``d`` exactly."""
    return gauss_hermite_rule(d // 2 + 1)


@lru_cache(maxsize=64)
def _tensor_grid(m: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    rule = gauss_hermite_rule(m)
    pts = np.array(list(itertools.product(rule.nodes, repeat=dim)), dtype=float).reshape(-1, dim)
    wts = np.array([math.prod(c) for c in itertools.product(rule.weights, repeat=dim)])
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts


def tensor_grid(rule: QuadratureRule, dim: int) -> tuple[np.ndarray, np.ndarray]:
    if dim < 1:
        raise ValueError("dimension must be positive")
    return _tensor_grid(rule.points_per_axis, dim)


def expect(func: Callable[[np.ndarray], np.ndarray], dim: int, rule: QuadratureRule) -> float:
    """E[func(W)] for W standard Gaussian in R^dim, on the tensor grid of ``rule``."""
    pts, wts = tensor_grid(rule, dim)
    vals = np.asarray(func(pts), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand is not finite at some quadrature node")
    return float(wts @ vals)


# ---------------------------------------------------------------------------
# chaos expansions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChaosExpansion:
    """Finite Hermite expansion ``sum_alpha c_alpha He_alpha`` in ``dim`` variables.

    ``approximate`` marks coefficients obtained from inexact quadrature and
    ``tail`` carries the squared L2 norm of a known truncation remainder.
    """

    dim: int
    coeffs: Mapping[MultiIndex, float]
    degree_cap: int | None = None
    approximate: bool = False
    tail: float | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        clean = {}
        for alpha, c in self.coeffs.items():
            alpha = as_multi_index(alpha, self.dim)
            c = float(c)
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient at {alpha}")
            if self.degree_cap is not None and degree(alpha) > self.degree_cap:
                if c != 0.0:
                    raise ValueError(f"index {alpha} exceeds degree cap {self.degree_cap}")
                continue
            if degree(alpha) > MAX_DEGREE:
                raise DegreeOverflowError(f"degree {degree(alpha)} exceeds cap {MAX_DEGREE}")
            clean[alpha] = clean.get(alpha, 0.0) + c
        ordered = {a: clean[a] for a in sorted(clean, key=grlex_key) if clean[a] != 0.0}
        object.__setattr__(self, "coeffs", MappingProxyType(ordered))

    def __reduce__(self):
        return (type(self), (self.dim, dict(self.coeffs), self.degree_cap, self.approximate, self.tail))

    # construction helpers
    @classmethod
    def zero(cls, dim: int) -> "ChaosExpansion":
        return cls(dim, {})

    @classmethod
    def constant(cls, value: float, dim: int) -> "ChaosExpansion":
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def hermite(cls, alpha: Sequence[int], coef: float = 1.0) -> "ChaosExpansion":
        alpha = as_multi_index(alpha)
        return cls(len(alpha), {alpha: coef})

    # queries
    @property
    def degree(self) -> int:
        return max((degree(a) for a in self.coeffs), default=0)

    @property
    def mean(self) -> float:
        return self.coeffs.get((0,) * self.dim, 0.0)

    def coef(self, alpha: Sequence[int]) -> float:
        return self.coeffs.get(tuple(alpha), 0.0)

    def norm_sq(self) -> float:
        """E[F^2] = sum alpha! c_alpha^2."""
        return math.fsum(multi_factorial(a) * c * c for a, c in self.coeffs.items())

    def norm(self) -> float:
        return math.sqrt(self.norm_sq())

    def variance(self) -> float:
        zero = (0,) * self.dim
        return math.fsum(multi_factorial(a) * c * c for a, c in self.coeffs.items() if a != zero)

    def __call__(self, w) -> np.ndarray | float:
        return evaluate(self, w)

    # arithmetic
    def _check_dim(self, other: "ChaosExpansion"):
        if self.dim != other.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = ChaosExpansion.constant(other, self.dim)
        self._check_dim(other)
        out = dict(self.coeffs)
        for a, c in other.coeffs.items():
            out[a] = out.get(a, 0.0) + c
        return ChaosExpansion(self.dim, out)

    __radd__ = __add__

    def __neg__(self):
        return ChaosExpansion(self.dim, {a: -c for a, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, s):
        if not isinstance(s, (int, float, np.floating)):
            return NotImplemented
        return ChaosExpansion(self.dim, {a: s * c for a, c in self.coeffs.items()}, self.degree_cap)

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / s)

    def allclose(self, other: "ChaosExpansion", atol: float = 1e-10, rtol: float = 0.0) -> bool:
        self._check_dim(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return all(
            abs(self.coef(k) - other.coef(k)) <= atol + rtol * abs(other.coef(k)) for k in keys
        )

    def max_coef_diff(self, other: "ChaosExpansion") -> float:
        self._check_dim(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return max((abs(self.coef(k) - other.coef(k)) for k in keys), default=0.0)

    def __repr__(self):
        terms = ", ".join(f"{a}: {c:.6g}" for a, c in self.coeffs.items())
        return f"ChaosExpansion(dim={self.dim}, {{{terms}}})"


def evaluate(F: ChaosExpansion, w) -> np.ndarray | float:
    """Evaluate ``F`` at one point (shape (dim,)) or a batch (shape (N, dim))."""
    w = np.asarray(w, dtype=float)
    single = w.ndim <= 1
    if F.dim == 1 and w.ndim == 1 and w.shape[0] != 1:
        w = w[:, None]
        single = False
    pts = np.atleast_2d(w)
    if w.ndim == 0:
        pts = pts.reshape(1, 1)
    if pts.shape[-1] != F.dim:
        raise ValueError(f"point dimension {pts.shape[-1]} does not match expansion dimension {F.dim}")
    if not F.coeffs:
        out = np.zeros(pts.shape[0])
        return float(out[0]) if single else out
    top = max(max(a) for a in F.coeffs)
    tables = [hermite_table(top, pts[:, i]) for i in range(F.dim)]
    out = np.zeros(pts.shape[0])
    for alpha, c in F.coeffs.items():
        term = np.full(pts.shape[0], c)
        for i, a in enumerate(alpha):
            if a:
                term = term * tables[i][a]
        out += term
    return float(out[0]) if single else out


def _as_func(f):
    return f if not isinstance(f, ChaosExpansion) else (lambda x, F=f: evaluate(F, x))


def project(
    f,
    dim: int,
    degree_cap: int,
    rule: QuadratureRule | None = None,
    poly_degree: int | None = None,
) -> ChaosExpansion:
    """Project ``f`` onto Hermite chaoses up to ``degree_cap`` by tensor quadrature.

    ``f`` maps an (N, dim) array to N values. Coefficients are
    ``E[f He_alpha] / alpha!``. When ``poly_degree`` is given and the rule is
    exact to ``degree_cap + poly_degree`` the result is exact; otherwise it is
    flagged ``approximate``.
    """
    if isinstance(f, ChaosExpansion):
        if f.dim != dim:
            raise ValueError(f"dimension mismatch: {f.dim} vs {dim}")
        poly_degree = f.degree if poly_degree is None else poly_degree
    if rule is None:
        if poly_degree is None:
            raise ValueError("a quadrature rule is required for non-polynomial integrands")
        rule = rule_for_degree(degree_cap + poly_degree)
    exact = poly_degree is not None and rule.exactness_degree >= degree_cap + poly_degree
    pts, wts = tensor_grid(rule, dim)
    vals = np.asarray(_as_func(f)(pts), dtype=float).reshape(-1)
    if vals.shape[0] != pts.shape[0]:
        raise ValueError("function returned the wrong number of values")
    if not np.all(np.isfinite(vals)):
        raise ValueError("function is not finite at some quadrature node")
    tables = [hermite_table(degree_cap, pts[:, i]) for i in range(dim)]
    weighted = wts * vals
    coeffs = {}
    for alpha in total_degree_indices(dim, degree_cap):
        basis = np.ones(pts.shape[0])
        for i, a in enumerate(alpha):
            if a:
                basis = basis * tables[i][a]
        coeffs[alpha] = float(weighted @ basis) / multi_factorial(alpha)
    return ChaosExpansion(dim, coeffs, degree_cap, approximate=not exact)


def stroock_project(
    partials: Mapping[MultiIndex, Callable],
    dim: int,
    degree_cap: int,
    rule: QuadratureRule,
) -> ChaosExpansion:
    """Coefficients from derivatives: c_alpha = E[d^alpha f] / alpha!.

    ``partials`` maps each multi-index with ``|alpha| <= degree_cap`` to a
    callable for the corresponding partial derivative of f.
    """
    lookup = {as_multi_index(a, dim): g for a, g in partials.items()}
    coeffs = {}
    for alpha in total_degree_indices(dim, degree_cap):
        if alpha not in lookup:
            raise KeyError(f"missing partial derivative for multi-index {alpha}")
        g = lookup[alpha]
        if isinstance(g, (int, float)):
            mean = float(g)
        else:
            mean = expect(_as_func(g), dim, rule)
        coeffs[alpha] = mean / multi_factorial(alpha)
    return ChaosExpansion(dim, coeffs, degree_cap)


def from_monomials(coeffs: Mapping[MultiIndex, float], dim: int) -> ChaosExpansion:
    """Convert a polynomial given by monomial coefficients into the Hermite basis."""
    mono = {as_multi_index(a, dim): float(c) for a, c in coeffs.items()}
    if not mono:
        return ChaosExpansion.zero(dim)
    d = max(degree(a) for a in mono)

    def f(x):
        out = np.zeros(x.shape[0])
        for a, c in mono.items():
            out += c * np.prod(x ** np.array(a), axis=1)
        return out

    return project(f, dim, d, poly_degree=d)


def random_expansion(dim: int, max_degree: int, rng: np.random.Generator) -> ChaosExpansion:
    """Coefficients i.i.d. uniform on [-1, 1] over all indices of degree <= max_degree (graded-lex order)."""
    idx = total_degree_indices(dim, max_degree)
    vals = rng.uniform(-1.0, 1.0, size=len(idx))
    return ChaosExpansion(dim, dict(zip(idx, vals.tolist())), max_degree)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator used for every seeded draw in the package."""
    return np.random.Generator(np.random.Philox(seed))
