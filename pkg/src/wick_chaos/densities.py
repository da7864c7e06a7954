"""Radon-Nikodym densities with respect to the standard Gaussian measure.

Four model families are supported (:class:`Unit`, :class:`ExpMixture`,
:class:`LogConcave`, :class:`RawChaos`), together with strong-positivity
certification/refutation and a grid test for log-concavity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import optimize
from scipy.spatial import cKDTree

from .hermite import (
    ChaosExpansion,
    evaluate,
    gauss_hermite_rule,
    hermite_table,
    multi_factorial,
    tensor_grid,
    total_degree_indices,
)
from .wick import as_cm_vector, exp_series_tail, gamma, gradient, s_transform

TAIL_TARGET = 1e-10
POSITIVITY_TOL = 1e-8
DEFAULT_LAMBDAS = tuple(1.0 + 0.25 * i for i in range(9))


class DensityModel:
    """Base class; subclasses are immutable value objects."""

    dim: int
    kind: str

    def value(self, w) -> np.ndarray | float:
        raise NotImplementedError

    def expansion(self, degree_cap: int | None = None, allow_tail: bool = False) -> ChaosExpansion:
        raise NotImplementedError


@dataclass(frozen=True)
class Unit(DensityModel):
    dim: int = 1
    kind = "unit"

    def value(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim <= 1 and not (self.dim == 1 and w.ndim == 1 and w.size > 1):
            return 1.0
        return np.ones(w.shape[0])

    def expansion(self, degree_cap=None, allow_tail=False):
        return ChaosExpansion.constant(1.0, self.dim)


@dataclass(frozen=True, eq=False)
class ExpMixture(DensityModel):
    """Convex combination sum_i w_i E(a_i) of stochastic exponentials."""

    weights: np.ndarray
    shifts: np.ndarray
    kind = "exp_mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        a = np.asarray(self.shifts, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if a.shape[0] != w.shape[0]:
            raise ValueError("need one shift per weight")
        if np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights sum to {w.sum()!r}, not 1")
        if not np.all(np.isfinite(a)):
            raise ValueError("mixture shifts must be finite")
        w.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "shifts", a)
        # immutable model, so expansions can be memoized per instance
        object.__setattr__(self, "_memo", {})

    @property
    def dim(self) -> int:
        return self.shifts.shape[1]

    @cached_property
    def _inner(self) -> np.ndarray:
        return self.shifts @ self.shifts.T

    def value(self, w):
        w = np.asarray(w, dtype=float)
        single = w.ndim == 0 or (w.ndim == 1 and not (self.dim == 1 and w.size > 1))
        pts = w.reshape(1, -1) if single else (w[:, None] if w.ndim == 1 else w)
        half = 0.5 * np.sum(self.shifts ** 2, axis=1)
        vals = np.exp(pts @ self.shifts.T - half) @ self.weights
        return float(vals[0]) if single else vals

    def tail(self, degree_cap: int) -> float:
        """Exact squared L2 norm of the chaoses above ``degree_cap``."""
        s = self._inner
        return math.fsum(
            self.weights[i] * self.weights[j] * exp_series_tail(s[i, j], degree_cap)
            for i in range(len(self.weights))
            for j in range(len(self.weights))
        )

    def tail_bound(self, degree_cap: int) -> float:
        s = np.abs(self._inner)
        return math.fsum(
            self.weights[i] * self.weights[j] * exp_series_tail(s[i, j], degree_cap)
            for i in range(len(self.weights))
            for j in range(len(self.weights))
        )

    def auto_degree(self, target: float = TAIL_TARGET) -> int:
        key = ("auto", target)
        if key not in self._memo:
            n = 0
            while self.tail_bound(n) > target:
                n += 1
            self._memo[key] = n
        return self._memo[key]

    def expansion(self, degree_cap=None, allow_tail=False, target=TAIL_TARGET):
        key = ("expansion", degree_cap, allow_tail, target)
        if key not in self._memo:
            self._memo[key] = self._expand(degree_cap, allow_tail, target)
        return self._memo[key]

    def _expand(self, degree_cap, allow_tail, target):
        if degree_cap is None:
            degree_cap = self.auto_degree(target)
        tail = self.tail(degree_cap)
        if tail > target and not allow_tail:
            raise ValueError(
                f"truncation tail {tail:.3e} at degree {degree_cap} exceeds target {target:.1e}"
            )
        coeffs = {}
        for alpha in total_degree_indices(self.dim, degree_cap):
            mono = np.prod(self.shifts ** np.asarray(alpha), axis=1)
            coeffs[alpha] = float(self.weights @ mono) / multi_factorial(alpha)
        return ChaosExpansion(self.dim, coeffs, degree_cap, tail=tail)

    def glambda_partial_sq(self, lam: float, degree_cap: int) -> float:
        """sum_{|alpha| <= N} alpha! lam^{2|alpha|} c_alpha^2 in closed form."""
        total = 0.0
        s = lam * lam * self._inner
        for i, wi in enumerate(self.weights):
            for j, wj in enumerate(self.weights):
                x = s[i, j]
                total += wi * wj * math.fsum(x ** k / math.factorial(k) for k in range(degree_cap + 1))
        return total


@dataclass(frozen=True, eq=False)
class LogConcave(DensityModel):
    """Probability measure exp(-V(w)) dw, viewed as a density against the Gaussian.

    ``V``, ``grad_v`` and ``hess_v`` take a batch of points (N, dim) and return
    arrays of shape (N,), (N, dim) and (N, dim, dim).
    """

    V: Callable[[np.ndarray], np.ndarray]
    grad_v: Callable[[np.ndarray], np.ndarray]
    hess_v: Callable[[np.ndarray], np.ndarray]
    dim: int = 1
    points_per_axis: int | None = None
    kind = "log_concave"

    @classmethod
    def quadratic(cls, precision, mean=None, quartic: float = 0.0, **kw) -> "LogConcave":
        """V(w) = (w-m)^T P (w-m)/2 + quartic/4 * sum_i w_i^4."""
        P = np.atleast_2d(np.asarray(precision, dtype=float))
        n = P.shape[0]
        m = np.zeros(n) if mean is None else as_cm_vector(mean, n)
        if quartic < 0:
            raise ValueError("quartic coefficient must be nonnegative")
        if np.linalg.eigvalsh(0.5 * (P + P.T)).min() <= 0:
            raise ValueError("precision matrix must be positive definite")

        def V(x):
            d = x - m
            return 0.5 * np.einsum("ni,ij,nj->n", d, P, d) + 0.25 * quartic * np.sum(x ** 4, axis=1)

        def grad(x):
            return (x - m) @ P.T + quartic * x ** 3

        def hess(x):
            out = np.broadcast_to(P, (x.shape[0], n, n)).copy()
            idx = np.arange(n)
            out[:, idx, idx] += 3 * quartic * x ** 2
            return out

        return cls(V, grad, hess, n, **kw)

    @cached_property
    def _frame(self):
        """Mode, whitening map and quadrature weights adapted to exp(-V)."""
        n = self.dim
        res = optimize.minimize(
            lambda x: float(self.V(x[None, :])[0]),
            np.zeros(n),
            jac=lambda x: self.grad_v(x[None, :])[0],
            method="BFGS",
            options={"gtol": 1e-12},
        )
        mode = res.x
        H = self.hess_v(mode[None, :])[0]
        L = np.linalg.cholesky(0.5 * (H + H.T))
        m = self.points_per_axis or {1: 64, 2: 40, 3: 16}.get(n, 8)
        z, wz = tensor_grid(gauss_hermite_rule(m), n)
        pts = mode + np.linalg.solve(L.T, z.T).T
        v0 = float(self.V(mode[None, :])[0])
        ratio = np.exp(-(self.V(pts) - v0) + 0.5 * np.sum(z * z, axis=1))
        if not np.all(np.isfinite(ratio)):
            raise ValueError("exp(-V) is not normalizable on the quadrature grid")
        qw = wz * ratio
        mass = qw.sum()
        # log of the Lebesgue normalizer Z = int exp(-V)
        log_z = -v0 + 0.5 * n * math.log(2 * math.pi) - math.log(np.prod(np.diag(L))) + math.log(mass)
        return pts, qw / mass, log_z

    @property
    def nodes(self) -> np.ndarray:
        return self._frame[0]

    @property
    def node_weights(self) -> np.ndarray:
        return self._frame[1]

    def expect(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of g against the normalized measure exp(-V) dw / Z."""
        pts, qw, _ = self._frame
        return float(qw @ np.asarray(g(pts), dtype=float))

    def value(self, w):
        w = np.asarray(w, dtype=float)
        single = w.ndim == 0 or (w.ndim == 1 and not (self.dim == 1 and w.size > 1))
        pts = w.reshape(1, -1) if single else (w[:, None] if w.ndim == 1 else w)
        log_z = self._frame[2]
        vals = np.exp(
            -self.V(pts) - log_z + 0.5 * self.dim * math.log(2 * math.pi) + 0.5 * np.sum(pts ** 2, axis=1)
        )
        return float(vals[0]) if single else vals

    def expansion(self, degree_cap=None, allow_tail=False):
        if degree_cap is None:
            raise ValueError("log-concave densities need an explicit degree cap")
        pts, qw, _ = self._frame
        tables = [hermite_table(degree_cap, pts[:, i]) for i in range(self.dim)]
        coeffs = {}
        for alpha in total_degree_indices(self.dim, degree_cap):
            basis = np.ones(pts.shape[0])
            for i, a in enumerate(alpha):
                if a:
                    basis = basis * tables[i][a]
            coeffs[alpha] = float(qw @ basis) / multi_factorial(alpha)
        return ChaosExpansion(self.dim, coeffs, degree_cap, approximate=True)


@dataclass(frozen=True, eq=False)
class RawChaos(DensityModel):
    """A density given directly by its Hermite coefficients (c_0 = 1).

    ``strongly_positive`` is whatever the caller asserts; it is recorded, never
    used to certify anything.
    """

    chaos: ChaosExpansion
    strongly_positive: bool | None = None
    kind = "raw_chaos"

    def __post_init__(self):
        if abs(self.chaos.mean - 1.0) > 1e-10:
            raise ValueError(f"density must have E[nu] = 1, got c_0 = {self.chaos.mean!r}")

    @property
    def dim(self) -> int:
        return self.chaos.dim

    def value(self, w):
        return evaluate(self.chaos, w)

    def expansion(self, degree_cap=None, allow_tail=False):
        return self.chaos


def density_expansion(model: DensityModel, degree_cap: int | None = None, allow_tail: bool = False) -> ChaosExpansion:
    return model.expansion(degree_cap, allow_tail=allow_tail)


def density_value(model: DensityModel, w):
    return model.value(w)


def expectation(model: DensityModel, G: ChaosExpansion) -> float:
    """E_nu[G] = <<G, nu>> along the coefficient path."""
    if G.dim != model.dim:
        raise ValueError(f"dimension mismatch: {G.dim} vs {model.dim}")
    if isinstance(model, Unit):
        return G.mean
    if isinstance(model, LogConcave):
        return model.expect(lambda x: evaluate(G, x))
    if isinstance(model, ExpMixture):
        nu = model.expansion(max(model.auto_degree(), G.degree))
    else:
        nu = model.expansion()
    from .wick import l2_pairing

    return l2_pairing(G, nu)


def glambda_membership(model: DensityModel, lam: float = math.sqrt(2.0), degree_cap: int | None = None,
                       rtol: float = 1e-6) -> float:
    """Norm of nu in G_lam, checked for stability when the truncation degree doubles."""
    from .wick import glambda_norm

    if isinstance(model, Unit):
        return 1.0
    if isinstance(model, RawChaos):
        return glambda_norm(model.chaos, lam)
    if isinstance(model, ExpMixture):
        n = degree_cap or max(model.auto_degree(), 8)
        a, b = model.glambda_partial_sq(lam, n), model.glambda_partial_sq(lam, 2 * n)
        a, b = math.sqrt(a), math.sqrt(b)
    else:
        n = degree_cap or 12
        a = glambda_norm(model.expansion(n), lam)
        b = glambda_norm(model.expansion(2 * n), lam)
    if not math.isfinite(b) or abs(b - a) > rtol * b:
        raise ValueError(f"density does not look like an element of G_{lam:.4g}: norm {a:.6g} -> {b:.6g}")
    return b


# ---------------------------------------------------------------------------
# strong positivity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Witness:
    lam: float
    point: tuple[float, ...]
    value: float
    kind: str = "grid"


@dataclass(frozen=True)
class PositivityReport:
    verdict: str  # "certified-strong" | "refuted" | "inconclusive"
    witnesses: tuple[Witness, ...] = ()
    psd_min_eigs: tuple[float, ...] = ()
    tol: float = POSITIVITY_TOL
    method: str = ""

    def __post_init__(self):
        if self.verdict not in ("certified-strong", "refuted", "inconclusive"):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "refuted" and not self.witnesses:
            raise ValueError("a refutation needs at least one witness")


def certify_strong_positivity(model: DensityModel) -> PositivityReport:
    """Structural certificate: constants and convex combinations of exponentials."""
    if isinstance(model, (Unit, ExpMixture)):
        return PositivityReport("certified-strong", method="structural")
    return PositivityReport("inconclusive", method="structural")


def default_grid(dim: int, seed: int = 0, lower: float = -6.0, upper: float = 6.0,
                 step: float = 0.1, samples: int = 4096) -> np.ndarray:
    if dim <= 2:
        n = int(round((upper - lower) / step)) + 1
        axis = np.linspace(lower, upper, n)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.standard_normal((samples, dim))


def _local_minima(points: np.ndarray, values: np.ndarray, candidates: np.ndarray) -> list[int]:
    if len(points) < 2:
        return list(candidates)
    tree = cKDTree(points)
    nn, _ = tree.query(points[candidates], k=2)
    h = float(np.median(nn[:, 1])) if len(candidates) else 0.0
    radius = 1.01 * h * math.sqrt(points.shape[1])
    out = []
    for i in candidates:
        nbrs = tree.query_ball_point(points[i], radius)
        if values[i] <= min(values[j] for j in nbrs):
            out.append(int(i))
    return out


def _refine_minimum(F: ChaosExpansion, x0: np.ndarray) -> tuple[np.ndarray, float]:
    grad = gradient(F)
    res = optimize.minimize(
        lambda x: evaluate(F, x),
        x0,
        jac=lambda x: np.array([evaluate(grad[i], x) for i in range(F.dim)]),
        method="BFGS",
        options={"gtol": 1e-13, "maxiter": 200},
    )
    return res.x, float(res.fun)


def _scaled_mixture(model: ExpMixture, lam: float):
    """Gamma(lam) of a mixture is the mixture of E(lam a_i); value and L2 norm."""
    shifts = lam * model.shifts
    half = 0.5 * np.sum(shifts ** 2, axis=1)
    norm = math.sqrt(float(model.weights @ np.exp(shifts @ shifts.T) @ model.weights))
    return (lambda pts: np.exp(pts @ shifts.T - half) @ model.weights), norm


def grid_refute_strong_positivity(
    nu,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    grid: np.ndarray | None = None,
    tol: float = POSITIVITY_TOL,
    refine: bool = True,
    max_witnesses: int = 8,
) -> PositivityReport:
    """Search for points where Gamma(lam) nu is negative.

    A negative value below ``-tol * (1 + ||Gamma(lam) nu||_2)`` refutes strong
    positivity. Finding nothing is inconclusive.

    ``nu`` is a chaos expansion or a density model. Mixtures are evaluated in
    closed form, since far from the origin a truncated expansion of E(lam a)
    is dominated by truncation and cancellation error.
    """
    if isinstance(nu, Unit):
        nu = nu.expansion()
    elif isinstance(nu, RawChaos):
        nu = nu.chaos
    elif isinstance(nu, LogConcave):
        raise ValueError("pass an explicit chaos expansion of a log-concave density")
    grid = default_grid(nu.dim) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.shape[0] == 0:
        raise ValueError("empty grid")
    if grid.shape[1] != nu.dim:
        raise ValueError("grid dimension does not match the density")
    witnesses: list[Witness] = []
    for lam in lambdas:
        if lam < 1:
            raise ValueError("strong positivity is tested for lambda >= 1")
        if isinstance(nu, ExpMixture):
            G = None
            value_fn, norm = _scaled_mixture(nu, lam)
            vals = value_fn(grid)
        else:
            G = gamma(nu, lam)
            norm = G.norm()
            vals = evaluate(G, grid)
        threshold = -tol * (1.0 + norm)
        bad = np.flatnonzero(vals < threshold)
        if bad.size == 0:
            continue
        found: dict[tuple, Witness] = {}
        for i in _local_minima(grid, vals, bad):
            x, v = grid[i], float(vals[i])
            if refine and G is not None:
                xr, vr = _refine_minimum(G, grid[i])
                if vr < v and np.all(np.isfinite(xr)):
                    x, v = xr, vr
            key = tuple(np.round(x, 6))
            if key not in found or v < found[key].value:
                found[key] = Witness(float(lam), tuple(float(c) for c in x), v)
        best = sorted(found.values(), key=lambda w: (w.value, w.point))[:max_witnesses]
        witnesses.extend(sorted(best, key=lambda w: w.point))
    verdict = "refuted" if witnesses else "inconclusive"
    return PositivityReport(verdict, tuple(witnesses), tol=tol, method="grid")


def density_s_transform(model, h) -> float:
    """S(nu)(h) = E[nu E(h)] = E_nu[E(h)], in closed form where one exists."""
    if isinstance(model, ChaosExpansion):
        return s_transform(model, h)
    h = as_cm_vector(h, model.dim)
    if isinstance(model, Unit):
        return 1.0
    if isinstance(model, ExpMixture):
        return float(model.weights @ np.exp(model.shifts @ h))
    if isinstance(model, RawChaos):
        return s_transform(model.chaos, h)
    return model.expect(lambda x: np.exp(x @ h - 0.5 * float(h @ h)))


def wick_square_matrix(nu, hs: np.ndarray) -> np.ndarray:
    """M_jk = <<nu, E(h_j) <> E(h_k)>> = S(nu)(h_j + h_k)."""
    r = len(hs)
    M = np.empty((r, r))
    for j in range(r):
        for k in range(j, r):
            M[j, k] = M[k, j] = density_s_transform(nu, hs[j] + hs[k])
    return M


def wick_square_psd_test(
    nu,
    families: Sequence[np.ndarray] | None = None,
    trials: int = 100,
    seed: int = 0,
    family_size: int = 4,
    spread: float = 1.0,
    tol: float = 1e-10,
) -> PositivityReport:
    """Necessary condition <<nu, phi <> phi>> >= 0 on spans of exponentials.

    ``nu`` is a chaos expansion or a density model (mixtures then use the
    closed-form S-transform instead of a truncated series). Each family
    {h_1..h_r} yields the matrix M_jk = S(nu)(h_j + h_k); a minimum eigenvalue
    below ``-tol * (1 + max|M|)`` refutes strong positivity. Passing never
    certifies.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if families is None:
        rng = np.random.Generator(np.random.Philox(seed))
        families = [spread * rng.standard_normal((family_size, nu.dim)) for _ in range(trials)]
    eigs, witnesses = [], []
    for fam in families:
        hs = np.asarray(fam, dtype=float).reshape(len(fam), nu.dim)
        M = wick_square_matrix(nu, hs)
        lo = float(np.linalg.eigvalsh(M)[0])
        eigs.append(lo)
        if lo < -tol * (1.0 + np.abs(M).max()):
            witnesses.append(Witness(1.0, tuple(float(v) for v in hs.reshape(-1)), lo, "wick-square"))
    verdict = "refuted" if witnesses else "inconclusive"
    return PositivityReport(verdict, tuple(witnesses), tuple(eigs), tol, method="wick-square")


# ---------------------------------------------------------------------------
# log-concavity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogConcavityReport:
    log_concave_on_grid: bool
    min_eigenvalue: float
    witnesses: tuple[tuple[tuple[float, ...], float], ...] = field(default=())
    tol: float = 1e-6


def neg_log_hessian(model: DensityModel, pts: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Hessian of -log(nu(w) * gaussian(w)) at each point, shape (N, dim, dim)."""
    n = model.dim
    N = pts.shape[0]
    eye = np.broadcast_to(np.eye(n), (N, n, n))
    if isinstance(model, Unit):
        return eye.copy()
    if isinstance(model, ExpMixture):
        a = model.shifts
        logits = pts @ a.T - 0.5 * np.sum(a ** 2, axis=1) + np.log(np.where(model.weights > 0, model.weights, 1e-300))
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        mean = p @ a
        second = np.einsum("nk,ki,kj->nij", p, a, a)
        return eye - (second - np.einsum("ni,nj->nij", mean, mean))
    if isinstance(model, LogConcave):
        return model.hess_v(pts)

    def U(x):
        v = np.asarray(model.value(x), dtype=float)
        return -np.log(v) + 0.5 * np.sum(x * x, axis=1)

    H = np.empty((N, n, n))
    E = np.eye(n) * step
    for i in range(n):
        for j in range(i, n):
            f = (U(pts + E[i] + E[j]) - U(pts + E[i] - E[j]) - U(pts - E[i] + E[j]) + U(pts - E[i] - E[j]))
            H[:, i, j] = H[:, j, i] = f / (4 * step * step)
    return H


def log_concavity_grid_test(model: DensityModel, grid: np.ndarray | None = None, tol: float = 1e-6,
                            step: float = 1e-4) -> LogConcavityReport:
    grid = default_grid(model.dim) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    vals = np.asarray(model.value(grid), dtype=float).reshape(-1)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        raise ValueError("density is not strictly positive on the grid")
    eigs = np.linalg.eigvalsh(neg_log_hessian(model, grid, step))[:, 0]
    bad = np.flatnonzero(eigs < -tol)
    bad = bad[np.argsort(eigs[bad], kind="stable")][:32]
    wit = tuple((tuple(float(c) for c in grid[i]), float(eigs[i])) for i in bad)
    return LogConcavityReport(bad.size == 0, float(eigs.min()), wit, tol)
