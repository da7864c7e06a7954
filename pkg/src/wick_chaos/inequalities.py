"""Verifiers for Poincare-type inequalities and the PSD lemmas behind them."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .densities import (
    DensityModel,
    ExpMixture,
    LogConcave,
    RawChaos,
    Unit,
    certify_strong_positivity,
    expectation,
    glambda_membership,
    wick_square_matrix,
)
from .hermite import ChaosExpansion, evaluate, rule_for_degree, tensor_grid
from .wick import (
    GradientStack,
    gradient,
    iterated_gradient,
    l2_pairing,
    pointwise_product,
    wick_product,
)

COEF_TOL = 1e-9
QUAD_TOL = 1e-6
PATH_TOL = 1e-7
PSD_TOL = 1e-9


def classify(gap: float, tol: float) -> str:
    if abs(gap) <= tol:
        return "equality"
    return "holds" if gap > 0 else "violated"


@dataclass(frozen=True)
class InequalityReport:
    """One instance of ``lhs <= rhs``; ``gap = rhs - lhs``."""

    name: str
    lhs: float
    rhs: float
    tol: float
    provenance: str = "coefficients"
    claim: str = "theorem"
    details: dict = field(default_factory=dict, compare=False)

    @property
    def gap(self) -> float:
        return self.rhs - self.lhs

    @property
    def verdict(self) -> str:
        return classify(self.gap, self.tol)

    @property
    def holds(self) -> bool:
        return self.verdict != "violated"


@dataclass(frozen=True)
class PSDCheck:
    label: str
    size: int
    min_eigenvalue: float
    max_entry: float
    tol: float = PSD_TOL

    @property
    def threshold(self) -> float:
        return -self.tol * (1.0 + self.max_entry)

    @property
    def verdict(self) -> str:
        return "psd" if self.min_eigenvalue >= self.threshold else "not-psd"

    @property
    def is_psd(self) -> bool:
        return self.verdict == "psd"


def psd_check(M: np.ndarray, label: str, tol: float = PSD_TOL) -> PSDCheck:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("PSD check needs a square matrix")
    lo = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) if M.size else 0.0
    return PSDCheck(label, M.shape[0], lo, float(np.abs(M).max()) if M.size else 0.0, tol)


# ---------------------------------------------------------------------------
# Gaussian inequalities
# ---------------------------------------------------------------------------

def gradient_energies(F: ChaosExpansion, max_order: int) -> list[float]:
    """[E||D^l F||^2 for l = 1..max_order]."""
    out = []
    for l in range(1, max_order + 1):
        out.append(iterated_gradient(F, l).norm_sq() if l <= F.degree else 0.0)
    return out


def alternating_sum(energies: Sequence[float], terms: int) -> float:
    return math.fsum(
        (-1) ** (l + 1) / math.factorial(l) * energies[l - 1] for l in range(1, terms + 1)
    )


def verify_classical_poincare(F: ChaosExpansion, tol: float = COEF_TOL) -> InequalityReport:
    var = l2_pairing(F, F) - F.mean * F.mean
    energy = gradient(F).norm_sq()
    return InequalityReport("classical-poincare", var, energy, tol * (1 + abs(var) + abs(energy)))


def verify_hk(F: ChaosExpansion, k: int, model: DensityModel | None = None,
              tol: float = COEF_TOL) -> tuple[InequalityReport, InequalityReport]:
    """Houdre-Kagan sandwich with 2k (lower) and 2k-1 (upper) gradient terms.

    With a non-Gaussian ``model`` every expectation is taken under nu dmu and
    both reports are labelled ``no-claim``.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if model is None or isinstance(model, Unit):
        var = F.variance()
        energies = gradient_energies(F, 2 * k)
        claim = "theorem"
    else:
        mean = expectation(model, F)
        var = expectation(model, pointwise_product(F, F)) - mean * mean
        energies = [_nu_energy(model, iterated_gradient(F, l)) for l in range(1, 2 * k + 1)]
        claim = "no-claim"
    lower = alternating_sum(energies, 2 * k)
    upper = alternating_sum(energies, 2 * k - 1)
    scale = 1 + abs(var) + max(abs(e) for e in energies)
    details = {"variance": var, "energies": energies, "k": k}
    return (
        InequalityReport("hk-lower", lower, var, tol * scale, claim=claim, details=details),
        InequalityReport("hk-upper", var, upper, tol * scale, claim=claim, details=details),
    )


def verify_brascamp_lieb(model: LogConcave, f: ChaosExpansion, tol: float = QUAD_TOL) -> InequalityReport:
    """Var_nu(f) <= E_nu <(Hess V)^{-1} grad f, grad f> by adapted quadrature."""
    if not isinstance(model, LogConcave):
        raise TypeError("Brascamp-Lieb needs a log-concave model")
    if f.dim != model.dim:
        raise ValueError("dimension mismatch")
    pts, qw = model.nodes, model.node_weights
    H = model.hess_v(pts)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Hessian of V is not positive definite at some node") from exc
    fv = evaluate(f, pts)
    grad = np.stack([evaluate(c, pts) for c in gradient(f).components.values()], axis=1)
    sol = np.linalg.solve(H, grad[..., None])[..., 0]
    mean = float(qw @ fv)
    lhs = float(qw @ (fv - mean) ** 2)
    rhs = float(qw @ np.sum(sol * grad, axis=1))
    return InequalityReport("brascamp-lieb", lhs, rhs, tol * (1 + abs(lhs) + abs(rhs)), provenance="quadrature")


# ---------------------------------------------------------------------------
# weighted (nu dmu) inequalities
# ---------------------------------------------------------------------------

def _boosted(model: DensityModel):
    if isinstance(model, LogConcave):
        m = model.points_per_axis or {1: 64, 2: 40, 3: 16}.get(model.dim, 8)
        return replace(model, points_per_axis=min(2 * m, 64))
    return model


def _distinct_components(stack: GradientStack):
    """(component, multiplicity) per multiset of axes; D^l F is symmetric in its tuple."""
    counts = Counter(tuple(sorted(t)) for t in stack.components)
    return [(stack.components[t], m) for t, m in sorted(counts.items())]


def _nu_energy(model: DensityModel, stack: GradientStack) -> float:
    if isinstance(model, Unit):
        return stack.norm_sq()
    return math.fsum(m * expectation(model, pointwise_product(c, c)) for c, m in _distinct_components(stack))


def _claim_for(model: DensityModel) -> str:
    if certify_strong_positivity(model).verdict == "certified-strong":
        return "theorem"
    if isinstance(model, RawChaos) and model.strongly_positive:
        return "theorem"
    return "no-claim"


@dataclass(frozen=True)
class WeightedQuantities:
    """Q = E_nu[F^2], W = <<F<>F, nu>>, mean = E_nu[F], energies[l-1] = E_nu||D^l F||^2."""

    Q: float
    W: float
    mean: float
    energies: tuple[float, ...]
    provenance: str


def weighted_quantities(F: ChaosExpansion, model: DensityModel, orders: int = 1) -> WeightedQuantities:
    if F.dim != model.dim:
        raise ValueError(f"dimension mismatch: {F.dim} vs {model.dim}")
    stacks = [iterated_gradient(F, l) for l in range(1, orders + 1)]
    if isinstance(model, Unit):
        # nu = 1: E[F G] = <<F, G>> and <<F<>F, 1>> = E[F]^2
        Q = l2_pairing(F, F)
        W = F.mean * F.mean
        mean = F.mean
    else:
        Q = expectation(model, pointwise_product(F, F))
        W = expectation(model, wick_product(F, F))
        mean = expectation(model, F)
    energies = tuple(_nu_energy(model, s) for s in stacks)
    prov = "quadrature" if isinstance(model, LogConcave) else "coefficients"
    return WeightedQuantities(Q, W, mean, energies, prov)


def cameron_martin_quantities(F: ChaosExpansion, model: ExpMixture, orders: int = 1) -> WeightedQuantities:
    """Same quantities for a mixture via E_nu[g] = sum_i w_i E[g(W + a_i)]."""
    rule = rule_for_degree(2 * F.degree)
    pts, wts = tensor_grid(rule, F.dim)
    stacks = [iterated_gradient(F, l) for l in range(1, orders + 1)]
    Q = W = mean = 0.0
    energies = np.zeros(orders)
    for wi, a in zip(model.weights, model.shifts):
        shifted = pts + a
        fv = evaluate(F, shifted)
        m = float(wts @ fv)
        Q += wi * float(wts @ (fv * fv))
        W += wi * m * m
        mean += wi * m
        for l, stack in enumerate(stacks):
            e = 0.0
            for comp, mult in _distinct_components(stack):
                cv = evaluate(comp, shifted)
                e += mult * float(wts @ (cv * cv))
            energies[l] += wi * e
    return WeightedQuantities(Q, W, mean, tuple(float(e) for e in energies), "cameron-martin")


def _weighted(F, model, orders, check_paths, path_tol):
    primary = weighted_quantities(F, model, orders)
    details = {"Q": primary.Q, "W": primary.W, "mean": primary.mean, "energies": list(primary.energies)}
    if check_paths and isinstance(model, ExpMixture):
        alt = cameron_martin_quantities(F, model, orders)
        scale = 1 + abs(primary.Q) + abs(primary.energies[0])
        diffs = [abs(primary.Q - alt.Q), abs(primary.W - alt.W), abs(primary.mean - alt.mean)]
        diffs += [abs(x - y) for x, y in zip(primary.energies, alt.energies)]
        if max(diffs) > path_tol * scale:
            raise ArithmeticError(
                f"coefficient and Cameron-Martin paths disagree by {max(diffs):.3e} (scale {scale:.3e})"
            )
        details["cameron_martin"] = {"Q": alt.Q, "W": alt.W, "mean": alt.mean, "energies": list(alt.energies)}
        details["path_discrepancy"] = max(diffs)
    return primary, details


def _gate(model: DensityModel, check_membership: bool):
    if check_membership:
        return glambda_membership(model)
    return None


def verify_main_theorem(
    F: ChaosExpansion,
    model: DensityModel,
    tol: float = COEF_TOL,
    check_paths: bool = True,
    path_tol: float = PATH_TOL,
    check_membership: bool = True,
) -> tuple[InequalityReport, InequalityReport]:
    """0 <= E_nu[F^2] - <<F<>F, nu>> <= E_nu ||DF||^2.

    Violations are re-evaluated with refined numerics before being reported.
    """
    _gate(model, check_membership)
    claim = _claim_for(model)

    def run(m):
        q, details = _weighted(F, m, 1, check_paths, path_tol)
        gap = q.Q - q.W
        scale = 1 + abs(q.Q) + abs(q.energies[0])
        if q.provenance == "quadrature":
            t = QUAD_TOL * scale
        else:
            t = tol * scale
        details["scale"] = scale
        lower = InequalityReport("main-lower", 0.0, gap, t, q.provenance, claim, details)
        upper = InequalityReport("main-upper", gap, q.energies[0], t, q.provenance, claim, details)
        return lower, upper

    lower, upper = run(model)
    if not (lower.holds and upper.holds) and isinstance(model, LogConcave):
        lower, upper = run(_boosted(model))
    return lower, upper


def verify_remark5(F: ChaosExpansion, model: DensityModel, tol: float = COEF_TOL,
                   check_membership: bool = True) -> InequalityReport:
    """(E_nu F)^2 <= <<F<>F, nu>>."""
    _gate(model, check_membership)
    q = weighted_quantities(F, model, 1)
    scale = 1 + abs(q.Q) + abs(q.W)
    t = (QUAD_TOL if q.provenance == "quadrature" else tol) * scale
    return InequalityReport(
        "remark5", q.mean * q.mean, q.W, t, q.provenance, _claim_for(model),
        {"mean": q.mean, "W": q.W, "Q": q.Q, "scale": scale},
    )


def verify_refined_theorem(
    F: ChaosExpansion,
    model: DensityModel,
    k: int,
    tol: float = COEF_TOL,
    check_paths: bool = True,
    path_tol: float = PATH_TOL,
    check_membership: bool = True,
) -> InequalityReport:
    """E_nu[F^2] - <<F<>F, nu>> <= sum_{l=1}^{2k-1} (-1)^{l+1}/l! E_nu||D^l F||^2."""
    if k < 1:
        raise ValueError("k must be positive")
    _gate(model, check_membership)
    orders = 2 * k - 1
    q, details = _weighted(F, model, orders, check_paths, path_tol)
    lhs = q.Q - q.W
    rhs = alternating_sum(q.energies, orders)
    scale = 1 + abs(q.Q) + max(abs(e) for e in q.energies)
    details["scale"] = scale
    details["k"] = k
    t = (QUAD_TOL if q.provenance == "quadrature" else tol) * scale
    return InequalityReport(f"refined-k{k}", lhs, rhs, t, q.provenance, _claim_for(model), details)


# ---------------------------------------------------------------------------
# PSD machinery from the proofs
# ---------------------------------------------------------------------------

def _gram(hs) -> np.ndarray:
    H = np.asarray(hs, dtype=float)
    if H.ndim == 1:
        H = H[:, None]
    if H.shape[0] == 0:
        raise ValueError("need at least one vector")
    return H @ H.T


def b_matrix(hs, tol: float = PSD_TOL) -> tuple[np.ndarray, PSDCheck]:
    """b_jk = 1 - e^s + e^s s with s = <h_j, h_k>."""
    s = _gram(hs)
    B = 1.0 - np.exp(s) + np.exp(s) * s
    return B, psd_check(B, "B", tol)


def refined_a_matrix(hs, k: int, tol: float = PSD_TOL) -> tuple[np.ndarray, PSDCheck]:
    """a_jk = 1 - e^s + sum_{l=1}^{2k-1} (-1)^{l+1}/l! e^s s^l."""
    if k < 1:
        raise ValueError("k must be positive")
    s = _gram(hs)
    poly = sum((-1) ** (l + 1) / math.factorial(l) * s ** l for l in range(1, 2 * k))
    A = 1.0 - np.exp(s) + np.exp(s) * poly
    return A, psd_check(A, f"A-refined-k{k}", tol)


def schur_product_psd(A, B, tol: float = PSD_TOL) -> tuple[np.ndarray, PSDCheck]:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    for name, M in (("A", A), ("B", B)):
        if not psd_check(M, name, tol).is_psd:
            raise ValueError(f"factor {name} is not positive semi-definite")
    C = A * B
    return C, psd_check(C, "A∘B", tol)


def exponential_family_gram(model, hs, tol: float = PSD_TOL) -> tuple[np.ndarray, PSDCheck]:
    """a_jk = E_nu[E(h_j) <> E(h_k)] = S(nu)(h_j + h_k)."""
    H = np.asarray(hs, dtype=float)
    dim = model.dim
    H = H.reshape(len(H), dim)
    A = wick_square_matrix(model, H)
    return A, psd_check(A, "A-exponential", tol)
