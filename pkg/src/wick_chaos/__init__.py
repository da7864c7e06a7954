"""Finite-dimensional Wick calculus and Poincare-type inequality verifiers."""

__version__ = "0.1.0"

from .hermite import (  # noqa: E402
    ChaosExpansion,
    QuadratureRule,
    evaluate,
    gauss_hermite_rule,
    hermite_eval,
    project,
    stroock_project,
)
from .wick import (  # noqa: E402
    gamma,
    glambda_norm,
    gradient,
    iterated_gradient,
    l2_pairing,
    ou_apply,
    pointwise_product,
    s_transform,
    stochastic_exponential,
    wick_product,
)
from .densities import ExpMixture, LogConcave, RawChaos, Unit  # noqa: E402
from .inequalities import (  # noqa: E402
    verify_classical_poincare,
    verify_hk,
    verify_main_theorem,
    verify_refined_theorem,
    verify_remark5,
)
