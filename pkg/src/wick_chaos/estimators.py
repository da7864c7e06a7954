"""scikit-learn compatible wrappers around Hermite chaos expansions."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .hermite import ChaosExpansion, evaluate, hermite_table, multi_factorial, total_degree_indices


def _design(X: np.ndarray, indices) -> np.ndarray:
    top = max((max(a) for a in indices), default=0)
    tables = [hermite_table(top, X[:, i]) for i in range(X.shape[1])]
    out = np.ones((X.shape[0], len(indices)))
    for j, alpha in enumerate(indices):
        for i, a in enumerate(alpha):
            if a:
                out[:, j] *= tables[i][a]
    return out


class HermiteFeatures(TransformerMixin, BaseEstimator):
    """Map samples to Hermite features He_alpha(x) for all |alpha| <= degree.

    With ``normalize=True`` each feature is divided by sqrt(alpha!) so the
    columns are orthonormal under the standard Gaussian.
    """

    def __init__(self, degree: int = 2, include_bias: bool = True, normalize: bool = False):
        self.degree = degree
        self.include_bias = include_bias
        self.normalize = normalize

    def fit(self, X, y=None):
        X = validate_data(self, X)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        idx = total_degree_indices(X.shape[1], self.degree)
        self.indices_ = idx if self.include_bias else idx[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "indices_")
        X = validate_data(self, X, reset=False)
        Phi = _design(X, self.indices_)
        if self.normalize:
            Phi /= np.sqrt([multi_factorial(a) for a in self.indices_])
        return Phi

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "indices_")
        return np.array(["He" + "_".join(map(str, a)) for a in self.indices_], dtype=object)


class HermiteChaosRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of a truncated Hermite chaos expansion.

    Inputs are assumed to live in standard Gaussian coordinates. After
    fitting, ``expansion_`` is a :class:`ChaosExpansion` usable with every
    routine of the package (Wick products, gradients, inequality verifiers).
    """

    def __init__(self, degree: int = 3, alpha: float = 0.0):
        self.degree = degree
        self.alpha = alpha

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        idx = total_degree_indices(X.shape[1], self.degree)
        Phi = _design(X, idx)
        if self.alpha > 0:
            # ridge penalty on the Gaussian L2 norm sum alpha! c_alpha^2
            gram = Phi.T @ Phi + self.alpha * np.diag([multi_factorial(a) for a in idx])
            coef = np.linalg.solve(gram, Phi.T @ y)
        else:
            coef, *_ = np.linalg.lstsq(Phi, y, rcond=None)
        self.coef_ = coef
        self.indices_ = idx
        self.expansion_ = ChaosExpansion(X.shape[1], dict(zip(idx, coef.tolist())), self.degree)
        return self

    def predict(self, X):
        check_is_fitted(self, "expansion_")
        X = validate_data(self, X, reset=False)
        return evaluate(self.expansion_, X)
