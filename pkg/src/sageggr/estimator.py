"""Scikit-learn style front end for the joint graphical regression fit."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .design import build_node_design
from .errors import InputError
from .model import Dataset
from .sgl import DEFAULT_GROUP_RATIO, FitConfig, cross_validate, fit_designs


def validate_pair(X, U) -> tuple[np.ndarray, np.ndarray]:
    """Validate the response/covariate pair and align their rows."""
    X = check_array(X, dtype=float, ensure_min_features=2)
    U = check_array(U, dtype=float)
    if X.shape[0] != U.shape[0]:
        raise InputError(
            f"row mismatch: X has {X.shape[0]} rows, U has {U.shape[0]}"
        )
    return X, U


class GaussianGraphicalRegression(BaseEstimator):
    """Precision-on-covariates regression fit jointly across all nodes.

    Each node is regressed on the other nodes and on their interactions
    with the covariates, under an elementwise L1 penalty plus a group-L2
    penalty coupling each covariate group across nodes.

    Parameters
    ----------
    lambda_e : float, default 0.3
        Elementwise penalty.  Ignored when ``cv_grid`` is given.
    lambda_g : float or None, default None
        Group penalty; ``None`` means ``lambda_e / sqrt(2)``.
    cv_grid : array-like or None
        When given, ``lambda_e`` is chosen from this grid by K-fold
        prediction error before the final fit.
    cv_folds : int, default 5
    cv_seed : int, default 0
    max_iter, tol, kkt_tol : solver stopping controls.

    Attributes
    ----------
    coef_ : ndarray of shape (p, (p - 1) * (q + 1))
        Per-node coefficient rows.
    layout_ : CoefLayout
    result_ : FitResult with the solver trace and diagnostics.
    designs_ : per-node design matrices kept for debiasing and inference.
    """

    def __init__(
        self,
        lambda_e: float = 0.3,
        lambda_g: float | None = None,
        cv_grid=None,
        cv_folds: int = 5,
        cv_seed: int = 0,
        max_iter: int = 20000,
        tol: float = 1e-7,
        kkt_tol: float = 1e-5,
    ):
        self.lambda_e = lambda_e
        self.lambda_g = lambda_g
        self.cv_grid = cv_grid
        self.cv_folds = cv_folds
        self.cv_seed = cv_seed
        self.max_iter = max_iter
        self.tol = tol
        self.kkt_tol = kkt_tol

    def fit(self, X, U):
        """Fit from responses ``X`` (n x p) and covariates ``U`` (n x q)."""
        X, U = validate_pair(X, U)
        data = Dataset(U=U, X=X)
        if self.cv_grid is not None:
            cv = cross_validate(
                data,
                self.cv_grid,
                ratio=self._ratio(),
                folds=self.cv_folds,
                seed=self.cv_seed,
                max_iter=self.max_iter,
                tol=self.tol,
                kkt_tol=self.kkt_tol,
            )
            lambda_e, lambda_g = cv.lambda_e, cv.lambda_g
            self.cv_result_ = cv
        else:
            lambda_e = self.lambda_e
            lambda_g = (
                self.lambda_g
                if self.lambda_g is not None
                else lambda_e * DEFAULT_GROUP_RATIO
            )
        config = FitConfig(
            lambda_e=lambda_e,
            lambda_g=lambda_g,
            max_iter=self.max_iter,
            tol=self.tol,
            kkt_tol=self.kkt_tol,
        )
        designs = [build_node_design(data, j) for j in range(data.p)]
        self.result_ = fit_designs(designs, config)
        self.coef_ = self.result_.beta.as_matrix().copy()
        self.layout_ = self.result_.beta.layout
        self.designs_ = designs
        self.data_ = data
        self.lambda_e_ = lambda_e
        self.lambda_g_ = config.lambda_g
        return self

    def _ratio(self) -> float:
        """Group-to-elementwise penalty ratio used along the CV path."""
        if self.lambda_g is None or not self.lambda_e:
            return DEFAULT_GROUP_RATIO
        return self.lambda_g / self.lambda_e

    def predict(self, X, U) -> np.ndarray:
        """Node-wise predictions: column ``j`` is node ``j`` predicted from the rest."""
        check_is_fitted(self, "coef_")
        X, U = validate_pair(X, U)
        data = Dataset(U=U, X=X)
        if data.p != self.layout_.p or data.q != self.layout_.q:
            raise InputError("dimension mismatch with the fitted layout")
        pred = np.empty_like(data.Z)
        for j in range(data.p):
            design = build_node_design(data, j)
            pred[:, j] = design.W @ self.coef_[j]
        return pred

    def score(self, X, U) -> float:
        """Negative mean squared node-wise prediction error (higher is better)."""
        X_arr, U_arr = validate_pair(X, U)
        pred = self.predict(X_arr, U_arr)
        data = Dataset(U=U_arr, X=X_arr)
        return -float(np.mean((data.Z - pred) ** 2))
