"""Covariate-dependent Gaussian graphical model: truth objects and sampling.

The precision matrix of the ``p`` responses is linear in the ``q``
covariates: a symmetric baseline term plus one symmetric matrix per
covariate.  Its diagonal is held fixed across covariate values, which
makes the node-wise regressions homoscedastic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from .errors import InputError, PositiveDefinitenessViolation
from .layout import CoefLayout, MultiTaskCoef

_SYM_TOL = 1e-10


@dataclass
class PrecisionModel:
    """Precision matrix ``terms[0] + sum_h terms[h] * u_h`` with fixed diagonal.

    Parameters
    ----------
    terms : list of (p, p) arrays
        ``q + 1`` symmetric matrices; ``terms[0]`` is the covariate-free
        part and ``terms[h]`` the loading on covariate ``h``.  The
        diagonal of every ``terms[h]`` with ``h >= 1`` must be zero and
        the diagonal of ``terms[0]`` must be positive: the precision
        diagonal ``sigma_diag`` then does not vary with covariates.
    """

    terms: list[np.ndarray]

    def __post_init__(self):
        if len(self.terms) < 2:
            raise InputError("need a baseline term and at least one covariate term")
        self.terms = [np.asarray(t, dtype=float) for t in self.terms]
        p = self.terms[0].shape[0]
        for h, t in enumerate(self.terms):
            if t.shape != (p, p):
                raise InputError(f"term {h} has shape {t.shape}, expected {(p, p)}")
            if np.abs(t - t.T).max() > _SYM_TOL:
                raise InputError(f"term {h} is not symmetric")
        if np.any(np.diag(self.terms[0]) <= 0):
            raise InputError("baseline diagonal must be strictly positive")
        for h, t in enumerate(self.terms[1:], start=1):
            if np.abs(np.diag(t)).max() > _SYM_TOL:
                raise InputError(f"term {h} must have zero diagonal")

    @property
    def p(self) -> int:
        return self.terms[0].shape[0]

    @property
    def q(self) -> int:
        return len(self.terms) - 1

    @property
    def sigma_diag(self) -> np.ndarray:
        """Precision diagonal, identical for every covariate value."""
        return np.diag(self.terms[0]).copy()

    def layout(self) -> CoefLayout:
        return CoefLayout(self.p, self.q)

    def precision(self, u: np.ndarray) -> np.ndarray:
        """Precision matrix at covariate vector ``u`` (length ``q``)."""
        u = np.asarray(u, dtype=float)
        if u.shape != (self.q,):
            raise InputError(f"expected covariate vector of length {self.q}")
        omega = self.terms[0].copy()
        for h in range(1, self.q + 1):
            omega += self.terms[h] * u[h - 1]
        return omega

    def to_config(self) -> dict:
        """JSON-ready dict with sparse 1-based entries per term."""
        b_list = []
        for h, t in enumerate(self.terms):
            rows, cols = np.nonzero(t)
            entries = [
                [int(r) + 1, int(c) + 1, float(t[r, c])] for r, c in zip(rows, cols)
            ]
            b_list.append({"h": h, "entries": entries})
        return {
            "p": self.p,
            "q": self.q,
            "B": b_list,
            "sigma_diag": [float(v) for v in self.sigma_diag],
        }

    @classmethod
    def from_config(cls, config: dict) -> "PrecisionModel":
        try:
            p, q = int(config["p"]), int(config["q"])
            terms = [np.zeros((p, p)) for _ in range(q + 1)]
            for block in config["B"]:
                h = int(block["h"])
                if not 0 <= h <= q:
                    raise InputError(f"term index {h} out of range 0..{q}")
                for j, k, value in block["entries"]:
                    terms[h][int(j) - 1, int(k) - 1] = float(value)
            sigma = np.asarray(config["sigma_diag"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed model config: {exc}") from exc
        if sigma.shape != (p,):
            raise InputError(f"sigma_diag must have length {p}")
        if np.abs(np.diag(terms[0]) - sigma).max() > _SYM_TOL:
            raise InputError("baseline diagonal must equal sigma_diag")
        return cls(terms)


def benchmark_model(p: int, q: int) -> PrecisionModel:
    """Two-effective-covariate benchmark design.

    Baseline is the identity; covariates 1 and 2 each add 0.3 to the
    symmetric (1, 2) off-diagonal pair (1-based positions); all other
    covariates are inert.  The precision diagonal is 1 everywhere.
    """
    if p < 3:
        raise InputError(f"benchmark model needs p >= 3, got {p}")
    if q < 2:
        raise InputError(f"benchmark model needs q >= 2, got {q}")
    terms = [np.eye(p)]
    for h in range(1, q + 1):
        t = np.zeros((p, p))
        if h in (1, 2):
            t[0, 1] = t[1, 0] = 0.3
        terms.append(t)
    return PrecisionModel(terms)


def true_beta(model: PrecisionModel, layout: CoefLayout | None = None) -> MultiTaskCoef:
    """Regression coefficients implied by the model.

    Coefficient (j, k, h) equals ``-terms[h][j, k] / sigma_diag[j]``.
    """
    if layout is None:
        layout = model.layout()
    if (layout.p, layout.q) != (model.p, model.q):
        raise InputError("layout does not match model dimensions")
    beta = MultiTaskCoef.zeros(layout)
    sigma = model.sigma_diag
    for h, t in enumerate(model.terms):
        rows, cols = np.nonzero(t)
        for j, k in zip(rows, cols):
            if j != k:
                beta.set(int(j), int(k), h, -t[j, k] / sigma[j])
    return beta


@dataclass
class Dataset:
    """Observed covariates and responses, with mean-centered responses.

    ``Z = X - U @ Gamma.T`` row-wise; with a zero mean matrix ``Gamma``
    the centered responses equal the raw ones exactly (same array).
    """

    U: np.ndarray
    X: np.ndarray
    Gamma: np.ndarray = None
    Z: np.ndarray = field(init=False)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.U.ndim != 2 or self.X.ndim != 2:
            raise InputError("U and X must be 2-d arrays")
        if self.U.shape[0] != self.X.shape[0]:
            raise InputError(
                f"row mismatch: U has {self.U.shape[0]} rows, X has {self.X.shape[0]}"
            )
        if self.Gamma is None:
            self.Gamma = np.zeros((self.p, self.q))
        self.Gamma = np.asarray(self.Gamma, dtype=float)
        if self.Gamma.shape != (self.p, self.q):
            raise InputError(f"Gamma must have shape {(self.p, self.q)}")
        if np.any(self.Gamma):
            self.Z = self.X - self.U @ self.Gamma.T
        else:
            self.Z = self.X

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.U.shape[1]

    def layout(self) -> CoefLayout:
        return CoefLayout(self.p, self.q)


def _rng_from(seed) -> Generator:
    """Philox generator from an int seed or a SeedSequence."""
    if isinstance(seed, SeedSequence):
        return Generator(Philox(seed))
    return Generator(Philox(SeedSequence(seed)))


def sample(model: PrecisionModel, n: int, seed) -> Dataset:
    """Draw ``n`` observations from the model.

    Covariates are i.i.d. fair coin flips coded as -1/+1, so they have
    mean zero, unit variance, and are bounded, as the asymptotic theory
    assumes.  Each response row is drawn from the zero-mean Gaussian
    whose precision is the model evaluated at that row's covariates, via
    a Cholesky factor: with ``omega = L L^T`` the row solves
    ``L^T x = zeta`` for standard-normal ``zeta``.

    Deterministic given ``seed`` (an int or a ``SeedSequence``): the
    covariate matrix is drawn first, then the full standard-normal block,
    both in row order, so the result does not depend on how rows are
    grouped for factorization.
    """
    if n < 1:
        raise InputError(f"n must be >= 1, got {n}")
    rng = _rng_from(seed)
    U = (2.0 * rng.integers(0, 2, size=(n, model.q)) - 1.0).astype(float)
    zeta = rng.standard_normal((n, model.p))
    X = np.empty((n, model.p))
    # Factor each distinct covariate pattern once; rows sharing a pattern
    # share the factor.
    patterns, inverse = np.unique(U, axis=0, return_inverse=True)
    from scipy.linalg import solve_triangular

    for idx, u in enumerate(patterns):
        omega = model.precision(u)
        try:
            chol = np.linalg.cholesky(omega)
        except np.linalg.LinAlgError:
            raise PositiveDefinitenessViolation(u.tolist()) from None
        rows = np.nonzero(inverse == idx)[0]
        X[rows] = solve_triangular(chol.T, zeta[rows].T, lower=False).T
    return Dataset(U=U, X=X)
