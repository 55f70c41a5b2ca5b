"""Confidence intervals, Wald tests, and linear-contrast inference.

The corrected estimate of coordinate ``l`` is asymptotically normal with
variance ``variance_factor / (n * sigma_jj)`` where ``sigma_jj`` is the
node's precision diagonal (inverse noise variance), so the standard
error is the square root of that ratio; after standardizing by it the
estimates are compared against a standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2 as chi2_dist

from .debias import DebiasColumn, SageEstimate
from .design import EigenFactor, NodeDesign
from .errors import (
    DegenerateNoise,
    InputError,
    SingularContrastCovariance,
    SingularRestrictedDesign,
    SupportTooLarge,
)
from .layout import CoefLayout

_P_FLOOR = 1e-300


@dataclass
class NoiseEstimate:
    """Precision-diagonal estimate for one node from a support-restricted OLS."""

    node: int
    sigma_jj: float
    support: np.ndarray
    df: int  # n minus support size

    def __post_init__(self):
        if self.sigma_jj <= 0:
            raise InputError("sigma_jj must be positive")


def restricted_ols(design: NodeDesign, support) -> np.ndarray:
    """Least squares on the support columns, zero elsewhere."""
    support = np.asarray(sorted(int(s) for s in set(np.asarray(support, dtype=int).tolist())))
    beta = np.zeros(design.layout.node_length)
    if support.size == 0:
        return beta
    if np.any(support < 0) or np.any(support >= design.layout.node_length):
        raise InputError("support index out of range")
    cols = design.W[:, support]
    solution, _, rank, _ = np.linalg.lstsq(cols, design.z, rcond=None)
    if rank < support.size:
        raise SingularRestrictedDesign(
            f"node {design.node}: restricted design has rank {rank} < {support.size}"
        )
    beta[support] = solution
    return beta


def estimate_noise(design: NodeDesign, support) -> NoiseEstimate:
    """Estimate the node's precision diagonal from the support-restricted fit.

    The inverse estimate is the residual sum of squares divided by the
    residual degrees of freedom ``n - |support|``.
    """
    support = np.asarray(sorted(int(s) for s in set(np.asarray(support, dtype=int).tolist())))
    n = design.n
    if support.size >= n:
        raise SupportTooLarge(
            f"node {design.node}: support size {support.size} >= n = {n}"
        )
    beta = restricted_ols(design, support)
    resid = design.z - design.W @ beta
    rss = float(resid @ resid)
    z_scale = max(float(design.z @ design.z), 1.0)
    if rss <= 1e-12 * z_scale:
        raise DegenerateNoise(
            f"node {design.node}: residual sum of squares {rss:.3e} is numerically zero"
        )
    inv_sigma = rss / (n - support.size)
    return NoiseEstimate(
        node=design.node,
        sigma_jj=1.0 / inv_sigma,
        support=support,
        df=n - support.size,
    )


def standard_error(col: DebiasColumn, noise: NoiseEstimate, n: int) -> float:
    return float(np.sqrt(col.variance_factor / (n * noise.sigma_jj)))


def confidence_interval(
    col: DebiasColumn, estimate: float, noise: NoiseEstimate, n: int, level: float
) -> tuple[float, float]:
    """Two-sided normal interval at the given coverage level."""
    if not 0 < level < 1:
        raise InputError(f"level must lie in (0, 1), got {level}")
    half = ndtri(0.5 + level / 2.0) * standard_error(col, noise, n)
    return float(estimate - half), float(estimate + half)


def wald_test(
    col: DebiasColumn, estimate: float, noise: NoiseEstimate, n: int, null: float = 0.0
) -> tuple[float, float]:
    """Two-sided z test of ``coordinate == null``; returns (z, p)."""
    se = standard_error(col, noise, n)
    z = (estimate - null) / se
    p = 2.0 * ndtr(-abs(z))
    return float(z), float(min(max(p, _P_FLOOR), 1.0))


def standardized_estimates(
    sage: SageEstimate, truth: np.ndarray, noise: NoiseEstimate, n: int
) -> np.ndarray:
    """Debiased coordinates standardized around the supplied truth.

    Returns ``(value - truth) / se`` for each debiased coordinate in
    ascending coordinate order; compared against a standard normal in the
    simulation studies.
    """
    truth = np.asarray(truth, dtype=float)
    if truth.shape != sage.values.shape:
        raise InputError("truth vector length does not match the node coefficients")
    out = []
    for l in sorted(sage.columns):
        col = sage.columns[l]
        out.append((sage.values[l] - truth[l]) / standard_error(col, noise, n))
    return np.asarray(out)


def cross_variance_factors(
    columns: dict[int, DebiasColumn],
    coordinates,
    eigen: EigenFactor | None = None,
    gram: np.ndarray | None = None,
) -> np.ndarray:
    """Matrix of ``m_a^T Gram m_b`` over the requested coordinates.

    With ``eigen`` the quadratic form is evaluated diagonally from the
    stored small-space vectors (valid for columns solved against that
    factorization); with ``gram`` it is computed from the full vectors.
    """
    coords = list(coordinates)
    k = len(coords)
    out = np.empty((k, k))
    if eigen is None and gram is None:
        raise InputError("need either the eigen factorization or the Gram matrix")
    for a in range(k):
        for b in range(a, k):
            ca, cb = columns[coords[a]], columns[coords[b]]
            if eigen is not None:
                value = eigen.gram_quadratic(ca.theta, cb.theta)
            else:
                value = float(ca.m @ gram @ cb.m)
            out[a, b] = out[b, a] = value
    return out


@dataclass
class ContrastReport:
    """Inference for ``A @ beta_node`` against a fixed null vector."""

    estimate: np.ndarray
    null: np.ndarray
    covariance: np.ndarray
    statistic: float
    df: int
    p_value: float
    standardized: np.ndarray  # whitened components, asymptotically iid N(0, 1)
    standard_errors: np.ndarray

    def confidence_intervals(self, level: float) -> np.ndarray:
        mult = ndtri(0.5 + level / 2.0)
        half = mult * self.standard_errors
        return np.column_stack([self.estimate - half, self.estimate + half])

    def covers(self, truth, level: float) -> bool:
        """Joint ellipsoidal coverage of the truth at the given level."""
        truth = np.asarray(truth, dtype=float)
        diff = truth - self.estimate
        stat = float(diff @ np.linalg.solve(self.covariance, diff))
        return stat <= float(chi2_dist.ppf(level, self.df))


def contrast_infer(
    A: np.ndarray,
    sage: SageEstimate,
    noise: NoiseEstimate,
    null=None,
    eigen: EigenFactor | None = None,
    gram: np.ndarray | None = None,
) -> ContrastReport:
    """Chi-square inference for a fixed contrast matrix on one node.

    Every coordinate touched by a nonzero column of ``A`` must have a
    solved debias column in ``sage``.  The covariance of the contrast is
    the cross variance-factor matrix sandwiched by the touched columns of
    ``A`` and scaled by ``1 / (n * sigma_jj)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    L = sage.values.shape[0]
    if A.shape[1] != L:
        raise InputError(f"contrast has {A.shape[1]} columns, expected {L}")
    touched = np.nonzero(np.any(A != 0.0, axis=0))[0]
    if touched.size == 0:
        raise InputError("contrast matrix is identically zero")
    missing = [int(l) for l in touched if int(l) not in sage.columns]
    if missing:
        raise InputError(f"no solved debias column for coordinates {missing}")
    if null is None:
        null = np.zeros(A.shape[0])
    null = np.asarray(null, dtype=float).reshape(A.shape[0])

    df = int(np.linalg.matrix_rank(A))
    if df < A.shape[0]:
        raise SingularContrastCovariance(
            f"contrast matrix has rank {df} < {A.shape[0]} rows"
        )
    n = noise_sample_count(noise)
    vf = cross_variance_factors(sage.columns, touched.tolist(), eigen=eigen, gram=gram)
    A_touched = A[:, touched]
    cov = A_touched @ vf @ A_touched.T / (n * noise.sigma_jj)
    cov = 0.5 * (cov + cov.T)
    estimate = A @ sage.values
    diff = estimate - null
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise SingularContrastCovariance(str(exc)) from exc
    if eigvals.min() <= 1e-14 * max(eigvals.max(), 1e-300):
        raise SingularContrastCovariance(
            f"contrast covariance nearly singular (eigenvalues {eigvals})"
        )
    whitener = eigvecs @ np.diag(eigvals**-0.5) @ eigvecs.T
    standardized = whitener @ diff
    statistic = float(standardized @ standardized)
    p = float(chi2_dist.sf(statistic, df))
    return ContrastReport(
        estimate=estimate,
        null=null,
        covariance=cov,
        statistic=statistic,
        df=df,
        p_value=min(max(p, _P_FLOOR), 1.0),
        standardized=standardized,
        standard_errors=np.sqrt(np.diag(cov)),
    )


def noise_sample_count(noise: NoiseEstimate) -> int:
    return noise.df + noise.support.size


@dataclass
class CoordinateRow:
    """One reported coordinate: indices are 0-based internally."""

    node: int
    partner: int
    group: int
    estimate: float
    se: float
    lo: float
    hi: float
    z: float
    p: float


@dataclass
class InferenceReport:
    """Per-coordinate report rows plus optional contrast results."""

    level: float
    rows: list[CoordinateRow] = field(default_factory=list)
    contrasts: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "level": self.level,
            "coordinates": [
                {
                    "j": r.node + 1,
                    "k": r.partner + 1,
                    "h": r.group,
                    "estimate": r.estimate,
                    "se": r.se,
                    "lo": r.lo,
                    "hi": r.hi,
                    "z": r.z,
                    "p": r.p,
                }
                for r in self.rows
            ],
            "contrasts": self.contrasts,
        }

    def to_csv_lines(self) -> list[str]:
        lines = ["j,k,h,estimate,se,lo,hi,z,p"]
        for r in self.rows:
            lines.append(
                f"{r.node + 1},{r.partner + 1},{r.group},"
                f"{r.estimate:.17g},{r.se:.17g},{r.lo:.17g},{r.hi:.17g},"
                f"{r.z:.17g},{r.p:.17g}"
            )
        return lines


def report_node(
    sage: SageEstimate,
    noise: NoiseEstimate,
    layout: CoefLayout,
    n: int,
    level: float = 0.95,
) -> list[CoordinateRow]:
    """Coordinate rows (CI and zero-null Wald test) for one node's columns."""
    rows = []
    for l in sorted(sage.columns):
        col = sage.columns[l]
        estimate = float(sage.values[l])
        se = standard_error(col, noise, n)
        lo, hi = confidence_interval(col, estimate, noise, n, level)
        z, p = wald_test(col, estimate, noise, n, null=0.0)
        k, h = layout.coord_of(sage.node, l)
        rows.append(
            CoordinateRow(
                node=sage.node,
                partner=k,
                group=h,
                estimate=estimate,
                se=se,
                lo=lo,
                hi=hi,
                z=z,
                p=p,
            )
        )
    return rows
