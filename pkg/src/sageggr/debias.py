"""Debiasing step: inverse-Gram surrogate columns and the one-step correction.

For a target coordinate ``l`` of node ``j`` the surrogate column solves a
constrained quadratic program: minimize the Gram quadratic form subject
to the soft-thresholded residual ``H_alpha(Gram m - e_l)`` staying inside
a grouped-norm ball of radius ``gamma`` (max over the ``q + 1`` covariate
groups of the group Euclidean norm).

Two solvers are provided.  :func:`solve_projected` works in the span of
the design's nonzero eigenvectors, so each iteration costs ``O(n L)``
and the quadratic form is evaluated diagonally.  :func:`solve_direct`
works in the ambient ``L``-dimensional space; it is retained as the
correctness oracle and timing baseline.  Lifting a projected solution
gives a full-space solution with the same objective, and vice versa, so
the two agree up to solver tolerance.

Both use ADMM with the split ``residual = (Gram m - e_l)``; the residual
update is a Euclidean projection onto the constraint set, available in
closed form per group: entries at or below ``alpha`` in magnitude are
untouched, and the exceedances ``|x| - alpha`` shrink radially so the
thresholded group norm equals ``gamma``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .design import EigenFactor, NodeDesign
from .errors import Infeasible, InputError
from .layout import CoefLayout
from .sgl import FitResult


def soft_threshold(x, alpha: float):
    """Pointwise ``sign(x) * (|x| - alpha)_+``."""
    if alpha < 0:
        raise InputError("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - alpha, 0.0)


def thresholded_group_max(x: np.ndarray, alpha: float, layout: CoefLayout) -> float:
    """``max`` over groups of the Euclidean norm of the soft-thresholded vector."""
    shrunk = soft_threshold(x, alpha).reshape(layout.n_groups, layout.group_size)
    return float(np.sqrt((shrunk**2).sum(axis=1)).max())


def project_group_ball(x: np.ndarray, alpha: float, gamma: float, layout: CoefLayout):
    """Euclidean projection onto ``{x : ||H_alpha(x)||_{inf,2} <= gamma}``.

    Within each group, entries with ``|x| <= alpha`` are already
    thresholded to zero and stay put; the exceedance magnitudes scale by
    a common factor bringing the thresholded group norm down to
    ``gamma``.
    """
    blocks = x.reshape(layout.n_groups, layout.group_size)
    excess = np.maximum(np.abs(blocks) - alpha, 0.0)
    norms = np.sqrt((excess**2).sum(axis=1))
    scale = np.ones(layout.n_groups)
    over = norms > gamma
    scale[over] = gamma / norms[over]
    if not np.any(over):
        return x.copy()
    new_abs = np.where(
        excess > 0, alpha + excess * scale[:, None], np.abs(blocks)
    )
    return (np.sign(blocks) * new_abs).reshape(-1)


@dataclass
class DebiasConfig:
    """Thresholds and ADMM controls for the surrogate-column programs."""

    alpha: float
    gamma: float
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    feas_tol: float = 1e-9
    max_iter: int = 50000
    rho: float = 1.0

    def __post_init__(self):
        # alpha = gamma = 0 degenerates to the exact linear system and is
        # allowed for testing; negative thresholds are meaningless
        if self.alpha < 0 or self.gamma < 0:
            raise InputError("alpha and gamma must be nonnegative")


def default_thresholds(n: int) -> tuple[float, float]:
    """Practical defaults ``alpha = 1/sqrt(n)``, ``gamma = 2/sqrt(n)``."""
    return 1.0 / np.sqrt(n), 2.0 / np.sqrt(n)


def theoretical_thresholds(
    n: int, p: int, q: int, s_e: int, s_g: int, scale: float
) -> tuple[float, float]:
    """Rate-driven thresholds; require user-supplied constants.

    ``alpha = scale * sqrt(log(p q) / n)`` and
    ``gamma = sqrt(s_e / s_g) * alpha``.
    """
    if s_e < 1 or s_g < 1:
        raise InputError("sparsity counts must be >= 1")
    alpha = scale * np.sqrt(np.log(p * q) / n)
    return float(alpha), float(np.sqrt(s_e / s_g) * alpha)


@dataclass
class DebiasColumn:
    """Solved surrogate column for one coordinate.

    ``m`` lives in the full coefficient space; ``theta`` is its
    coefficient vector in the retained eigenbasis (``m = basis @ theta``
    by construction).  ``variance_factor`` is the Gram quadratic form at
    ``m``; ``feasibility_slack`` is ``gamma`` minus the constraint value
    at ``m`` (nonnegative up to the feasibility tolerance).
    """

    coordinate: int
    m: np.ndarray
    theta: np.ndarray
    variance_factor: float
    feasibility_slack: float
    iterations: int = 0
    converged: bool = True
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    solve_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "coordinate": self.coordinate + 1,
            "variance_factor": self.variance_factor,
            "feasibility_slack": self.feasibility_slack,
            "iterations": self.iterations,
            "converged": self.converged,
            "solve_seconds": self.solve_seconds,
            "m": self.m.tolist(),
        }


class _AdmmState:
    """Shared ADMM loop over the split residual; the two solvers differ
    only in how they evaluate the quadratic-form update."""

    def __init__(self, dim_l, config):
        self.pri = np.inf
        self.dual = np.inf
        self.rho = config.rho
        self.sqrt_l = np.sqrt(dim_l)

    def balanced(self, config):
        # standard residual balancing; the scaled dual variable rescales
        # with rho; the clamp keeps infeasible problems from driving rho
        # to overflow
        if self.pri > 10 * self.dual and self.rho < 1e8:
            self.rho *= 2.0
            return 0.5
        if self.dual > 10 * self.pri and self.rho > 1e-8:
            self.rho *= 0.5
            return 2.0
        return 1.0


def _finish(
    coordinate,
    m,
    theta,
    variance,
    constraint_value,
    config,
    iters,
    converged,
    pri,
    dual,
    started,
    best_violation,
):
    if not converged:
        if best_violation > max(1e-6, 100 * config.feas_tol) * max(1.0, config.gamma):
            raise Infeasible(
                f"constraint violation stuck at {best_violation:.3e} for coordinate "
                f"{coordinate}; alpha/gamma too small for this design",
                violation=best_violation,
            )
        warnings.warn(
            f"debias column {coordinate}: ADMM stopped after {iters} iterations "
            f"(primal {pri:.2e}, dual {dual:.2e}, "
            f"violation {max(constraint_value - config.gamma, 0.0):.2e}); "
            "returning the best iterate",
            ConvergenceWarning,
        )
    return DebiasColumn(
        coordinate=coordinate,
        m=m,
        theta=theta,
        variance_factor=float(variance),
        feasibility_slack=float(config.gamma - constraint_value),
        iterations=iters,
        converged=converged,
        primal_residual=float(pri),
        dual_residual=float(dual),
        solve_seconds=time.perf_counter() - started,
    )


def solve_projected(
    eigen: EigenFactor, coordinate: int, config: DebiasConfig, layout: CoefLayout
) -> DebiasColumn:
    """Solve the surrogate program in the design's eigenspace.

    Minimizes the diagonal quadratic form over small-space vectors whose
    lifted residual satisfies the grouped constraint; the result carries
    both the small-space solution and its lift.
    """
    started = time.perf_counter()
    d = eigen.eigenvalues
    V = eigen.coef_basis
    L = V.shape[0]
    if not 0 <= coordinate < L:
        raise InputError(f"coordinate {coordinate} out of range 0..{L - 1}")
    if L != layout.node_length:
        raise InputError("layout does not match the factorization size")

    e_row = V[coordinate].copy()  # V^T e_l
    theta = np.zeros(d.shape[0])
    ax = -_unit(L, coordinate)  # V D theta - e_l at theta = 0
    r = project_group_ball(ax, config.alpha, config.gamma, layout)
    w = np.zeros(L)
    # small-space images of the split variables; V^T ax = d*theta - e_row
    # is free because the basis has orthonormal columns
    vr = V.T @ r
    vw = np.zeros(d.shape[0])
    state = _AdmmState(L, config)
    best_violation = np.inf
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        theta = state.rho * (vr - vw + e_row) / (2.0 + state.rho * d)
        dtheta = d * theta
        ax = V @ dtheta
        ax[coordinate] -= 1.0
        vax = dtheta - e_row
        r = project_group_ball(ax + w, config.alpha, config.gamma, layout)
        w += ax - r
        vr_old = vr
        vr = V.T @ r
        vw += vax - vr
        state.pri = float(np.linalg.norm(ax - r))
        state.dual = state.rho * float(np.linalg.norm(d * (vr - vr_old)))
        violation = max(
            thresholded_group_max(ax, config.alpha, layout) - config.gamma, 0.0
        )
        best_violation = min(best_violation, violation)
        eps_pri = state.sqrt_l * config.eps_abs + config.eps_rel * max(
            float(np.linalg.norm(ax)), float(np.linalg.norm(r)), 1.0
        )
        eps_dual = np.sqrt(len(d)) * config.eps_abs + config.eps_rel * state.rho * float(
            np.linalg.norm(d * vw)
        )
        if state.pri <= eps_pri and state.dual <= eps_dual and violation <= config.feas_tol:
            converged = True
            break
        scale = state.balanced(config)
        if scale != 1.0:
            w *= scale
            vw *= scale

    constraint_value = thresholded_group_max(ax, config.alpha, layout)
    return _finish(
        coordinate,
        eigen.lift(theta),
        theta,
        float(theta @ (d * theta)),
        constraint_value,
        config,
        it,
        converged,
        state.pri,
        state.dual,
        started,
        best_violation,
    )


def solve_direct(
    gram: np.ndarray, coordinate: int, config: DebiasConfig, layout: CoefLayout
) -> DebiasColumn:
    """Solve the surrogate program in the ambient coefficient space.

    Eigendecomposes the full Gram matrix once, then iterates dense
    ``O(L^2)`` updates.  Correctness oracle and timing baseline for
    :func:`solve_projected`.
    """
    started = time.perf_counter()
    L = gram.shape[0]
    if gram.shape != (L, L) or L != layout.node_length:
        raise InputError("gram matrix does not match the layout")
    if not 0 <= coordinate < L:
        raise InputError(f"coordinate {coordinate} out of range 0..{L - 1}")

    eigvals, eigvecs = np.linalg.eigh(gram)
    eigvals = np.maximum(eigvals, 0.0)
    positive = eigvals > eigvals[-1] * 1e-14
    m = np.zeros(L)
    ax = -_unit(L, coordinate)
    r = project_group_ball(ax, config.alpha, config.gamma, layout)
    w = np.zeros(L)
    state = _AdmmState(L, config)
    best_violation = np.inf
    converged = False
    it = 0
    inv = np.zeros(L)
    for it in range(1, config.max_iter + 1):
        v = r - w
        v[coordinate] += 1.0
        vt = eigvecs.T @ v
        np.multiply(vt, state.rho, out=vt)
        inv[positive] = vt[positive] / (2.0 + state.rho * eigvals[positive])
        inv[~positive] = 0.0
        m = eigvecs @ inv
        ax = gram @ m
        ax[coordinate] -= 1.0
        r_old = r
        r = project_group_ball(ax + w, config.alpha, config.gamma, layout)
        w = w + ax - r
        state.pri = float(np.linalg.norm(ax - r))
        state.dual = state.rho * float(np.linalg.norm(gram @ (r - r_old)))
        violation = max(
            thresholded_group_max(ax, config.alpha, layout) - config.gamma, 0.0
        )
        best_violation = min(best_violation, violation)
        eps_pri = state.sqrt_l * config.eps_abs + config.eps_rel * max(
            float(np.linalg.norm(ax)), float(np.linalg.norm(r)), 1.0
        )
        eps_dual = state.sqrt_l * config.eps_abs + config.eps_rel * state.rho * float(
            np.linalg.norm(gram @ w)
        )
        if state.pri <= eps_pri and state.dual <= eps_dual and violation <= config.feas_tol:
            converged = True
            break
        w *= state.balanced(config)

    constraint_value = thresholded_group_max(ax, config.alpha, layout)
    theta = (eigvecs[:, positive]).T @ m
    return _finish(
        coordinate,
        m,
        theta,
        float(m @ gram @ m),
        constraint_value,
        config,
        it,
        converged,
        state.pri,
        state.dual,
        started,
        best_violation,
    )


def _unit(length: int, index: int) -> np.ndarray:
    e = np.zeros(length)
    e[index] = 1.0
    return e


@dataclass
class SageEstimate:
    """Debiased coefficient vector for one node.

    Only the requested coordinates carry the one-step correction; the
    rest are copied from the penalized fit and flagged in ``debiased``.
    """

    node: int
    values: np.ndarray
    debiased: np.ndarray  # boolean mask over coordinates
    columns: dict[int, DebiasColumn] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "node": self.node + 1,
            "values": self.values.tolist(),
            "debiased": self.debiased.astype(int).tolist(),
        }


def sage_update(
    fit: FitResult, design: NodeDesign, columns: dict[int, DebiasColumn]
) -> SageEstimate:
    """One-step correction of the penalized estimate for one node.

    Adds ``m^T W^T (z - W beta) / n`` to each requested coordinate.
    """
    beta_node = fit.beta.node(design.node)
    resid = design.z - design.W @ beta_node
    moment = design.W.T @ resid / design.n
    values = beta_node.copy()
    mask = np.zeros(values.shape[0], dtype=bool)
    for l, col in columns.items():
        if col.coordinate != l:
            raise InputError(f"column keyed {l} solves coordinate {col.coordinate}")
        values[l] = beta_node[l] + float(col.m @ moment)
        mask[l] = True
    return SageEstimate(node=design.node, values=values, debiased=mask, columns=dict(columns))


def debias_node(
    fit: FitResult,
    design: NodeDesign,
    eigen: EigenFactor,
    coordinates,
    config: DebiasConfig,
) -> SageEstimate:
    """Solve the requested columns in the eigenspace and apply the correction."""
    columns = {
        int(l): solve_projected(eigen, int(l), config, design.layout)
        for l in coordinates
    }
    return sage_update(fit, design, columns)
