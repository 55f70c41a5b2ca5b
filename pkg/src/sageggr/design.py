"""Per-node design matrices and their low-rank eigen factorization.

For node ``j`` the design stacks the other nodes' centered responses and
their elementwise products with each covariate, ordered group-major to
match :class:`~sageggr.layout.CoefLayout`.  The factorization
diagonalizes the small ``n x n`` matrix ``W W^T / n`` instead of the
``L x L`` Gram matrix; in the regime of interest ``n`` is far below
``L = (p - 1) * (q + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesign, InputError
from .layout import CoefLayout
from .model import Dataset


@dataclass
class NodeDesign:
    """Design matrix ``W`` (n x L) and response ``z`` for one node."""

    node: int
    W: np.ndarray
    z: np.ndarray
    layout: CoefLayout

    @property
    def n(self) -> int:
        return self.W.shape[0]


@dataclass
class EigenFactor:
    """Rank-truncated factorization ``W / sqrt(n) = row_basis @ diag(sqrt(eigenvalues)) @ coef_basis.T``.

    ``eigenvalues`` are the nonzero eigenvalues of ``W W^T / n`` in
    descending order (they coincide with the nonzero eigenvalues of the
    Gram matrix ``W^T W / n``); ``coef_basis`` has orthonormal columns, so
    the Gram matrix equals ``coef_basis @ diag(eigenvalues) @ coef_basis.T``.
    """

    row_basis: np.ndarray  # n x r, orthonormal columns
    eigenvalues: np.ndarray  # r, descending, positive
    coef_basis: np.ndarray  # L x r, orthonormal columns

    @property
    def rank(self) -> int:
        return self.eigenvalues.shape[0]

    def gram_quadratic(self, theta_a: np.ndarray, theta_b: np.ndarray) -> float:
        """``m_a^T Gram m_b`` for ``m = coef_basis @ theta`` without leaving the small space."""
        return float(theta_a @ (self.eigenvalues * theta_b))

    def lift(self, theta: np.ndarray) -> np.ndarray:
        """Map a small-space vector back to the full coefficient space."""
        return self.coef_basis @ theta


def build_node_design(data: Dataset, node: int) -> NodeDesign:
    """Assemble the design matrix for one node.

    Columns are ordered group-major: the raw partner responses first,
    then, for each covariate in turn, the partner responses scaled
    elementwise by that covariate.
    """
    layout = data.layout()
    if not 0 <= node < layout.p:
        raise InputError(f"node {node} out of range 0..{layout.p - 1}")
    others = np.delete(np.arange(layout.p), node)
    Z_minus = data.Z[:, others]
    blocks = [Z_minus]
    for h in range(1, layout.q + 1):
        blocks.append(Z_minus * data.U[:, h - 1][:, None])
    W = np.concatenate(blocks, axis=1)
    return NodeDesign(node=node, W=W, z=data.Z[:, node].copy(), layout=layout)


def gram(design: NodeDesign) -> np.ndarray:
    """Gram matrix ``W^T W / n`` (L x L, symmetric PSD)."""
    return design.W.T @ design.W / design.n


def eigen_factor(design: NodeDesign, rank_tol: float = 1e-12) -> EigenFactor:
    """Eigen-factorize ``W W^T / n`` and build the coefficient-space basis.

    Eigenvalues below ``rank_tol`` times the largest are dropped.  The
    basis is ``W^T @ row_basis @ diag(eigenvalues)^{-1/2} / sqrt(n)``,
    which has exactly orthonormal columns up to rounding.
    """
    n = design.n
    xi = design.W @ design.W.T / n
    eigvals, eigvecs = np.linalg.eigh(xi)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if eigvals[0] <= 0:
        raise DegenerateDesign(f"node {design.node}: largest eigenvalue {eigvals[0]:.3e}")
    keep = eigvals > rank_tol * eigvals[0]
    eigvals, eigvecs = eigvals[keep], eigvecs[:, keep]
    coef_basis = design.W.T @ eigvecs / (np.sqrt(n) * np.sqrt(eigvals))
    return EigenFactor(row_basis=eigvecs, eigenvalues=eigvals, coef_basis=coef_basis)
