"""Coefficient layout and grouped-norm algebra shared by every module.

Each node ``j`` of a ``p``-node graph carries one coefficient vector of
length ``L = (p - 1) * (q + 1)``: for every covariate group ``h`` in
``0..q`` there is one coefficient per partner node ``k != j``.  Group
``h = 0`` holds the baseline (covariate-free) partial-correlation
coefficients; group ``h >= 1`` holds the interaction coefficients with
covariate ``h``.  Within a group, partners are ordered by their rank
``rank(k) = k`` if ``k < j`` else ``k - 1``.

All indices in this module are 0-based; the CLI converts to and from the
1-based labels used in reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CoefLayout:
    """Index algebra for one node's coefficient vector.

    Parameters
    ----------
    p : int
        Number of graph nodes, at least 2.
    q : int
        Number of external covariates, at least 1.
    s_e, s_g : int, optional
        Elementwise / groupwise sparsity counts, when known (simulation
        truth).  Metadata only; no operation depends on them.
    """

    p: int
    q: int
    s_e: int | None = field(default=None, compare=False)
    s_g: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.p < 2:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")

    @property
    def group_size(self) -> int:
        return self.p - 1

    @property
    def n_groups(self) -> int:
        return self.q + 1

    @property
    def node_length(self) -> int:
        """Per-node coefficient count ``L = (p - 1) * (q + 1)``."""
        return (self.p - 1) * (self.q + 1)

    @property
    def total_length(self) -> int:
        return self.p * self.node_length

    def partner_rank(self, j: int, k: int) -> int:
        """Position of partner ``k`` within a group of node ``j``."""
        self._check_nodes(j, k)
        return k if k < j else k - 1

    def partner_from_rank(self, j: int, rank: int) -> int:
        if not 0 <= rank < self.p - 1:
            raise ValueError(f"rank {rank} out of range for p={self.p}")
        return rank if rank < j else rank + 1

    def index_of(self, j: int, k: int, h: int) -> int:
        """Flat position of coefficient (node ``j``, partner ``k``, group ``h``)."""
        if not 0 <= h <= self.q:
            raise ValueError(f"group {h} out of range 0..{self.q}")
        return h * (self.p - 1) + self.partner_rank(j, k)

    def coord_of(self, j: int, index: int) -> tuple[int, int]:
        """Inverse of :meth:`index_of`: recover ``(k, h)`` from a flat index."""
        if not 0 <= index < self.node_length:
            raise ValueError(f"index {index} out of range 0..{self.node_length - 1}")
        h, rank = divmod(index, self.p - 1)
        return self.partner_from_rank(j, rank), h

    def group_slice(self, h: int) -> slice:
        if not 0 <= h <= self.q:
            raise ValueError(f"group {h} out of range 0..{self.q}")
        return slice(h * (self.p - 1), (h + 1) * (self.p - 1))

    def _check_nodes(self, j: int, k: int) -> None:
        if not 0 <= j < self.p or not 0 <= k < self.p:
            raise ValueError(f"node indices ({j}, {k}) out of range for p={self.p}")
        if j == k:
            raise ValueError(f"partner must differ from the excluded node (j=k={j})")


def group_norms(v: np.ndarray, layout: CoefLayout) -> np.ndarray:
    """Euclidean norm of each of the ``q + 1`` groups of a per-node vector."""
    v = np.asarray(v, dtype=float)
    if v.shape != (layout.node_length,):
        raise ValueError(
            f"expected vector of length {layout.node_length}, got shape {v.shape}"
        )
    return np.linalg.norm(v.reshape(layout.n_groups, layout.group_size), axis=1)


def group_norm(v: np.ndarray, layout: CoefLayout, mode: str) -> float:
    """Grouped norm of a per-node vector.

    ``mode="inf2"`` returns the maximum per-group Euclidean norm,
    ``mode="one2"`` the sum.  Every group, including ``h = 0``,
    participates.
    """
    norms = group_norms(v, layout)
    if mode == "inf2":
        return float(norms.max())
    if mode == "one2":
        return float(norms.sum())
    raise ValueError(f"unknown mode {mode!r}; expected 'inf2' or 'one2'")


@dataclass
class MultiTaskCoef:
    """All ``p`` per-node coefficient vectors, concatenated node-major.

    ``values`` has length ``p * (p - 1) * (q + 1)``.  The cross-task group
    ``h`` (the object the group penalty couples) is the concatenation over
    nodes of each node's group-``h`` slice.
    """

    values: np.ndarray
    layout: CoefLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.total_length,):
            raise ValueError(
                f"expected {self.layout.total_length} values, got shape {self.values.shape}"
            )

    @classmethod
    def zeros(cls, layout: CoefLayout) -> "MultiTaskCoef":
        return cls(np.zeros(layout.total_length), layout)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, layout: CoefLayout) -> "MultiTaskCoef":
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (layout.p, layout.node_length):
            raise ValueError(f"expected shape {(layout.p, layout.node_length)}")
        return cls(matrix.reshape(-1).copy(), layout)

    def as_matrix(self) -> np.ndarray:
        """View of the coefficients as a ``(p, L)`` array (shares memory)."""
        return self.values.reshape(self.layout.p, self.layout.node_length)

    def node(self, j: int) -> np.ndarray:
        return self.as_matrix()[j]

    def cross_task_group(self, h: int) -> np.ndarray:
        """Group ``h`` across all nodes, length ``p * (p - 1)`` (copy)."""
        return self.as_matrix()[:, self.layout.group_slice(h)].reshape(-1).copy()

    def set_cross_task_group(self, h: int, values: np.ndarray) -> None:
        block = np.asarray(values, dtype=float).reshape(
            self.layout.p, self.layout.group_size
        )
        self.as_matrix()[:, self.layout.group_slice(h)] = block

    def get(self, j: int, k: int, h: int) -> float:
        return float(self.node(j)[self.layout.index_of(j, k, h)])

    def set(self, j: int, k: int, h: int, value: float) -> None:
        self.as_matrix()[j, self.layout.index_of(j, k, h)] = value
