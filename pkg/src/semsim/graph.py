"""Cyber graph among DER agents and its Laplacian spectrum."""
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import jacobi_eigvals, power_iteration_max


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class CyberGraph:
    """Weighted adjacency ``a_jm``.  Row ``j`` lists the agents ``j`` listens to."""

    weights: np.ndarray
    undirected: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise GraphError("weight matrix must be square")
        if w.shape[0] < 1:
            raise GraphError("graph must have at least one agent")
        if not np.all(np.isfinite(w)):
            raise GraphError("weights must be finite")
        if np.any(w < 0):
            raise GraphError("weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise GraphError("self-edges are not allowed")
        if self.undirected and not np.array_equal(w, w.T):
            raise GraphError("undirected graph needs a symmetric weight matrix")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.weights.shape[0]

    @classmethod
    def preset(cls, name, n, weight=1.0):
        return cls(preset_weights(name, n, weight))

    def scaled(self, c):
        return CyberGraph(self.weights * c, self.undirected)


def preset_weights(name, n, weight=1.0):
    if n < 1:
        raise GraphError("n must be >= 1")
    w = np.zeros((n, n))
    if name == "complete":
        w[:] = weight
        np.fill_diagonal(w, 0.0)
    elif name == "ring":
        if n == 2:
            w[0, 1] = w[1, 0] = weight
        elif n > 2:
            for i in range(n):
                w[i, (i + 1) % n] = w[(i + 1) % n, i] = weight
    elif name == "line":
        for i in range(n - 1):
            w[i, i + 1] = w[i + 1, i] = weight
    else:
        raise GraphError(f"unknown graph preset {name!r}")
    return w


def neighbors(g, j):
    """``[(m, a_jm), ...]`` with positive weight, ascending in ``m``."""
    if not 0 <= j < g.n:
        raise IndexError(f"agent index {j} out of range for n={g.n}")
    row = g.weights[j]
    return [(int(m), float(row[m])) for m in np.flatnonzero(row > 0)]


@dataclass(frozen=True)
class LaplacianReport:
    laplacian: np.ndarray
    lambda_max: float
    delay_bound_s: float
    advisory: bool = False
    eigenvalues: np.ndarray = field(default=None, repr=False)


def laplacian(g):
    w = g.weights
    return np.diag(w.sum(axis=1)) - w


def laplacian_report(g):
    """Largest Laplacian eigenvalue and the delay bound pi / (2 lambda_max).

    For directed graphs lambda_max is replaced by the largest singular value of
    L (power iteration on L^T L).  That value bounds every |lambda| from above,
    so the reported delay bound is conservative and flagged ``advisory``.
    """
    if g.n == 0:
        raise GraphError("empty graph")
    lap = laplacian(g)
    if g.undirected:
        eig = jacobi_eigvals(lap)
        lam = float(eig[-1])
        advisory = False
    else:
        eig = None
        lam = math.sqrt(max(power_iteration_max(lap.T @ lap), 0.0))
        advisory = True
    if lam <= 1e-12:
        raise GraphError("lambda_max is 0; the delay bound is undefined for an edgeless graph")
    lap.setflags(write=False)
    return LaplacianReport(lap, lam, math.pi / (2.0 * lam), advisory, eig)
