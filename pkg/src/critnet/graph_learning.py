"""Graph re-estimation from node embeddings via smooth-signal optimization.

Given pairwise squared embedding distances Z, we look for a symmetric
nonnegative weighted adjacency A (zero diagonal) minimizing

    f(A) = sum_ij A_ij Z_ij - alpha * sum_i log(sum_j A_ij) + beta * sum_ij A_ij^2

The first term rewards putting weight between similar nodes, the log
barrier keeps every node's total degree strictly positive, and the
Frobenius term spreads/sparsifies the weights.  The solver is projected
gradient descent on the upper-triangular free variables with backtracking
line search; stationarity is certified with a KKT residual.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import (
    ContractError,
    DegenerateGraphError,
    DegenerateInputWarning,
    NumericError,
    ParameterError,
)
from .graph import Graph
from .validation import check_positive, check_square_symmetric


def distance_matrix(embeddings) -> np.ndarray:
    """Pairwise squared Euclidean distances between embedding rows.

    Output is symmetric, nonnegative, with a zero diagonal.
    """
    e = np.asarray(embeddings, dtype=float)
    if e.ndim != 2 or e.shape[0] < 2:
        raise ParameterError(f"need an (N>=2, d) embedding matrix, got {e.shape}")
    sq = np.sum(e * e, axis=1)
    z = sq[:, None] + sq[None, :] - 2.0 * (e @ e.T)
    np.maximum(z, 0.0, out=z)
    z = 0.5 * (z + z.T)
    np.fill_diagonal(z, 0.0)
    return z


@dataclass(frozen=True)
class GraphLearnConfig:
    """Solver settings; ``alpha`` weighs the log barrier, ``beta`` the
    Frobenius term."""

    alpha: float = 1.0
    beta: float = 0.5
    max_iters: int = 5000
    tolerance: float = 1e-10       # relative objective change
    kkt_tol: float = 1e-7          # stationarity target; keeps iterating past
    step_size: float = 1.0         # initial line-search step
    sparsify_ratio: float = 0.05

    def __post_init__(self):
        check_positive(self.alpha, "alpha")
        check_positive(self.beta, "beta")
        check_positive(self.step_size, "step_size")
        if not 0.0 <= self.sparsify_ratio < 1.0:
            raise ParameterError(
                f"sparsify_ratio must be in [0, 1), got {self.sparsify_ratio}")


@dataclass(frozen=True)
class LearnedAdjacency:
    """Solver output: the weighted adjacency plus convergence evidence."""

    adjacency: np.ndarray = field(repr=False)
    objective: float = 0.0
    n_iters: int = 0
    kkt_residual: float = 0.0
    trace: list[tuple[int, float, float, float]] = field(default_factory=list,
                                                         repr=False)


def _tri_indices(n: int):
    return np.triu_indices(n, k=1)


def _objective(w: np.ndarray, z_u: np.ndarray, row_sums: np.ndarray,
               alpha: float, beta: float) -> float:
    # Full-matrix sums: each undirected pair appears twice in f(A).
    if np.any(row_sums <= 0.0):
        return np.inf
    return float(2.0 * w @ z_u - alpha * np.log(row_sums).sum() + 2.0 * beta * w @ w)


def _row_sums(w: np.ndarray, iu, n: int) -> np.ndarray:
    return (np.bincount(iu[0], weights=w, minlength=n)
            + np.bincount(iu[1], weights=w, minlength=n))


def _gradient(w: np.ndarray, z_u: np.ndarray, row_sums: np.ndarray, iu,
              alpha: float, beta: float) -> np.ndarray:
    inv = 1.0 / row_sums
    return 2.0 * z_u - alpha * (inv[iu[0]] + inv[iu[1]]) + 4.0 * beta * w


def _kkt_residual(w: np.ndarray, grad: np.ndarray) -> float:
    """Stationarity violation under the nonnegativity constraint."""
    active = w > 0.0
    res_active = np.abs(grad[active]).max() if active.any() else 0.0
    res_bound = np.maximum(0.0, -grad[~active]).max() if (~active).any() else 0.0
    return float(max(res_active, res_bound))


def learn_graph_map(z, cfg: GraphLearnConfig = GraphLearnConfig()) -> LearnedAdjacency:
    """Solve the smooth-signal adjacency estimation problem for distances ``z``.

    Projected gradient descent on the upper-triangular weights with Armijo
    backtracking; steps that drive any row sum to zero are rejected by the
    line search (their objective is +inf).  Iteration stops once the
    relative objective change is below ``cfg.tolerance`` and the KKT
    residual is below ``cfg.kkt_tol``, or at ``cfg.max_iters``.

    Returns
    -------
    LearnedAdjacency with the symmetric nonnegative matrix, final objective,
    iterations used, KKT residual, and an (iter, objective, kkt, step) trace.
    """
    z = check_square_symmetric(z, name="distance matrix")
    n = z.shape[0]
    if n < 2:
        raise ParameterError("graph learning needs at least 2 nodes")
    if np.any(z < 0):
        raise ContractError("distance matrix must be nonnegative")
    alpha, beta = cfg.alpha, cfg.beta
    iu = _tri_indices(n)
    z_u = z[iu]

    # Uniform feasible start: every row sum strictly positive.
    w = np.full(len(z_u), alpha / (n * float(z.mean()) + 1.0))
    rows = _row_sums(w, iu, n)
    f_val = _objective(w, z_u, rows, alpha, beta)
    if not np.isfinite(f_val):
        raise NumericError("infeasible starting point", diagnostics={"w0": w[0]})

    step = cfg.step_size
    kkt = np.inf
    trace: list[tuple[int, float, float, float]] = []
    grad = _gradient(w, z_u, rows, iu, alpha, beta)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        kkt = _kkt_residual(w, grad)
        accepted = False
        for _ in range(60):
            w_new = np.maximum(w - step * grad, 0.0)
            rows_new = _row_sums(w_new, iu, n)
            f_new = _objective(w_new, z_u, rows_new, alpha, beta)
            # sufficient decrease for the projected step
            move = float(np.sum((w_new - w) ** 2))
            if np.isfinite(f_new) and f_new <= f_val - 1e-4 / step * move:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if kkt <= cfg.kkt_tol:
                break
            raise NumericError(
                "line search stalled before reaching stationarity",
                diagnostics={"iteration": it, "kkt_residual": kkt, "step": step})
        rel_change = abs(f_val - f_new) / max(1.0, abs(f_val))
        grad_new = _gradient(w_new, z_u, rows_new, iu, alpha, beta)
        # Barzilai-Borwein trial step for the next iteration: adapts to the
        # local curvature the log barrier creates near small row sums.
        dw = w_new - w
        dg = grad_new - grad
        curv = float(dw @ dg)
        if curv > 1e-300:
            step = min(max(float(dw @ dw) / curv, 1e-12), 1e6)
        else:
            step = min(step * 2.0, 1e6)
        w, rows, f_val, grad = w_new, rows_new, f_new, grad_new
        kkt = _kkt_residual(w, grad)
        trace.append((it, f_val, kkt, step))
        if rel_change < cfg.tolerance and kkt <= cfg.kkt_tol:
            break

    a = np.zeros((n, n))
    a[iu] = w
    a = a + a.T
    return LearnedAdjacency(adjacency=a, objective=f_val, n_iters=it,
                            kkt_residual=kkt, trace=trace)


def sparsify_to_graph(learned, ratio: float | None = None) -> Graph:
    """Threshold a learned adjacency into an explicit weighted graph.

    Entries strictly below ``ratio * max(A)`` are dropped.  Isolated nodes
    are allowed (reported via :class:`DegenerateInputWarning`); an empty
    edge set raises :class:`DegenerateGraphError`.
    """
    a = learned.adjacency if isinstance(learned, LearnedAdjacency) else np.asarray(learned)
    a = check_square_symmetric(a, name="adjacency")
    if ratio is None:
        ratio = 0.05
    if not 0.0 <= ratio < 1.0:
        raise ParameterError(f"ratio must be in [0, 1), got {ratio}")
    n = a.shape[0]
    threshold = ratio * float(a.max())
    iu = _tri_indices(n)
    keep = (a[iu] > 0.0) & ~(a[iu] < threshold)
    us, vs = iu[0][keep], iu[1][keep]
    ws = a[iu][keep]
    if len(us) == 0:
        raise DegenerateGraphError("sparsification removed every edge")
    g = Graph.from_edges(n, zip(us, vs, ws))
    isolated = int(np.sum(g.degrees() == 0.0))
    if isolated:
        warnings.warn(f"{isolated} isolated nodes after sparsification",
                      DegenerateInputWarning, stacklevel=2)
    return g


class SmoothGraphLearner(BaseEstimator):
    """Estimator facade over :func:`learn_graph_map`.

    ``fit(Z)`` solves the optimization problem; ``transform()`` returns the
    learned adjacency and :meth:`to_graph` the thresholded explicit graph.
    """

    def __init__(self, alpha=1.0, beta=0.5, max_iters=5000, tolerance=1e-10,
                 kkt_tol=1e-7, step_size=1.0, sparsify_ratio=0.05):
        self.alpha = alpha
        self.beta = beta
        self.max_iters = max_iters
        self.tolerance = tolerance
        self.kkt_tol = kkt_tol
        self.step_size = step_size
        self.sparsify_ratio = sparsify_ratio

    def _config(self) -> GraphLearnConfig:
        return GraphLearnConfig(alpha=self.alpha, beta=self.beta,
                                max_iters=self.max_iters, tolerance=self.tolerance,
                                kkt_tol=self.kkt_tol, step_size=self.step_size,
                                sparsify_ratio=self.sparsify_ratio)

    def fit(self, z, y=None):
        result = learn_graph_map(z, self._config())
        self.adjacency_ = result.adjacency
        self.objective_ = result.objective
        self.n_iters_ = result.n_iters
        self.kkt_residual_ = result.kkt_residual
        self.trace_ = result.trace
        return self

    def _require_fitted(self):
        if not hasattr(self, "adjacency_"):
            raise NotFittedError("call fit before transform/to_graph")

    def transform(self, z=None) -> np.ndarray:
        self._require_fitted()
        return self.adjacency_.copy()

    def fit_transform(self, z, y=None) -> np.ndarray:
        return self.fit(z).transform()

    def to_graph(self, ratio: float | None = None) -> Graph:
        self._require_fitted()
        if ratio is None:
            ratio = self.sparsify_ratio
        return sparsify_to_graph(self.adjacency_, ratio)


def save_solver_trace(trace, path) -> None:
    """Write the per-iteration ``iter, objective, kkt_residual, step`` CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "objective", "kkt_residual", "step"])
        for it, obj, kkt, step in trace:
            writer.writerow([it, repr(float(obj)), repr(float(kkt)), repr(float(step))])
