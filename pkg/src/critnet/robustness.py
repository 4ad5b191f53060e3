"""Exact graph-resistance robustness and the exhaustive node-criticality oracle.

The robustness value of a graph is the scaled sum of reciprocal nonzero
Laplacian eigenvalues, 2/(N-1) * sum(1/lambda_i); for connected graphs this
equals the mean pairwise effective resistance.  The oracle removes every node
in turn, measures the robustness change of the residual graph, and bins the
normalized impact into classes 1 (high), 2 (medium), 3 (low).
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractError,
    DegenerateInputWarning,
    NumericError,
    ParameterError,
)
from .graph import Graph, remove_node
from .validation import check_square_symmetric

CLASS_BIN_EDGES = (0.3, 0.7)  # score < .3 -> class 1, < .7 -> class 2, else 3

# Multiset spread below this (relative) counts as an exact tie of all impacts.
_DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class Spectrum:
    """Ascending real eigenvalues of a PSD matrix, with a zero threshold.

    ``zero_tolerance`` is relative to the largest eigenvalue; eigenvalues at
    or below that threshold count as zero (one per connected component for a
    graph Laplacian).
    """

    eigenvalues: np.ndarray = field(repr=False)
    zero_tolerance: float = 1e-9

    @property
    def zero_threshold(self) -> float:
        largest = float(self.eigenvalues[-1]) if len(self.eigenvalues) else 0.0
        return self.zero_tolerance * max(largest, 0.0)

    @property
    def n_zero(self) -> int:
        """Number of (numerically) zero eigenvalues."""
        return int(np.count_nonzero(self.eigenvalues <= self.zero_threshold))

    def nonzero(self) -> np.ndarray:
        return self.eigenvalues[self.eigenvalues > self.zero_threshold]


def laplacian_matrix(g: Graph) -> np.ndarray:
    """L = D - A with D the weighted-degree diagonal; rows sum to zero."""
    a = g.adjacency_matrix()
    return np.diag(a.sum(axis=1)) - a


def symmetric_eigenvalues(m, *, zero_tolerance: float = 1e-9,
                          check_residuals: bool = False) -> Spectrum:
    """Full ascending spectrum of a symmetric matrix (dense solver).

    Symmetry is required within 1e-12.  With ``check_residuals`` each
    eigenpair is verified to satisfy ||Mv - lambda v|| <= 1e-8 ||M||.
    """
    m = check_square_symmetric(m, name="eigensolver input")
    try:
        if check_residuals:
            vals, vecs = np.linalg.eigh(m)
            norm = max(np.linalg.norm(m), 1e-300)
            resid = np.linalg.norm(m @ vecs - vecs * vals, axis=0)
            worst = float(resid.max() / norm) if len(vals) else 0.0
            if worst > 1e-8:
                raise NumericError(
                    f"eigenpair residual {worst:.3e} exceeds 1e-8",
                    diagnostics={"max_relative_residual": worst})
        else:
            vals = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver did not converge: {exc}") from exc
    vals = np.sort(vals)
    spec = Spectrum(eigenvalues=vals, zero_tolerance=zero_tolerance)
    if len(vals) and vals[0] < -spec.zero_threshold - 1e-12 * max(1.0, abs(vals[-1])):
        raise ContractError(
            f"matrix is not PSD: smallest eigenvalue {vals[0]:.3e}")
    return spec


def effective_graph_resistance(g: Graph) -> float:
    """Scaled reciprocal eigenvalue sum 2/(N-1) * sum over nonzero lambda.

    Zero eigenvalues (one per connected component) are dropped, so the value
    is finite for disconnected graphs as well.
    """
    if g.n_nodes < 2:
        raise ParameterError("graph resistance needs at least 2 nodes")
    spec = symmetric_eigenvalues(laplacian_matrix(g))
    return 2.0 / (g.n_nodes - 1) * float(np.sum(1.0 / spec.nonzero()))


def laplacian_pseudoinverse(g: Graph) -> np.ndarray:
    """Moore-Penrose pseudoinverse of the Laplacian via eigendecomposition."""
    lap = laplacian_matrix(g)
    vals, vecs = np.linalg.eigh(lap)
    spec = Spectrum(eigenvalues=vals)
    inv = np.where(vals > spec.zero_threshold, 1.0 / np.where(vals > 0, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


def pairwise_effective_resistance(g: Graph, i: int, j: int) -> float:
    """Electrical resistance between nodes i and j.

    Returns ``inf`` when the nodes lie in different connected components.
    """
    if not (0 <= i < g.n_nodes and 0 <= j < g.n_nodes):
        raise IndexError(f"nodes ({i},{j}) out of range for {g.n_nodes} nodes")
    if i == j:
        return 0.0
    comp = g.connected_components()
    if comp[i] != comp[j]:
        return float("inf")
    pinv = laplacian_pseudoinverse(g)
    return float(pinv[i, i] + pinv[j, j] - 2.0 * pinv[i, j])


@dataclass(frozen=True)
class CriticalityResult:
    """Per-node removal impact: raw robustness change, score, class label.

    ``raw_delta[n]`` is the (signed) robustness change caused by deleting
    node n.  ``score`` maps impact magnitude to [0, 1] with the most
    disruptive node at 0, so class 1 collects the rare high-impact nodes.
    """

    raw_delta: np.ndarray = field(repr=False)
    score: np.ndarray = field(repr=False)
    label: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.raw_delta)


def label_nodes(scores) -> np.ndarray:
    """Bin scores into classes: [0, 0.3) -> 1, [0.3, 0.7) -> 2, [0.7, 1] -> 3."""
    scores = np.asarray(scores, dtype=float)
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ParameterError("scores must lie in [0, 1]")
    lo, hi = CLASS_BIN_EDGES
    return np.where(scores < lo, 1, np.where(scores < hi, 2, 3)).astype(int)


def _residual_resistance(args: tuple[Graph, int]) -> float:
    g, node = args
    residual, _ = remove_node(g, node)
    return effective_graph_resistance(residual)


def criticality_scores(g: Graph, n_jobs: int = 1) -> CriticalityResult:
    """Exhaustive per-node criticality via node removal (the slow oracle).

    For every node the residual graph's robustness is computed exactly and
    compared with the intact graph's.  Impact is the magnitude of that
    change (removals that disconnect the graph swing the metric hard in the
    negative direction; both directions mean disruption).  Scores are
    1 - minmax(impact), so the most disruptive node scores 0 and lands in
    class 1.

    If all nodes tie (vertex-transitive graphs), every score is 0.5 and
    every label class 2, with a :class:`DegenerateInputWarning`.

    ``n_jobs`` > 1 fans the independent removal subproblems out to worker
    processes; assembly is by node id, so results are order-independent.
    """
    if g.n_nodes < 3:
        raise ParameterError("criticality oracle needs at least 3 nodes")
    base = effective_graph_resistance(g)
    jobs = [(g, v) for v in range(g.n_nodes)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            residuals = list(pool.map(_residual_resistance, jobs, chunksize=16))
    else:
        residuals = [_residual_resistance(job) for job in jobs]
    raw_delta = np.asarray(residuals) - base

    impact = np.abs(raw_delta)
    spread = float(impact.max() - impact.min())
    if spread <= _DEGENERATE_RTOL * max(1.0, float(impact.max())):
        warnings.warn(
            "all nodes have identical removal impact; assigning class 2 throughout",
            DegenerateInputWarning, stacklevel=2)
        score = np.full(g.n_nodes, 0.5)
    else:
        score = 1.0 - (impact - impact.min()) / spread
    return CriticalityResult(raw_delta=raw_delta, score=score, label=label_nodes(score))


def save_criticality_csv(result: CriticalityResult, path) -> None:
    """Write ``node_id, raw_delta, score, label`` rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "raw_delta", "score", "label"])
        for node in range(result.n_nodes):
            writer.writerow([node, repr(float(result.raw_delta[node])),
                             repr(float(result.score[node])), int(result.label[node])])


def load_criticality_csv(path) -> CriticalityResult:
    raw, score, label = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            raw.append(float(row["raw_delta"]))
            score.append(float(row["score"]))
            label.append(int(row["label"]))
    return CriticalityResult(raw_delta=np.asarray(raw), score=np.asarray(score),
                             label=np.asarray(label, dtype=int))
