"""Inductive node classifier: mean-aggregation message passing + dense head.

Three aggregation rounds build node embeddings from [weighted degree,
average neighbor degree] inputs; at each round a node's previous vector is
concatenated with the edge-weight-weighted mean of its neighbors' vectors
and passed through a relu dense layer (64/32/16 units).  A 10-unit relu
layer and a 3-way softmax sit on top.  Dropout masks are sampled per hidden
layer and shared across nodes, so each stochastic pass behaves like one
sampled set of network weights; averaging many passes gives calibrated
class probabilities with credible intervals.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import ContractError, DegenerateInputWarning, ParameterError
from .graph import Graph
from .nn import (
    AdamHyperparams,
    AdamState,
    DenseLayer,
    DropoutMask,
    adam_step,
    init_dense,
    relu,
    softmax,
)
from .validation import as_seed_sequence, check_class_labels, check_features

CHECKPOINT_VERSION = 1

N_AGG_LAYERS = 3  # aggregation depth; the last aggregation output is the embedding


def build_propagation(g: Graph, neighbor_cap: int | None = None,
                      seed: int | None = None) -> sp.csr_matrix:
    """Row-stochastic neighbor-averaging operator P = D^-1 A.

    Row i holds the edge-weight-normalized weights of node i's neighbors;
    isolated nodes get an all-zero row.  With ``neighbor_cap`` each node
    averages over at most that many uniformly sampled neighbors (seeded).
    """
    rows = np.concatenate([g.edges_u, g.edges_v])
    cols = np.concatenate([g.edges_v, g.edges_u])
    vals = np.concatenate([g.weights, g.weights])
    if neighbor_cap is not None:
        if neighbor_cap < 1:
            raise ParameterError(f"neighbor_cap must be >= 1, got {neighbor_cap}")
        rng = np.random.default_rng(as_seed_sequence(seed or 0, 97))
        keep_idx = []
        order = np.argsort(rows, kind="stable")
        rows_s, start = rows[order], 0
        while start < len(rows_s):
            stop = start
            while stop < len(rows_s) and rows_s[stop] == rows_s[start]:
                stop += 1
            block = order[start:stop]
            if len(block) > neighbor_cap:
                block = rng.choice(block, size=neighbor_cap, replace=False)
            keep_idx.append(block)
            start = stop
        keep = np.concatenate(keep_idx) if keep_idx else np.empty(0, dtype=int)
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(g.n_nodes, g.n_nodes))
    mat.sum_duplicates()
    row_sum = np.asarray(mat.sum(axis=1)).ravel()
    inv = np.divide(1.0, row_sum, out=np.zeros_like(row_sum), where=row_sum > 0)
    return sp.diags(inv) @ mat


def init_model_params(feature_dim: int, hidden_dims: tuple[int, ...],
                      head_dims: tuple[int, ...], n_classes: int,
                      rng: np.random.Generator) -> list[DenseLayer]:
    """Glorot-initialized layer stack for the aggregate-and-classify model."""
    if len(hidden_dims) != N_AGG_LAYERS:
        raise ParameterError(f"expected {N_AGG_LAYERS} aggregation dims, got {hidden_dims}")
    layers = []
    d = feature_dim
    for out_dim in hidden_dims:
        layers.append(init_dense(out_dim, 2 * d, "relu", rng))  # concat(self, mean)
        d = out_dim
    for out_dim in head_dims:
        layers.append(init_dense(out_dim, d, "relu", rng))
        d = out_dim
    layers.append(init_dense(n_classes, d, "softmax", rng))
    return layers


def _check_model(g: Graph, x: np.ndarray, layers: list[DenseLayer]) -> None:
    if layers[0].in_dim != 2 * x.shape[1]:
        raise ContractError(
            f"model expects {layers[0].in_dim // 2}-dim features, got {x.shape[1]}")


def sage_forward(g: Graph, features, layers: list[DenseLayer],
                 masks: list[DropoutMask] | None = None,
                 prop: sp.csr_matrix | None = None,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Full-graph forward pass.

    Returns (logits, embeddings): logits are the pre-softmax class scores
    (N x n_classes) and embeddings the final aggregation output (N x 16 for
    the default architecture).  ``masks``, if given, holds one dropout mask
    per hidden layer (all layers except the output), applied after the
    activation and shared across nodes.
    """
    x = check_features(features, g.n_nodes)
    _check_model(g, x, layers)
    if masks is not None and len(masks) != len(layers) - 1:
        raise ContractError(f"need {len(layers) - 1} masks, got {len(masks)}")
    if prop is None:
        prop = build_propagation(g)
    h = x
    for k in range(N_AGG_LAYERS):
        neigh = prop @ h
        concat = np.hstack([h, neigh])
        h = relu(concat @ layers[k].weight.T + layers[k].bias)
        if masks is not None:
            h = h * masks[k].values
    embeddings = h
    for k in range(N_AGG_LAYERS, len(layers) - 1):
        h = relu(h @ layers[k].weight.T + layers[k].bias)
        if masks is not None:
            h = h * masks[k].values
    out = layers[-1]
    logits = h @ out.weight.T + out.bias
    return logits, embeddings


def _forward_cached(prop, x, layers, masks):
    """Forward pass keeping the per-layer inputs/pre-activations for backprop."""
    caches = []
    h = x
    for k in range(N_AGG_LAYERS):
        neigh = prop @ h
        concat = np.hstack([h, neigh])
        z = concat @ layers[k].weight.T + layers[k].bias
        a = relu(z)
        if masks is not None:
            a = a * masks[k].values
        caches.append((concat, z))
        h = a
    for k in range(N_AGG_LAYERS, len(layers) - 1):
        z = h @ layers[k].weight.T + layers[k].bias
        a = relu(z)
        if masks is not None:
            a = a * masks[k].values
        caches.append((h, z))
        h = a
    out = layers[-1]
    logits = h @ out.weight.T + out.bias
    caches.append((h, logits))
    return logits, caches


def _loss_and_param_grads(prop, prop_t, x, layers, masks, labeled, y_zero_based,
                          weights_per_class):
    """Mean class-weighted cross entropy over labeled nodes, with gradients.

    Gradients are returned in parameter order [W1, b1, ..., Wlast, blast].
    """
    logits, caches = _forward_cached(prop, x, layers, masks)
    probs = softmax(logits)
    n_lab = len(labeled)
    p_true = np.clip(probs[labeled, y_zero_based], 1e-12, None)
    w = weights_per_class[y_zero_based]
    loss = float(np.mean(-w * np.log(p_true)))

    d_logits = np.zeros_like(probs)
    d_logits[labeled] = probs[labeled]
    d_logits[labeled, y_zero_based] -= 1.0
    d_logits[labeled] *= (w / n_lab)[:, None]

    grads: list[np.ndarray] = [None] * (2 * len(layers))
    inp, _ = caches[-1]
    grads[-2] = d_logits.T @ inp
    grads[-1] = d_logits.sum(axis=0)
    d_h = d_logits @ layers[-1].weight

    for k in range(len(layers) - 2, -1, -1):
        inp, z = caches[k]
        if masks is not None:
            d_h = d_h * masks[k].values
        d_z = d_h * (z > 0.0)
        grads[2 * k] = d_z.T @ inp
        grads[2 * k + 1] = d_z.sum(axis=0)
        d_inp = d_z @ layers[k].weight
        if k >= N_AGG_LAYERS:
            d_h = d_inp
        else:
            d_self = d_inp[:, : inp.shape[1] // 2]
            d_neigh = d_inp[:, inp.shape[1] // 2:]
            d_h = d_self + prop_t @ d_neigh
    return loss, grads


def _layers_from_flat(template: list[DenseLayer], flat: list[np.ndarray]) -> list[DenseLayer]:
    return [DenseLayer(weight=flat[2 * k], bias=flat[2 * k + 1], activation=t.activation)
            for k, t in enumerate(template)]


def _flat_params(layers: list[DenseLayer]) -> list[np.ndarray]:
    flat = []
    for layer in layers:
        flat.append(layer.weight)
        flat.append(layer.bias)
    return flat


def _sample_masks(layers, rate, seed, *spawn_key):
    if rate == 0.0:
        return None
    return [DropoutMask.sample(layer.out_dim, rate, seed, *spawn_key, k)
            for k, layer in enumerate(layers[:-1])]


def extract_embeddings(g: Graph, features, layers: list[DenseLayer]) -> np.ndarray:
    """Deterministic (dropout-off) embedding matrix from the trained model."""
    _, emb = sage_forward(g, features, layers)
    return emb


@dataclass(frozen=True)
class McPrediction:
    """Aggregate of stochastic forward passes: predictive mean and spread.

    ``ci_halfwidth`` is 1.96 times the standard deviation of the predicted
    class's probability across passes.
    """

    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)
    predicted_class: np.ndarray = field(repr=False)
    ci_halfwidth: np.ndarray = field(repr=False)
    n_samples: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.predicted_class)

    def predicted_std(self) -> np.ndarray:
        """Per-node std of the predicted class's probability."""
        return self.std[np.arange(self.n_nodes), self.predicted_class - 1]


def mc_dropout_predict(g: Graph, features, layers: list[DenseLayer],
                       n_samples: int = 100, rate: float = 0.5,
                       seed: int = 0) -> McPrediction:
    """Average ``n_samples`` dropout-perturbed forward passes.

    Each pass draws fresh per-layer masks from a seed derived as
    (seed, pass index), so passes are order-independent and the whole
    prediction is reproducible.  ``n_samples=1`` yields zero std by
    convention (warns); rate 0 reduces to the deterministic forward pass.
    """
    if n_samples < 1:
        raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
    if n_samples == 1:
        warnings.warn("single stochastic pass: std is 0 by convention",
                      DegenerateInputWarning, stacklevel=2)
    prop = build_propagation(g)
    x = check_features(features, g.n_nodes)
    runs = np.empty((n_samples, g.n_nodes, layers[-1].out_dim))
    for s in range(n_samples):
        masks = _sample_masks(layers, rate, seed, s)
        logits, _ = sage_forward(g, x, layers, masks=masks, prop=prop)
        runs[s] = softmax(logits)
    mean = runs.mean(axis=0)
    std = runs.std(axis=0) if n_samples > 1 else np.zeros_like(mean)
    pred = np.argmax(mean, axis=1) + 1
    half = 1.96 * std[np.arange(g.n_nodes), pred - 1]
    return McPrediction(mean=mean, std=std, predicted_class=pred,
                        ci_halfwidth=half, n_samples=n_samples)


class SageClassifier(BaseEstimator):
    """Inductive 3-class node classifier with cost-sensitive training.

    Parameters mirror the training hyperparameters: ADAM settings, epoch
    budget with early stopping on plateaued training loss, dropout rate
    (active during training and, via :meth:`mc_predict`, at inference), and
    per-class loss weights countering class imbalance.  ``fit`` runs
    full-batch gradient descent of the mean weighted cross entropy over the
    labeled nodes; message passing always covers the whole graph.
    """

    def __init__(self, hidden_dims=(64, 32, 16), head_dims=(10,), n_classes=3,
                 learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8,
                 epochs=300, dropout_rate=0.5, class_weights=(100.0, 50.0, 1.0),
                 early_stop_patience=50, early_stop_rtol=1e-5,
                 neighbor_cap=None, seed=0):
        self.hidden_dims = hidden_dims
        self.head_dims = head_dims
        self.n_classes = n_classes
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.epochs = epochs
        self.dropout_rate = dropout_rate
        self.class_weights = class_weights
        self.early_stop_patience = early_stop_patience
        self.early_stop_rtol = early_stop_rtol
        self.neighbor_cap = neighbor_cap
        self.seed = seed

    def fit(self, graph: Graph, features, labels, labeled_nodes=None):
        """Train on the labels of ``labeled_nodes`` (all nodes if omitted).

        ``labels`` is a full-length per-node array with classes in {1,2,3};
        only entries at ``labeled_nodes`` are ever read, which keeps
        held-out labels out of the optimization by construction.
        """
        x = check_features(features, graph.n_nodes)
        labels = np.asarray(labels)
        if labeled_nodes is None:
            labeled_nodes = np.arange(graph.n_nodes)
        labeled_nodes = np.asarray(labeled_nodes, dtype=int)
        if len(labeled_nodes) == 0:
            raise ParameterError("labeled node set must be non-empty")
        y = check_class_labels(labels[labeled_nodes])
        if len(np.unique(y)) == 1:
            warnings.warn("all revealed labels are one class",
                          DegenerateInputWarning, stacklevel=2)
        if len(self.class_weights) != self.n_classes:
            raise ParameterError("need one class weight per class")

        rng = np.random.default_rng(as_seed_sequence(self.seed, 0))
        layers = init_model_params(x.shape[1], tuple(self.hidden_dims),
                                   tuple(self.head_dims), self.n_classes, rng)
        prop = build_propagation(graph, self.neighbor_cap, self.seed)
        prop_t = prop.T.tocsr()
        hyper = AdamHyperparams(self.learning_rate, self.beta1, self.beta2,
                                self.epsilon)
        params = _flat_params(layers)
        state = AdamState.zeros_like(params)
        weights_arr = np.asarray(self.class_weights, dtype=float)
        y0 = y - 1

        history: list[float] = []
        best = np.inf
        stale = 0
        n_run = 0
        for epoch in range(self.epochs):
            masks = _sample_masks(layers, float(self.dropout_rate), self.seed, 1, epoch)
            _, grads = _loss_and_param_grads(prop, prop_t, x, layers, masks,
                                             labeled_nodes, y0, weights_arr)
            params = adam_step(params, grads, state, hyper)
            layers = _layers_from_flat(layers, params)
            # plateau detection uses the deterministic (mask-free) loss
            det_loss, _ = _loss_and_param_grads(prop, prop_t, x, layers, None,
                                                labeled_nodes, y0, weights_arr)
            history.append(det_loss)
            n_run = epoch + 1
            if det_loss < best * (1.0 - self.early_stop_rtol):
                best = det_loss
                stale = 0
            else:
                stale += 1
                if stale >= self.early_stop_patience:
                    break

        self.params_ = layers
        self.loss_history_ = np.asarray(history)
        self.n_epochs_run_ = n_run
        self.n_features_in_ = x.shape[1]
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, graph: Graph, features) -> np.ndarray:
        """Deterministic class probabilities (dropout off)."""
        self._require_fitted()
        logits, _ = sage_forward(graph, features, self.params_)
        return softmax(logits)

    def predict(self, graph: Graph, features) -> np.ndarray:
        """Point predictions: argmax class in {1, 2, 3}."""
        return np.argmax(self.predict_proba(graph, features), axis=1) + 1

    def transform(self, graph: Graph, features) -> np.ndarray:
        """Node embeddings from the final aggregation layer (deterministic)."""
        self._require_fitted()
        return extract_embeddings(graph, features, self.params_)

    def mc_predict(self, graph: Graph, features, n_samples: int = 100,
                   rate: float | None = None, seed: int | None = None) -> McPrediction:
        """Monte-Carlo dropout prediction (see :func:`mc_dropout_predict`)."""
        self._require_fitted()
        if rate is None:
            rate = float(self.dropout_rate)
        if seed is None:
            seed = int(self.seed) + 1
        return mc_dropout_predict(graph, features, self.params_,
                                  n_samples=n_samples, rate=rate, seed=seed)


def save_checkpoint(layers: list[DenseLayer], path) -> None:
    """JSON checkpoint of every layer's shape, activation, and weights."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "layers": [
            {"activation": layer.activation,
             "weight": layer.weight.tolist(),
             "bias": layer.bias.tolist()}
            for layer in layers
        ],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> list[DenseLayer]:
    with open(path) as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ParameterError(f"unsupported checkpoint version {version!r}")
    return [DenseLayer(weight=np.asarray(spec["weight"], dtype=float),
                       bias=np.asarray(spec["bias"], dtype=float),
                       activation=spec["activation"])
            for spec in payload["layers"]]


def save_prediction_csv(pred: McPrediction, path, node_ids=None) -> None:
    """Write ``node_id, p1_mean, p2_mean, p3_mean, p_pred_std, pred_class,
    ci_halfwidth`` rows."""
    import csv

    ids = np.arange(pred.n_nodes) if node_ids is None else np.asarray(node_ids)
    p_std = pred.predicted_std()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "p1_mean", "p2_mean", "p3_mean",
                         "p_pred_std", "pred_class", "ci_halfwidth"])
        for row, node in enumerate(ids):
            writer.writerow([int(node),
                             repr(float(pred.mean[row, 0])),
                             repr(float(pred.mean[row, 1])),
                             repr(float(pred.mean[row, 2])),
                             repr(float(p_std[row])),
                             int(pred.predicted_class[row]),
                             repr(float(pred.ci_halfwidth[row]))])
