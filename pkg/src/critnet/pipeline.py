"""End-to-end experiment orchestration, metrics, and the speed benchmark.

The full run: generate (or load) an observed graph, label every node with
the exact removal oracle, reveal labels only for a train split, train the
inductive classifier on the observed graph, re-estimate the graph from
embedding distances, retrain on the estimated graph, and produce
uncertainty-quantified predictions for the held-out nodes.  Every stage
persists its artifacts; reports are split into a deterministic part
(report.json, CSVs) and wall-clock timings (timings.json).
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParameterError, StageError
from .graph import (
    Graph,
    add_noise_links,
    compute_features,
    generate_power_law_cluster,
    graph_to_json,
    load_edge_list,
    save_edge_list,
)
from .graph_learning import SmoothGraphLearner, save_solver_trace
from .robustness import criticality_scores, save_criticality_csv
from .sage import SageClassifier, mc_dropout_predict, save_checkpoint, save_prediction_csv
from .validation import as_seed_sequence, check_class_labels, check_probability

EVAL_GRAPH_CHOICES = ("estimated", "observed")


@dataclass
class ExperimentConfig:
    """Everything a full run needs; all randomness derives from ``seed``."""

    n: int = 300
    m: int = 1
    p: float = 0.1
    seed: int = 0
    graph_path: str | None = None      # load instead of generating
    train_fraction: float = 0.6
    noise_fractions: tuple[float, ...] = ()
    # classifier hyperparameters
    learning_rate: float = 1e-2
    epochs: int = 300
    dropout_rate: float = 0.5
    class_weights: tuple[float, ...] = (100.0, 50.0, 1.0)
    early_stop_patience: int = 50
    early_stop_rtol: float = 1e-5
    # graph learning
    alpha: float = 1.0
    beta: float = 0.5
    gl_max_iters: int = 5000
    gl_tolerance: float = 1e-10
    gl_kkt_tol: float = 1e-7
    sparsify_ratio: float = 0.05
    # Monte-Carlo prediction
    mc_samples: int = 100
    eval_graph: str = "estimated"
    # execution
    out_dir: str = "runs/exp"
    n_jobs: int = 1

    def __post_init__(self):
        check_probability(self.train_fraction, "train_fraction",
                          inclusive_low=False, inclusive_high=False)
        if self.eval_graph not in EVAL_GRAPH_CHOICES:
            raise ConfigError(f"eval_graph must be one of {EVAL_GRAPH_CHOICES}")
        for frac in self.noise_fractions:
            check_probability(frac, "noise fraction", inclusive_low=False)

    def classifier(self) -> SageClassifier:
        return SageClassifier(learning_rate=self.learning_rate, epochs=self.epochs,
                              dropout_rate=self.dropout_rate,
                              class_weights=tuple(self.class_weights),
                              early_stop_patience=self.early_stop_patience,
                              early_stop_rtol=self.early_stop_rtol, seed=self.seed)

    def graph_learner(self) -> SmoothGraphLearner:
        return SmoothGraphLearner(alpha=self.alpha, beta=self.beta,
                                  max_iters=self.gl_max_iters,
                                  tolerance=self.gl_tolerance,
                                  kkt_tol=self.gl_kkt_tol,
                                  sparsify_ratio=self.sparsify_ratio)


_CONFIG_LIST_KEYS = {"noise_fractions", "class_weights"}
_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse the ``key = value`` experiment file format.

    One setting per line; ``#`` starts a comment; list values are
    comma-separated.  Unknown keys are rejected.
    """
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"line {lineno}: unknown setting {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    try:
        return ExperimentConfig(**values)
    except (ParameterError, ConfigError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _parse_value(key: str, val: str):
    if key in _CONFIG_LIST_KEYS:
        parts = [p.strip() for p in val.split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    ftype = _CONFIG_FIELDS[key].type
    if val.lower() in ("none", ""):
        return None
    if "int" in str(ftype):
        return int(val)
    if "float" in str(ftype):
        return float(val)
    return val


def load_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text())


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["noise_fractions"] = list(cfg.noise_fractions)
    out["class_weights"] = list(cfg.class_weights)
    return out


def split_nodes(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, exhaustive, uniform-random train/test node split (seeded)."""
    check_probability(train_fraction, "train_fraction",
                      inclusive_low=False, inclusive_high=False)
    rng = np.random.default_rng(as_seed_sequence(seed, 17))
    perm = rng.permutation(n)
    n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass(frozen=True)
class EvalReport:
    """Classification metrics; confusion rows are true classes 1..3."""

    accuracy: float
    precision: tuple[float, float, float]
    recall: tuple[float, float, float]
    confusion: tuple = field(repr=False)
    undefined_precision: tuple[int, ...] = ()
    undefined_recall: tuple[int, ...] = ()
    n_evaluated: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": list(self.precision),
            "recall": list(self.recall),
            "confusion": [list(row) for row in self.confusion],
            "undefined_precision": list(self.undefined_precision),
            "undefined_recall": list(self.undefined_recall),
            "n_evaluated": self.n_evaluated,
        }


def evaluate(predicted, true) -> EvalReport:
    """Accuracy, per-class precision/recall, and the 3x3 confusion matrix.

    Classes with no predictions (or no true members) get precision
    (respectively recall) 0 with the class listed in the undefined flags.
    """
    predicted = check_class_labels(predicted)
    true = check_class_labels(true)
    if predicted.shape != true.shape:
        raise ParameterError("predicted and true label arrays differ in length")
    if len(true) == 0:
        raise ParameterError("nothing to evaluate")
    confusion = np.zeros((3, 3), dtype=int)
    np.add.at(confusion, (true - 1, predicted - 1), 1)
    accuracy = float(np.trace(confusion)) / len(true)
    precision, recall = [], []
    undef_p, undef_r = [], []
    for c in range(3):
        col = confusion[:, c].sum()
        row = confusion[c, :].sum()
        if col == 0:
            undef_p.append(c + 1)
            precision.append(0.0)
        else:
            precision.append(float(confusion[c, c]) / col)
        if row == 0:
            undef_r.append(c + 1)
            recall.append(0.0)
        else:
            recall.append(float(confusion[c, c]) / row)
    return EvalReport(accuracy=accuracy, precision=tuple(precision),
                      recall=tuple(recall),
                      confusion=tuple(tuple(int(x) for x in row) for row in confusion),
                      undefined_precision=tuple(undef_p),
                      undefined_recall=tuple(undef_r), n_evaluated=len(true))


@dataclass
class PipelineResult:
    """In-memory view of a finished run (everything is also on disk)."""

    config: ExperimentConfig
    observed_graph: Graph
    estimated_graph: Graph
    truth_labels: np.ndarray
    train_nodes: np.ndarray
    test_nodes: np.ndarray
    classifier: "SageClassifier"
    mc_prediction: object
    ensemble_report: EvalReport
    point_report: EvalReport
    noise_reports: list[dict]
    report: dict
    timings: dict


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    """Execute the full pipeline and persist all artifacts under out_dir.

    Stage order: generate, oracle, split, train-observed, distances,
    learn-graph, train-estimated, predict, evaluate.  A failure raises
    :class:`StageError` naming the stage; artifacts persisted so far stay
    on disk.  report.json is byte-deterministic for a fixed config;
    timings.json holds the wall-clock numbers.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    captured: list[str] = []

    def run_stage(name, fn):
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                result = fn()
            for item in caught:
                captured.append(f"{name}: {item.message}")
            return result
        except Exception as exc:
            raise StageError(name, str(exc)) from exc
        finally:
            timings[name] = time.perf_counter() - t0

    def stage_generate():
        if cfg.graph_path:
            g = load_edge_list(cfg.graph_path)
        else:
            g = generate_power_law_cluster(cfg.n, cfg.m, cfg.p, cfg.seed)
        save_edge_list(g, out / "observed.edges")
        (out / "observed.json").write_text(graph_to_json(g))
        return g

    g_obs = run_stage("generate", stage_generate)

    def stage_oracle():
        truth = criticality_scores(g_obs, n_jobs=cfg.n_jobs)
        save_criticality_csv(truth, out / "ground_truth.csv")
        return truth

    truth = run_stage("oracle", stage_oracle)

    def stage_split():
        train, test = split_nodes(g_obs.n_nodes, cfg.train_fraction, cfg.seed)
        np.savetxt(out / "train_nodes.txt", train, fmt="%d")
        np.savetxt(out / "test_nodes.txt", test, fmt="%d")
        return train, test

    train_nodes, test_nodes = run_stage("split", stage_split)
    # Leakage guard: everything downstream sees labels only through
    # (truth.label, train_nodes); test labels surface again only in evaluate.

    x_obs = compute_features(g_obs)

    def stage_train_observed():
        clf = cfg.classifier().fit(g_obs, x_obs, truth.label, train_nodes)
        save_checkpoint(clf.params_, out / "model_observed.json")
        _save_loss_trace(clf.loss_history_, out / "train_observed_loss.csv")
        return clf

    clf_obs = run_stage("train-observed", stage_train_observed)

    def stage_distances():
        emb = clf_obs.transform(g_obs, x_obs)
        np.savetxt(out / "embeddings.csv", emb, delimiter=",")
        from .graph_learning import distance_matrix

        return distance_matrix(emb)

    z = run_stage("distances", stage_distances)

    def stage_learn_graph():
        learner = cfg.graph_learner().fit(z)
        g_est = learner.to_graph()
        save_edge_list(g_est, out / "estimated.edges")
        save_solver_trace(learner.trace_, out / "solver_trace.csv")
        return learner, g_est

    learner, g_est = run_stage("learn-graph", stage_learn_graph)
    x_est = compute_features(g_est)

    def stage_train_estimated():
        clf = cfg.classifier().fit(g_est, x_est, truth.label, train_nodes)
        save_checkpoint(clf.params_, out / "model_estimated.json")
        _save_loss_trace(clf.loss_history_, out / "train_estimated_loss.csv")
        return clf

    clf_est = run_stage("train-estimated", stage_train_estimated)

    eval_g, eval_x = (g_est, x_est) if cfg.eval_graph == "estimated" else (g_obs, x_obs)

    def stage_predict():
        mc = clf_est.mc_predict(eval_g, eval_x, n_samples=cfg.mc_samples)
        point = clf_est.predict(eval_g, eval_x)
        save_prediction_csv(mc, out / "predictions.csv")
        return mc, point

    mc_pred, point_pred = run_stage("predict", stage_predict)

    def stage_evaluate():
        y_test = truth.label[test_nodes]
        ens = evaluate(mc_pred.predicted_class[test_nodes], y_test)
        pnt = evaluate(point_pred[test_nodes], y_test)
        noise_blocks = []
        if cfg.noise_fractions:
            # Noise robustness compares like with like: the fixed trained
            # model reading the observed graph vs noisy copies of it.
            base_mc = clf_est.mc_predict(g_obs, x_obs, n_samples=cfg.mc_samples)
            base_point = clf_est.predict(g_obs, x_obs)
            base_ens_report = evaluate(base_mc.predicted_class[test_nodes], y_test)
            base_point_report = evaluate(base_point[test_nodes], y_test)
            for k, frac in enumerate(cfg.noise_fractions):
                noise_seed = int(as_seed_sequence(cfg.seed, 300 + k).generate_state(1)[0])
                g_noise, skipped = add_noise_links(g_obs, frac, noise_seed)
                x_noise = compute_features(g_noise)
                mc_noise = clf_est.mc_predict(g_noise, x_noise, n_samples=cfg.mc_samples)
                point_noise = clf_est.predict(g_noise, x_noise)
                noise_blocks.append({
                    "fraction": frac,
                    "n_edges": g_noise.edge_count,
                    "skipped": skipped,
                    "baseline_ensemble": base_ens_report.to_dict(),
                    "baseline_point": base_point_report.to_dict(),
                    "ensemble": evaluate(mc_noise.predicted_class[test_nodes], y_test).to_dict(),
                    "point": evaluate(point_noise[test_nodes], y_test).to_dict(),
                })
        return ens, pnt, noise_blocks

    ensemble_report, point_report, noise_blocks = run_stage("evaluate", stage_evaluate)

    class_counts = np.bincount(truth.label, minlength=4)[1:]
    report = {
        "config": config_to_dict(cfg),
        "dataset": {
            "n_nodes": g_obs.n_nodes,
            "n_edges": g_obs.edge_count,
            "class_counts": [int(c) for c in class_counts],
            "train_size": int(len(train_nodes)),
            "test_size": int(len(test_nodes)),
        },
        "estimated_graph": {
            "n_edges": g_est.edge_count,
            "n_isolated": int(np.sum(g_est.degrees() == 0.0)),
            "objective": learner.objective_,
            "kkt_residual": learner.kkt_residual_,
            "n_iters": learner.n_iters_,
        },
        "evaluation": {
            "ensemble": ensemble_report.to_dict(),
            "point": point_report.to_dict(),
            "noise": noise_blocks,
        },
        "warnings": captured,
    }
    _write_json(out / "report.json", report)
    _write_json(out / "timings.json", {"stage_seconds": timings})
    return PipelineResult(config=cfg, observed_graph=g_obs, estimated_graph=g_est,
                          truth_labels=truth.label, train_nodes=train_nodes,
                          test_nodes=test_nodes, classifier=clf_est,
                          mc_prediction=mc_pred, ensemble_report=ensemble_report,
                          point_report=point_report, noise_reports=noise_blocks,
                          report=report, timings=timings)


def _save_loss_trace(history: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            fh.write(f"{epoch},{loss!r}\n")


@dataclass(frozen=True)
class BenchmarkResult:
    oracle_seconds: float
    inference_seconds: float
    ratio: float
    n_jobs: int
    mc_samples: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def benchmark_speedup(g: Graph, layers, mc_samples: int = 100, rate: float = 0.5,
                      seed: int = 0, n_jobs: int = 1) -> BenchmarkResult:
    """Wall-clock the exhaustive oracle against one MC-dropout prediction.

    Both sides run under the same process/thread budget (``n_jobs`` for the
    oracle fan-out; inference is single-process either way).
    """
    features = compute_features(g)
    t0 = time.perf_counter()
    criticality_scores(g, n_jobs=n_jobs)
    oracle_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    mc_dropout_predict(g, features, layers, n_samples=mc_samples, rate=rate, seed=seed)
    inference_s = time.perf_counter() - t0
    return BenchmarkResult(oracle_seconds=oracle_s, inference_seconds=inference_s,
                           ratio=oracle_s / max(inference_s, 1e-12),
                           n_jobs=n_jobs, mc_samples=mc_samples)
