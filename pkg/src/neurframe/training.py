"""Self-supervised losses over the tet samples and the training loop."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .features import FeatureGrid, FeatureSet
from .mesh import BoundarySamples, DualGraph, TetMesh, build_boundary_samples, build_dual_graph
from .sh_frame import SQRT_7_12, alignment_rows
from .siren import AdamState, MlpParams, adam_step, backward, forward, init_params


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_s: float = 1.0
    lambda_b: float = 20.0
    lambda_f: float = 1.0
    sigma: float = 10.0
    iterations: int = 10_000
    lr: float = 5e-5
    seed: int = 0
    batch_edges: int = 0
    batch_boundary: int = 0
    batch_points: int = 0
    log_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if min(self.lambda_s, self.lambda_b, self.lambda_f) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.lr > 0 or self.sigma < 0:
            raise ValueError("lr must be positive and sigma non-negative")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossReport:
    iteration: int
    smoothness: float
    boundary: float
    feature: float
    total: float


@dataclass
class TrainingData:
    """Everything the losses need, precomputed once.

    ``boundary_rows[k]`` is ``e0^T shrot(R_{n_k -> z})`` for boundary sample k
    and ``feature_rows[i]`` the same for the nearest feature direction of
    centroid i.  ``feature_distance`` is NaN-free only when features exist.
    """

    dual: DualGraph
    boundary: BoundarySamples
    boundary_rows: np.ndarray
    features: FeatureSet
    feature_distance: np.ndarray
    feature_rows: np.ndarray

    @property
    def centroids(self) -> np.ndarray:
        return self.dual.centroids

    @property
    def has_features(self) -> bool:
        return len(self.features) > 0

    def feature_weights(self, sigma: float) -> np.ndarray:
        return np.exp(-sigma * self.feature_distance)


def prepare_training_data(mesh: TetMesh, features: FeatureSet | None = None) -> TrainingData:
    """Build dual graph, boundary samples and feature tables for a normalized, subdivided mesh."""
    dual = build_dual_graph(mesh)
    boundary = build_boundary_samples(mesh)
    brows = alignment_rows(boundary.normals)
    features = features if features is not None else FeatureSet.empty()
    n = len(dual.centroids)
    if len(features):
        grid = FeatureGrid(features, bounds=(dual.centroids.min(axis=0), dual.centroids.max(axis=0)))
        dist, idx = grid.query_many(dual.centroids)
        frows = alignment_rows(features.directions[idx])
    else:
        dist, frows = np.zeros(n), np.zeros((n, 9))
    return TrainingData(dual, boundary, brows, features, dist, frows)


# ---------------------------------------------------------------------------
# loss terms on coefficient arrays


def smoothness_term(q, edges, weights):
    """Mean weighted squared difference over dual edges, with ``dL/dq``."""
    if len(edges) == 0:
        raise ValueError("smoothness loss needs at least one dual edge")
    diff = q[edges[:, 0]] - q[edges[:, 1]]
    n = len(edges)
    value = float(np.sum(weights * np.sum(diff * diff, axis=1)) / n)
    g = 2.0 * weights[:, None] * diff / n
    dq = np.zeros_like(q)
    np.add.at(dq, edges[:, 0], g)
    np.add.at(dq, edges[:, 1], -g)
    return value, dq


def alignment_term(q, rows, weights=None):
    """Mean (optionally weighted) squared alignment residual, with ``dL/dq``."""
    if len(q) == 0:
        raise ValueError("alignment loss needs at least one sample")
    res = SQRT_7_12 - np.sum(rows * q, axis=1)
    w = np.ones(len(q)) if weights is None else weights
    n = len(q)
    value = float(np.sum(w * res * res) / n)
    dq = (-2.0 * w * res / n)[:, None] * rows
    return value, dq


# ---------------------------------------------------------------------------
# losses on parameters


def _subset(n, size, rng):
    if not size or size >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


def loss_smoothness(params: MlpParams, dual: DualGraph, subset=None):
    edges = dual.edges if subset is None else dual.edges[subset]
    weights = dual.weights if subset is None else dual.weights[subset]
    used, local = np.unique(edges, return_inverse=True)
    sample = forward(params, dual.centroids[used])
    value, dq = smoothness_term(sample.q, local.reshape(-1, 2), weights)
    return value, backward(params, sample, dq)


def loss_boundary(params: MlpParams, data: TrainingData, subset=None):
    sel = np.arange(len(data.boundary.tets)) if subset is None else np.asarray(subset)
    sample = forward(params, data.boundary.points[sel])
    value, dq = alignment_term(sample.q, data.boundary_rows[sel])
    return value, backward(params, sample, dq)


def loss_feature(params: MlpParams, data: TrainingData, sigma: float = 10.0, subset=None):
    """Feature alignment term; ``(0.0, zero gradients)`` when there are no features."""
    if not data.has_features:
        return 0.0, params.zeros_like()
    sel = np.arange(len(data.centroids)) if subset is None else np.asarray(subset)
    sample = forward(params, data.centroids[sel])
    value, dq = alignment_term(sample.q, data.feature_rows[sel], data.feature_weights(sigma)[sel])
    return value, backward(params, sample, dq)


def total_loss(params: MlpParams, data: TrainingData, config: TrainConfig, rng=None, iteration: int = 0):
    """Weighted sum of the three terms from a single forward/backward pass.

    With all batch sizes 0 every term uses its full sample set; otherwise
    independent uniform subsets are drawn from ``rng``.
    """
    dual = data.dual
    full = not (config.batch_edges or config.batch_boundary or config.batch_points)
    if not full and rng is None:
        raise ValueError("minibatching needs a random generator")
    e_sel = np.arange(len(dual.edges)) if full else _subset(len(dual.edges), config.batch_edges, rng)
    b_sel = np.arange(len(data.boundary.tets)) if full else _subset(len(data.boundary.tets), config.batch_boundary, rng)
    use_f = data.has_features and config.lambda_f > 0
    p_sel = np.arange(len(data.centroids)) if (full or not use_f) else _subset(len(data.centroids), config.batch_points, rng)

    need = [dual.edges[e_sel].ravel(), data.boundary.tets[b_sel]]
    if use_f:
        need.append(p_sel)
    used, inverse = np.unique(np.concatenate(need), return_inverse=True)
    sample = forward(params, data.centroids[used])
    q = sample.q
    n_e, n_b = 2 * len(e_sel), len(b_sel)
    edge_local = inverse[:n_e].reshape(-1, 2)
    b_local = inverse[n_e:n_e + n_b]

    dq = np.zeros_like(q)
    ls, g = smoothness_term(q, edge_local, dual.weights[e_sel])
    dq += config.lambda_s * g
    lb, gb = alignment_term(q[b_local], data.boundary_rows[b_sel])
    np.add.at(dq, b_local, config.lambda_b * gb)
    lf = 0.0
    if use_f:
        f_local = inverse[n_e + n_b:]
        lf, gf = alignment_term(q[f_local], data.feature_rows[p_sel], data.feature_weights(config.sigma)[p_sel])
        np.add.at(dq, f_local, config.lambda_f * gf)
    total = config.lambda_s * ls + config.lambda_b * lb + config.lambda_f * lf
    report = LossReport(iteration, ls, lb, lf, total)
    return report, backward(params, sample, dq)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: MlpParams
    history: list = field(default_factory=list)


def train(data: TrainingData, config: TrainConfig, params: MlpParams | None = None,
          callback=None, grace: int = 500) -> TrainResult:
    """Adam on the total loss for ``config.iterations`` steps.

    ``callback(iteration, params, report)`` runs after every step (checkpoint
    hooks, progress).  Raises ``DivergenceError`` when the loss turns NaN or
    exceeds ten times its initial value after ``grace`` iterations.
    """
    params = init_params(config.seed) if params is None else params.copy()
    rng = np.random.default_rng(config.seed + 1)
    state = AdamState.for_params(params)
    history = []
    initial = None
    for it in range(config.iterations):
        report, grads = total_loss(params, data, config, rng, iteration=it)
        if not np.isfinite(report.total):
            raise DivergenceError(f"loss is not finite at iteration {it}")
        if initial is None:
            initial = report.total
        elif it >= grace and report.total > 10.0 * initial:
            raise DivergenceError(f"loss {report.total:.4g} exceeds 10x its initial value at iteration {it}")
        if config.log_every and it % config.log_every == 0:
            history.append(report)
        adam_step(params, grads, state, config.lr)
        if callback is not None:
            callback(it, params, report)
    return TrainResult(params, history)


def write_loss_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "L_S", "L_B", "L_F", "total"])
        for r in history:
            w.writerow([r.iteration, repr(r.smoothness), repr(r.boundary), repr(r.feature), repr(r.total)])


def read_loss_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LossReport(int(r["iter"]), float(r["L_S"]), float(r["L_B"]), float(r["L_F"]), float(r["total"])) for r in rows]
